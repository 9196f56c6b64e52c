"""
One-step versus two-step, and the effect of K
=============================================

Reproduces the structure of the ablation table: the one-step baseline at
K=2, then the two-step method at K = 2, 4, 8, 16.  Each row reports the
mean DICE over the 60-image suite, the STD across repeats that redraw
every partition, and the mean time per image.

Run ``03_reconstructors.py 600`` first for a model that is trained enough
to show the effect.
"""
# %%
from anosups import synth
from anosups.pipeline import ablation, ablation_csv
from anosups.reconstructor import load_model

model = load_model("demo_attention.bin")
config = synth.SuiteConfig(seed=1)
calib = synth.normal_images(config, 20, "calib")
suite = synth.build_suite(config)
names = [f"test_{i:04d}" for i in range(len(suite))]

rows = ablation(model, calib, [s.image for s in suite], [s.gt_mask for s in suite], names,
                ks=(2, 4, 8, 16), repeat=3, seed=0)
print(ablation_csv(rows))
for r in rows:
    print(f"{r.mode:8s} K={r.k:2d}  DICE {100 * r.dice_mean:5.2f}% +- {100 * r.dice_std:4.2f}  {r.seconds_per_image:.3f} s/image")
