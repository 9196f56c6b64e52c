"""
Synthetic textures and anomalies with exact ground truth
========================================================

The test corpus is generated: three parametric normal textures, and three
kinds of injected defect (a dark crack, a coloured disk, one or more
holes).  The ground-truth mask is exactly the set of pixels the injection
changed.
"""
# %%
import numpy as np

from anosups import synth
from anosups.image import mask_to_patch_indices, save_mask_png, save_png

tiles = [synth.generate_texture(kind, 112, 112, 3, seed=3, noise=0.02) for kind in synth.TEXTURES]
save_png("demo_textures.png", np.concatenate(tiles, axis=1))
print("textures:", ", ".join(synth.TEXTURES), "-> demo_textures.png")

# %%
# Inject one anomaly of each kind by hand.  AnomalySpec records the geometry;
# inject returns the new image and its mask.
base = synth.generate_texture("blotch", 224, 224, 3, seed=5, noise=0.02)
specs = [
    synth.AnomalySpec("line", [[30, 40], [120, 70]], 3),
    synth.AnomalySpec("color", [[160, 60]], 12, [0.9, 0.15, 0.2]),
    synth.AnomalySpec("hole", [[60, 170], [90, 180]], 6),
]
for spec in specs:
    out = synth.inject(base, spec)
    changed = np.any(out.image != base, axis=2)
    assert np.array_equal(changed, out.gt_mask)
    print(f"{spec.kind:5s}: {int(out.gt_mask.sum()):5d} px, touches {len(mask_to_patch_indices(out.gt_mask, 16))} patches")

# %%
# A full suite: half abnormal (sizes log-spaced from sub-patch to several
# patches, kinds allocated evenly), half normal for false-positive checks.
config = synth.SuiteConfig(n_images=12, seed=2)
suite = synth.build_suite(config)
man = synth.manifest(config, suite)
print("manifest hash:", synth.manifest_hash(man)[:16], "(same seed, same hash)")
for item in suite[:6]:
    print(f"  {item.specs[0].kind:5s} {int(item.gt_mask.sum()):5d} px -> {len(mask_to_patch_indices(item.gt_mask, 16))} patch(es)")

save_png("demo_suite_0.png", suite[0].image)
save_mask_png("demo_suite_0_mask.png", suite[0].gt_mask)
