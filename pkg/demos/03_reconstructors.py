"""
Training and comparing patch reconstructors
===========================================

The detector needs a model that fills in hidden patches from visible ones.
Three kinds share one interface: the numpy masked-attention model and two
closed-form baselines (gappy PCA and a per-position mean).

Pass an epoch count to train longer, e.g. ``python3 03_reconstructors.py 600``.
The default of 40 epochs finishes in well under a minute.
"""
# %%
import sys

import numpy as np

from anosups import synth
from anosups.image import mask_patches, patchify
from anosups.reconstructor import TrainConfig, reconstruct_patches, save_model, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 40
config = synth.SuiteConfig(seed=1)
train_images = synth.normal_images(config, 60, "train")
held_out = synth.normal_images(config, 5, "calib")

# %%
# Training hides round(M / K) random patches per sample (K=2 here, so half)
# and minimises the squared error on the hidden patches only.
models = {
    "positional-mean": train(TrainConfig(), "positional-mean", train_images),
    "pca": train(TrainConfig(rank=8), "pca", train_images),
    "attention": train(TrainConfig(epochs=epochs, learning_rate=2e-3), "attention", train_images),
}
h = models["attention"].history
print(f"attention: holdout MSE {h['holdout_initial']:.5f} at init -> {h['holdout_best']:.5f} (epoch {h['best_epoch']})")

# %%
# Compare on held-out images: hide the same half of the patches for every
# model and measure the mean squared error on them.
rng = np.random.default_rng(0)
for name, model in models.items():
    errs = []
    for img in held_out:
        grid = patchify(img, 16)
        hidden = rng.permutation(grid.m)[: grid.m // 2]
        rec = reconstruct_patches(model, mask_patches(grid, hidden), hidden)
        errs += [np.mean((rec[i] - grid.patches[i]) ** 2) for i in hidden]
    print(f"{name:16s} masked-patch MSE {np.mean(errs):.5f}")

save_model(models["attention"], "demo_attention.bin")
print("saved demo_attention.bin (+ .json sidecar)")
