"""
Patch grids, masking and random even partitions
===============================================

Every decision the detector makes is per patch.  This script walks through
the grid data model: splitting an image into patches, hiding some of them,
and dealing the patches into K groups that each produce one incomplete
image.
"""
# %%
# A 224x224 RGB image with 16 px patches gives a 14x14 grid.
import numpy as np

from anosups import synth
from anosups.image import make_incomplete_images, mask_patches, partition_patches, patchify, save_png, unpatchify

image = synth.generate_texture("blotch", 224, 224, 3, seed=1, noise=0.02)
grid = patchify(image, 16)
print("patches:", grid.m, "grid:", grid.rows, "x", grid.cols, "patch array:", grid.patches.shape)

# Index i sits at row i // cols, column i % cols.
print("patch 30 ->", grid.index_to_rc(30), "| (2, 2) ->", grid.rc_to_index(2, 2))

# Reassembling an unmasked grid gives back the exact input.
assert np.array_equal(unpatchify(grid), image)

# %%
# Masking hides a set of patches.  Hidden patches are stored as zeros, so a
# masked grid never carries the pixels it hides.
hidden = mask_patches(grid, [0, 15, 100])
print("masked:", hidden.masked_indices.tolist(), "zero-filled:", not hidden.patches[15].any())

# %%
# Step 1 of the detector deals the patches into K groups of (almost) equal
# size with a seeded shuffle, then builds one incomplete image per group.
for k in (2, 4, 16):
    part = partition_patches(grid.m, k, seed=7)
    sizes = sorted({len(g) for g in part.groups()})
    print(f"K={k:2d}: group sizes {sizes}")

part = partition_patches(grid.m, 2, seed=7)
incomplete = make_incomplete_images(grid, part)
a, b = (set(g.masked_indices.tolist()) for g in incomplete)
print("groups disjoint:", not a & b, "| together cover every patch:", a | b == set(range(grid.m)))

# Save the two halves side by side to look at.
save_png("demo_incomplete_k2.png", np.concatenate([unpatchify(g) for g in incomplete], axis=1))
print("wrote demo_incomplete_k2.png")
