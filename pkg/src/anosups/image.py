"""Images, patch grids, masking and random even partitions.

An image is a ``float64`` array of shape ``(H, W, C)`` with values in
``[0, 1]``.  A :class:`PatchGrid` holds the ``M = (H/P) * (W/P)`` square
patches of an image in row-major order together with a per-patch mask.
Masked patches are stored zero-filled, so a grid never carries the content
it hides.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
from PIL import Image

from .errors import IndexOutOfRange, InvalidK, NonDivisibleDimensions, ShapeMismatch
from .rng import Xoshiro256


def as_image(data) -> np.ndarray:
    """Validate and return an ``(H, W, C)`` float64 image in ``[0, 1]``.

    2-D input is treated as a single-channel image.
    """
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ShapeMismatch(f"expected (H, W, C) with C in {{1, 3}}, got {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min(initial=0.0) < 0.0 or arr.max(initial=0.0) > 1.0:
        raise ValueError("image intensities must lie in [0, 1]")
    return arr


def load_png(path) -> np.ndarray:
    """Read an 8-bit grayscale or RGB PNG as an image scaled by 1/255."""
    with Image.open(path) as im:
        if im.mode in ("RGBA", "LA", "PA") or "transparency" in im.info:
            raise ValueError(f"{path}: alpha channels are not supported")
        if im.mode == "L":
            arr = np.asarray(im, dtype=np.uint8)[:, :, None]
        elif im.mode == "RGB":
            arr = np.asarray(im, dtype=np.uint8)
        elif im.mode == "P":
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
        else:
            raise ValueError(f"{path}: unsupported PNG mode {im.mode!r}")
    return arr.astype(np.float64) / 255.0


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path, image: np.ndarray) -> None:
    arr = to_uint8(image)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(arr).save(path, optimize=False)


def save_mask_png(path, mask: np.ndarray) -> None:
    """Write a binary mask as 8-bit grayscale: 255 anomalous, 0 normal."""
    Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)).save(path)


def load_mask_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 127


def center_crop(image: np.ndarray, patch_size: int) -> np.ndarray:
    """Crop the largest centred region whose sides are multiples of ``patch_size``."""
    h, w = image.shape[:2]
    nh, nw = h - h % patch_size, w - w % patch_size
    if nh == 0 or nw == 0:
        raise NonDivisibleDimensions(f"{h}x{w} is smaller than one {patch_size}px patch")
    top, left = (h - nh) // 2, (w - nw) // 2
    return image[top:top + nh, left:left + nw]


def resize(image: np.ndarray, height: int, width: int) -> np.ndarray:
    arr = to_uint8(image)
    mode = "L" if arr.shape[2] == 1 else "RGB"
    src = Image.fromarray(arr[:, :, 0] if mode == "L" else arr, mode)
    out = np.asarray(src.resize((width, height), Image.BILINEAR), dtype=np.float64) / 255.0
    return out[:, :, None] if out.ndim == 2 else out


@dataclass(frozen=True, eq=False)
class PatchGrid:
    """Row-major patch decomposition of one image.

    ``patches`` has shape ``(M, P, P, C)`` and ``mask[i]`` is True when
    patch ``i`` is hidden.  Both arrays are read-only.
    """

    patches: np.ndarray
    mask: np.ndarray
    rows: int
    cols: int

    def __post_init__(self):
        self.patches.setflags(write=False)
        self.mask.setflags(write=False)

    @property
    def patch_size(self) -> int:
        return self.patches.shape[1]

    @property
    def channels(self) -> int:
        return self.patches.shape[3]

    @property
    def m(self) -> int:
        return self.rows * self.cols

    @property
    def shape(self) -> tuple[int, int, int, int]:
        """Geometry tuple ``(P, C, rows, cols)``."""
        return (self.patch_size, self.channels, self.rows, self.cols)

    @property
    def masked_indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    @property
    def visible_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.mask)

    def index_to_rc(self, i: int) -> tuple[int, int]:
        if not 0 <= i < self.m:
            raise IndexOutOfRange(f"patch index {i} outside 0..{self.m - 1}")
        return divmod(int(i), self.cols)

    def rc_to_index(self, row: int, col: int) -> int:
        if not (0 <= row < self.rows and 0 <= col < self.cols):
            raise IndexOutOfRange(f"({row}, {col}) outside {self.rows}x{self.cols} grid")
        return row * self.cols + col

    def __eq__(self, other):
        if not isinstance(other, PatchGrid):
            return NotImplemented
        return (
            self.rows == other.rows
            and self.cols == other.cols
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.patches, other.patches)
        )


def patchify(image: np.ndarray, patch_size: int) -> PatchGrid:
    """Split an image into non-overlapping ``patch_size`` squares, all visible."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[:, :, None]
    h, w, c = image.shape
    p = int(patch_size)
    if p < 1 or h % p or w % p:
        raise NonDivisibleDimensions(f"image {h}x{w} is not divisible into {p}px patches")
    rows, cols = h // p, w // p
    patches = image.reshape(rows, p, cols, p, c).transpose(0, 2, 1, 3, 4).reshape(rows * cols, p, p, c)
    return PatchGrid(np.ascontiguousarray(patches), np.zeros(rows * cols, dtype=bool), rows, cols)


def unpatchify(grid: PatchGrid) -> np.ndarray:
    """Reassemble a grid into an image; masked patches render as zeros."""
    p, c = grid.patch_size, grid.channels
    data = np.where(grid.mask[:, None, None, None], 0.0, grid.patches)
    return data.reshape(grid.rows, grid.cols, p, p, c).transpose(0, 2, 1, 3, 4).reshape(
        grid.rows * p, grid.cols * p, c
    )


def patch_indices_to_mask(indices: Iterable[int], grid_shape: tuple[int, int], patch_size: int) -> np.ndarray:
    """Pixel mask covering the ``P x P`` blocks of the given patch indices."""
    rows, cols = grid_shape
    flags = np.zeros(rows * cols, dtype=bool)
    flags[np.asarray(list(indices), dtype=np.int64)] = True
    block = flags.reshape(rows, cols)
    return np.kron(block, np.ones((patch_size, patch_size), dtype=bool)).astype(bool)


def mask_to_patch_indices(mask: np.ndarray, patch_size: int) -> set[int]:
    """Indices of patches containing at least one True pixel of ``mask``."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    if h % patch_size or w % patch_size:
        raise NonDivisibleDimensions(f"mask {h}x{w} is not divisible into {patch_size}px patches")
    rows, cols = h // patch_size, w // patch_size
    hit = mask.reshape(rows, patch_size, cols, patch_size).any(axis=(1, 3))
    return {int(i) for i in np.flatnonzero(hit.ravel())}


def mask_patches(grid: PatchGrid, indices: Iterable[int]) -> PatchGrid:
    """Return a copy of ``grid`` with exactly ``indices`` masked and zero-filled."""
    idx = np.asarray(sorted({int(i) for i in indices}), dtype=np.int64)
    if idx.size and (idx[0] < 0 or idx[-1] >= grid.m):
        raise IndexOutOfRange(f"patch indices must lie in 0..{grid.m - 1}")
    mask = np.zeros(grid.m, dtype=bool)
    mask[idx] = True
    patches = grid.patches.copy()
    patches[mask] = 0.0
    return PatchGrid(patches, mask, grid.rows, grid.cols)


@dataclass(frozen=True, eq=False)
class Partition:
    """Assignment of ``m`` patches to ``k`` groups (0-based group labels)."""

    k: int
    assignment: np.ndarray
    seed: int

    def __post_init__(self):
        self.assignment.setflags(write=False)

    @property
    def m(self) -> int:
        return len(self.assignment)

    def group(self, g: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == g)

    def groups(self) -> list[np.ndarray]:
        return [self.group(g) for g in range(self.k)]

    def __eq__(self, other):
        if not isinstance(other, Partition):
            return NotImplemented
        return self.k == other.k and np.array_equal(self.assignment, other.assignment)


def partition_patches(m: int, k: int, seed: int) -> Partition:
    """Random even partition of ``0..m-1`` into ``k`` groups.

    The indices are shuffled with xoshiro256** and dealt round-robin, so the
    first ``m % k`` groups receive one extra patch.
    """
    if k < 2 or k > m:
        raise InvalidK(f"k must satisfy 2 <= k <= m (got k={k}, m={m})")
    perm = Xoshiro256(seed).permutation(m)
    assignment = np.empty(m, dtype=np.int64)
    assignment[perm] = np.arange(m) % k
    return Partition(k, assignment, int(seed))


def make_incomplete_images(grid: PatchGrid, partition: Partition) -> list[PatchGrid]:
    """One grid per group, with that group's patches masked."""
    if partition.m != grid.m:
        raise ShapeMismatch(f"partition covers {partition.m} patches, grid has {grid.m}")
    return [mask_patches(grid, partition.group(g)) for g in range(partition.k)]
