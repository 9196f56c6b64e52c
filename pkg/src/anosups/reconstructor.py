"""Patch reconstructors: trainable masked attention plus two analytic baselines.

All three kinds share one interface: given a partially masked
:class:`~anosups.image.PatchGrid`, predict the pixels of masked patches
from the visible ones.

``attention``
    the numpy transformer in :mod:`anosups.attention`.
``pca``
    gappy PCA over whole images: a mean image and an orthonormal rank-``r``
    basis; coefficients are fitted by least squares on the visible pixels.
``positional-mean``
    the mean training patch at each grid position, ignoring context.
"""
from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import attention
from .errors import DivergedTraining, GeometryMismatch, TargetNotMasked
from .image import PatchGrid, mask_patches, patchify
from .rng import derive_seed, numpy_rng

log = logging.getLogger(__name__)

KINDS = ("attention", "pca", "positional-mean")
MAGIC = b"ANOSUPS1"


@dataclass
class TrainConfig:
    k_for_masking: int = 2
    epochs: int = 100
    batch_size: int = 8
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    dim: int = 64
    heads: int = 4
    blocks: int = 2
    mlp_ratio: int = 2
    rank: int = 8
    holdout_fraction: float = 0.1
    momentum: float = 0.9
    dtype: str = "float32"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if self.k_for_masking < 2:
            raise ValueError("k_for_masking must be >= 2")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def alpha(self) -> float:
        """Fraction of patches left visible in each training sample."""
        return 1.0 - 1.0 / self.k_for_masking


@dataclass(eq=False)
class ReconstructorModel:
    kind: str
    patch_size: int
    channels: int
    rows: int
    cols: int
    params: dict[str, np.ndarray]
    hyper: dict = field(default_factory=dict)
    history: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.rows * self.cols

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    @property
    def geometry(self) -> tuple[int, int, int, int]:
        return (self.patch_size, self.channels, self.rows, self.cols)

    @property
    def attention_config(self) -> attention.AttentionConfig:
        h = self.hyper
        return attention.AttentionConfig(h["dim"], h["heads"], h["blocks"], h["mlp_ratio"])

    def param_order(self) -> list[str]:
        if self.kind == "attention":
            return attention.param_names(self.attention_config)
        if self.kind == "pca":
            return ["mean", "basis"]
        return ["mean"]

    def check_grid(self, grid: PatchGrid) -> None:
        if grid.shape != self.geometry:
            raise GeometryMismatch(
                f"model geometry (P, C, rows, cols)={self.geometry} but grid has {grid.shape}"
            )

    def predict_all(self, grid: PatchGrid) -> np.ndarray:
        """Unclamped predictions ``(M, D)`` for every position of ``grid``."""
        self.check_grid(grid)
        visible = ~grid.mask
        if not visible.any():
            raise ValueError("cannot reconstruct from a grid with no visible patch")
        x = grid.patches.reshape(grid.m, -1)
        if self.kind == "attention":
            y, _ = attention.forward(self.params, self.attention_config, x[None], visible[None])
            return y[0]
        if self.kind == "pca":
            return _pca_predict(self.params["mean"], self.params["basis"], x, visible)
        return self.params["mean"].copy()


# -- sampling -----------------------------------------------------------------

def visible_count(m: int, alpha: float) -> int:
    """``round(alpha * m)`` kept inside ``[1, m - 1]``."""
    return int(min(max(math.floor(alpha * m + 0.5), 1), m - 1))


def _sample_visible(rng: np.random.Generator, m: int, alpha: float) -> np.ndarray:
    vis = np.zeros(m, dtype=bool)
    vis[rng.permutation(m)[: visible_count(m, alpha)]] = True
    return vis


def generate_training_sample(image: np.ndarray, patch_size: int, alpha: float, seed: int):
    """One masked training grid and the indices it asks the model to fill in."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie strictly between 0 and 1")
    grid = patchify(image, patch_size)
    vis = _sample_visible(numpy_rng(seed), grid.m, alpha)
    targets = np.flatnonzero(~vis)
    return mask_patches(grid, targets), targets


# -- prediction ---------------------------------------------------------------

def reconstruct_patches(model: ReconstructorModel, grid: PatchGrid, targets: Iterable[int]) -> dict[int, np.ndarray]:
    """Predicted ``(P, P, C)`` patch for each target, clamped to ``[0, 1]``."""
    targets = sorted({int(t) for t in targets})
    model.check_grid(grid)
    for t in targets:
        if not (0 <= t < grid.m and grid.mask[t]):
            raise TargetNotMasked(f"patch {t} is not masked in the input grid")
    if not targets:
        return {}
    y = np.clip(model.predict_all(grid), 0.0, 1.0)
    shape = (model.patch_size, model.patch_size, model.channels)
    return {t: y[t].reshape(shape) for t in targets}


def _pca_predict(mean: np.ndarray, basis: np.ndarray, x: np.ndarray, visible: np.ndarray) -> np.ndarray:
    m, d = mean.shape
    r = basis.shape[1]
    resid = (x - mean)[visible].ravel()
    bv = basis.reshape(m, d, r)[visible].reshape(-1, r)
    coef, *_ = np.linalg.lstsq(bv, resid, rcond=None)
    return mean + (basis @ coef).reshape(m, d)


# -- training -----------------------------------------------------------------

def _stack(images: Sequence[np.ndarray], patch_size: int):
    grids = [patchify(im, patch_size) for im in images]
    shapes = {g.shape for g in grids}
    if len(shapes) != 1:
        raise GeometryMismatch(f"training images disagree on geometry: {sorted(shapes)}")
    return np.stack([g.patches.reshape(g.m, -1) for g in grids]), grids[0].shape


def train(config: TrainConfig, kind: str, train_images: Sequence[np.ndarray], patch_size: int = 16) -> ReconstructorModel:
    """Fit a reconstructor of the given kind on anomaly-free images."""
    if kind not in KINDS:
        raise ValueError(f"unknown reconstructor kind {kind!r}")
    if not train_images:
        raise ValueError("training set is empty")
    data, (p, c, rows, cols) = _stack(train_images, patch_size)
    if kind == "positional-mean":
        return ReconstructorModel(kind, p, c, rows, cols, {"mean": data.mean(0)})
    if kind == "pca":
        return _train_pca(config, data, (p, c, rows, cols))
    return _train_attention(config, data, (p, c, rows, cols))


def _train_pca(config: TrainConfig, data: np.ndarray, geom) -> ReconstructorModel:
    p, c, rows, cols = geom
    n, m, d = data.shape
    mean = data.mean(0)
    flat = (data - mean).reshape(n, -1)
    r = max(1, min(config.rank, n))
    _, _, vt = np.linalg.svd(flat, full_matrices=False)
    basis = np.ascontiguousarray(vt[:r].T)
    return ReconstructorModel("pca", p, c, rows, cols, {"mean": mean, "basis": basis}, {"rank": r})


class _Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= (lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)).astype(params[k].dtype)


class _SGD:
    def __init__(self, params, lr, momentum=0.9):
        self.momentum = momentum
        self.buf = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads, lr):
        for k, g in grads.items():
            self.buf[k] = self.momentum * self.buf[k] + g
            params[k] -= (lr * self.buf[k]).astype(params[k].dtype)


def _split_holdout(n: int, fraction: float, rng: np.random.Generator):
    if n < 2:
        idx = np.arange(n)
        return idx, idx
    n_hold = max(1, int(round(n * fraction)))
    order = rng.permutation(n)
    return np.sort(order[n_hold:]), np.sort(order[:n_hold])


def _eval_masked_mse(params, cfg, x, vis) -> float:
    y, _ = attention.forward(params, cfg, x, vis)
    return float(attention.masked_mse(y, x, ~vis)[0])


def _train_attention(config: TrainConfig, data: np.ndarray, geom) -> ReconstructorModel:
    p, c, rows, cols = geom
    n, m, d = data.shape
    cfg = attention.AttentionConfig(config.dim, config.heads, config.blocks, config.mlp_ratio)
    dtype = np.dtype(config.dtype)
    params = attention.init_params(cfg, m, d, rows, cols, numpy_rng(derive_seed(config.seed, "init")))
    params = {k: v.astype(dtype) for k, v in params.items()}
    data = data.astype(dtype)
    rng = numpy_rng(derive_seed(config.seed, "batches"))
    train_idx, hold_idx = _split_holdout(n, config.holdout_fraction, numpy_rng(derive_seed(config.seed, "holdout")))

    hold_rng = numpy_rng(derive_seed(config.seed, "holdout-masks"))
    hold_x = data[hold_idx]
    hold_vis = np.stack([_sample_visible(hold_rng, m, config.alpha) for _ in hold_idx])

    opt = _Adam(params, config.learning_rate) if config.optimizer == "adam" else _SGD(
        params, config.learning_rate, config.momentum
    )
    steps_per_epoch = max(1, math.ceil(len(train_idx) / config.batch_size))
    total = steps_per_epoch * config.epochs
    init_hold = _eval_masked_mse(params, cfg, hold_x, hold_vis)
    best = (init_hold, {k: v.copy() for k, v in params.items()}, 0)
    curve, hold_curve = [], []
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(train_idx)
        losses = []
        for s in range(steps_per_epoch):
            batch = order[s * config.batch_size:(s + 1) * config.batch_size]
            x = data[batch]
            vis = np.stack([_sample_visible(rng, m, config.alpha) for _ in batch])
            loss, grads = attention.loss_and_grad(params, cfg, x, vis)
            if not math.isfinite(loss):
                raise DivergedTraining(f"loss became {loss} at epoch {epoch}")
            # cosine decay to 10% of the base rate
            lr = config.learning_rate * (0.1 + 0.9 * 0.5 * (1 + math.cos(math.pi * step / total)))
            opt.step(params, grads, lr)
            losses.append(loss)
            step += 1
        curve.append(float(np.mean(losses)))
        hold = _eval_masked_mse(params, cfg, hold_x, hold_vis)
        hold_curve.append(hold)
        if hold <= best[0]:
            best = (hold, {k: v.copy() for k, v in params.items()}, epoch + 1)
        log.info("epoch %d loss %.6f holdout %.6f", epoch + 1, curve[-1], hold)

    hyper = {"dim": cfg.dim, "heads": cfg.heads, "blocks": cfg.blocks, "mlp_ratio": cfg.mlp_ratio}
    history = {
        "train_loss": curve,
        "holdout_loss": hold_curve,
        "holdout_initial": init_hold,
        "holdout_best": best[0],
        "best_epoch": best[2],
        "config": {k: v for k, v in vars(config).items()},
    }
    final = {k: v.astype(np.float64) for k, v in best[1].items()}
    return ReconstructorModel("attention", p, c, rows, cols, final, hyper, history)


def model_gradient(model: ReconstructorModel, batch: np.ndarray, visible: np.ndarray):
    """Loss and analytic gradient of the masked MSE for an attention model.

    ``batch`` is ``(B, M, D)`` flattened patches and ``visible`` ``(B, M)``.
    """
    if model.kind != "attention":
        raise ValueError("gradients are only defined for the attention kind")
    return attention.loss_and_grad(model.params, model.attention_config, batch, visible)


# -- persistence --------------------------------------------------------------

def _header(model: ReconstructorModel) -> dict:
    return {
        "kind": model.kind,
        "patch_size": model.patch_size,
        "channels": model.channels,
        "rows": model.rows,
        "cols": model.cols,
        "hyper": model.hyper,
        "params": [[name, list(model.params[name].shape)] for name in model.param_order()],
    }


def save_model(model: ReconstructorModel, path) -> None:
    """Write the binary model file plus a ``.json`` sidecar with the header."""
    path = Path(path)
    header = json.dumps(_header(model), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for name in model.param_order():
            fh.write(np.ascontiguousarray(model.params[name], dtype="<f8").tobytes())
    sidecar = dict(_header(model), history=model.history)
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_model(path) -> ReconstructorModel:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not an ANOSUPS1 model file")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    offset = 12 + hlen
    params = {}
    for name, shape in header["params"]:
        count = int(np.prod(shape)) if shape else 1
        params[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * count
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes")
    return ReconstructorModel(
        header["kind"], header["patch_size"], header["channels"], header["rows"], header["cols"],
        params, header["hyper"],
    )
