"""Reconstruction-error distribution on anomaly-free images and its thresholds."""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptySample
from .rng import derive_seed


def upper_quantile(errors, alpha: float) -> float:
    """Upper-``alpha`` sample quantile of an ascending error list.

    Returns the order statistic of 1-based rank ``ceil((1 - alpha) * n)``,
    so at most a fraction ``alpha`` of the sample lies strictly above it.
    ``alpha = 0`` gives the maximum.
    """
    errors = np.asarray(errors, dtype=np.float64)
    n = errors.size
    if n == 0:
        raise EmptySample("cannot take a quantile of an empty sample")
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    # exact rational ceiling; (1 - alpha) * n in floating point can land a hair above an integer
    rank = math.ceil(round((1.0 - alpha) * n, 9))
    return float(errors[max(rank, 1) - 1])


@dataclass(frozen=True, eq=False)
class CalibrationProfile:
    errors: np.ndarray
    alpha1: float
    alpha2: float
    k: int
    seed: int

    def __post_init__(self):
        if self.errors.size == 0:
            raise EmptySample("calibration produced no errors")
        if np.any(np.diff(self.errors) < 0):
            raise ValueError("calibration errors must be sorted ascending")
        self.errors.setflags(write=False)

    @property
    def q1(self) -> float:
        return upper_quantile(self.errors, self.alpha1)

    @property
    def q2(self) -> float:
        return upper_quantile(self.errors, self.alpha2)

    def with_alphas(self, alpha1: float, alpha2: float) -> "CalibrationProfile":
        return CalibrationProfile(self.errors, alpha1, alpha2, self.k, self.seed)

    def to_dict(self, errors_path: str | None = None) -> dict:
        return {
            "alpha1": self.alpha1,
            "alpha2": self.alpha2,
            "q1": self.q1,
            "q2": self.q2,
            "k": self.k,
            "seed": self.seed,
            "n_errors": int(self.errors.size),
            "errors_path": errors_path,
        }


def image_seed(seed: int, index: int) -> int:
    """Partition seed for the ``index``-th calibration image."""
    return derive_seed(seed, "calibrate", index)


def collect_errors(model, images: Sequence[np.ndarray], k: int, seed: int, jobs: int = 1) -> np.ndarray:
    """Step-1 errors of every patch of every image, concatenated in image order."""
    from .detector import step1_errors

    def one(item):
        i, img = item
        return step1_errors(model, img, k, image_seed(seed, i))

    items = list(enumerate(images))
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            parts = list(pool.map(one, items))
    else:
        parts = [one(it) for it in items]
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts)


def calibrate(model, images: Sequence[np.ndarray], k: int, seed: int, alpha1: float = 0.0,
              alpha2: float = 0.0, jobs: int = 1) -> CalibrationProfile:
    errors = np.sort(collect_errors(model, images, k, seed, jobs))
    return CalibrationProfile(errors, alpha1, alpha2, k, seed)


def save_profile(profile: CalibrationProfile, path) -> None:
    """JSON profile plus a raw little-endian float64 error file next to it."""
    path = Path(path)
    errors_path = path.with_suffix(".errors.f64")
    errors_path.write_bytes(np.ascontiguousarray(profile.errors, dtype="<f8").tobytes())
    path.write_text(json.dumps(profile.to_dict(errors_path.name), indent=2, sort_keys=True))


def load_profile(path) -> CalibrationProfile:
    path = Path(path)
    meta = json.loads(path.read_text())
    errors = np.frombuffer((path.parent / meta["errors_path"]).read_bytes(), dtype="<f8").astype(np.float64)
    if errors.size != meta["n_errors"]:
        raise ValueError(f"{path}: expected {meta['n_errors']} errors, found {errors.size}")
    return CalibrationProfile(errors, meta["alpha1"], meta["alpha2"], meta["k"], meta["seed"])
