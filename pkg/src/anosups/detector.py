"""Two-step suspected-patch anomaly detection.

Step 1 splits the patches of a test image into ``K`` random even groups,
reconstructs each group from an image where only that group is hidden, and
flags every patch whose error exceeds ``q1``.  Step 2 hides all flagged
patches at once, reconstructs them from the remaining (presumed clean)
patches, and keeps those whose error still exceeds ``q2``.
"""
from __future__ import annotations

import json
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import AllPatchesSuspected, ShapeMismatch
from .image import PatchGrid, make_incomplete_images, mask_patches, partition_patches, patch_indices_to_mask, patchify
from .reconstructor import ReconstructorModel, reconstruct_patches

MODES = ("two-step", "one-step")
SCOPE_RATIO = 0.5


class ScopeWarning(UserWarning):
    """Step 1 flagged so many patches that the image is probably out of scope."""


def patch_error(reconstructed: np.ndarray, actual: np.ndarray) -> float:
    """Frobenius norm of the difference over all ``P*P*C`` entries."""
    a = np.asarray(reconstructed, dtype=np.float64)
    b = np.asarray(actual, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"patch shapes differ: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def _errors_for(model, grid: PatchGrid, original: PatchGrid, targets) -> dict[int, float]:
    rec = reconstruct_patches(model, grid, targets)
    return {i: patch_error(p, original.patches[i]) for i, p in rec.items()}


def step1_errors(model: ReconstructorModel, image: np.ndarray, k: int, seed: int, parallel: int = 1) -> np.ndarray:
    """Per-patch Step-1 errors, each patch reconstructed from the image hiding its group.

    ``parallel > 1`` runs the ``K`` reconstructions on a thread pool; the
    result is bit-identical to the sequential order.
    """
    original = patchify(image, model.patch_size)
    model.check_grid(original)
    part = partition_patches(original.m, k, seed)
    incomplete = make_incomplete_images(original, part)

    def run(g):
        return _errors_for(model, incomplete[g], original, part.group(g))

    if parallel > 1:
        with ThreadPoolExecutor(min(parallel, k)) as pool:
            results = list(pool.map(run, range(k)))
    else:
        results = [run(g) for g in range(k)]
    e1 = np.empty(original.m)
    for res in results:
        for i, e in res.items():
            e1[i] = e
    return e1


def suspects_from(e1: np.ndarray, q1: float) -> list[int]:
    return [int(i) for i in np.flatnonzero(np.asarray(e1) > q1)]


def step1_identify_suspects(model, image, k: int, q1: float, seed: int, parallel: int = 1):
    e1 = step1_errors(model, image, k, seed, parallel)
    return e1, suspects_from(e1, q1)


def step2_grid(original: PatchGrid, suspected) -> PatchGrid:
    """The Step-2 input: the test image with every suspected patch hidden."""
    return mask_patches(original, suspected)


def _step2(model, original: PatchGrid, suspected, q2: float):
    suspected = sorted({int(i) for i in suspected})
    if not suspected:
        return {}, [], None
    if len(suspected) >= original.m:
        raise AllPatchesSuspected(f"all {original.m} patches were flagged in Step 1")
    grid = step2_grid(original, suspected)
    if set(grid.visible_indices.tolist()) & set(suspected):
        raise AssertionError("Step-2 input still shows a suspected patch")
    e2 = _errors_for(model, grid, original, suspected)
    return e2, [i for i in suspected if e2[i] > q2], grid


def step2_confirm(model, image, suspected, q2: float):
    """Re-reconstruct suspects from the non-suspected patches; return ``(e2, anomalies)``."""
    e2, anomalies, _ = _step2(model, patchify(image, model.patch_size), suspected, q2)
    return e2, anomalies


def warn_scope(suspected, m: int, ratio: float = SCOPE_RATIO) -> str | None:
    """Warn when more than ``ratio`` of all patches are suspected."""
    n = len(suspected)
    if m and n / m > ratio:
        msg = f"{n}/{m} patches suspected (> {ratio:.0%}); the anomaly may be too large or global for this method"
        warnings.warn(msg, ScopeWarning, stacklevel=2)
        return msg
    return None


@dataclass
class DetectionReport:
    e1: np.ndarray
    suspected: list
    e2: dict
    anomalies: list
    pixel_mask: np.ndarray
    k: int
    seed: int
    q1: float
    q2: float
    mode: str
    timings: dict = field(default_factory=dict)
    step2_visible: list = field(default_factory=list)
    warning: str | None = None
    error: str | None = None

    def to_dict(self, include_timings: bool = False) -> dict:
        """JSON-ready dict; timings are left out unless asked for so reports stay reproducible."""
        out = {
            "mode": self.mode,
            "k": self.k,
            "seed": self.seed,
            "q1": self.q1,
            "q2": self.q2,
            "e1": [float(v) for v in self.e1],
            "suspected": sorted(self.suspected),
            "e2": [[int(i), float(self.e2[i])] for i in sorted(self.e2)],
            "anomalies": sorted(self.anomalies),
            "mask_area": int(self.pixel_mask.sum()),
            "warning": self.warning,
            "error": self.error,
        }
        if include_timings:
            out["timings_ms"] = {k: v * 1000.0 for k, v in self.timings.items()}
        return out

    def to_json(self, include_timings: bool = False) -> str:
        return json.dumps(self.to_dict(include_timings), indent=2, sort_keys=True)


def detect(model: ReconstructorModel, profile, image: np.ndarray, mode: str = "two-step", seed: int = 0,
           parallel: int = 1, scope_ratio: float = SCOPE_RATIO, on_all_suspected: str = "raise") -> DetectionReport:
    """Run the full procedure on one image.

    If Step 1 flags every patch, ``on_all_suspected="raise"`` propagates
    :class:`AllPatchesSuspected`; ``"fallback"`` keeps the Step-1 decision
    and records the error in the report instead.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    k, q1, q2 = profile.k, profile.q1, profile.q2
    t0 = time.perf_counter()
    e1, suspected = step1_identify_suspects(model, image, k, q1, seed, parallel)
    t1 = time.perf_counter()
    message = warn_scope(suspected, len(e1), scope_ratio)
    visible: list = []
    error = None
    if mode == "one-step":
        e2, anomalies = {}, list(suspected)
    else:
        try:
            e2, anomalies, grid = _step2(model, patchify(image, model.patch_size), suspected, q2)
            visible = grid.visible_indices.tolist() if grid is not None else []
        except AllPatchesSuspected as exc:
            if on_all_suspected != "fallback":
                raise
            e2, anomalies, error = {}, list(suspected), str(exc)
    t2 = time.perf_counter()
    mask = patch_indices_to_mask(anomalies, (model.rows, model.cols), model.patch_size)
    return DetectionReport(
        e1=e1, suspected=suspected, e2=e2, anomalies=anomalies, pixel_mask=mask, k=k, seed=seed,
        q1=q1, q2=q2, mode=mode, timings={"step1": t1 - t0, "step2": t2 - t1, "total": t2 - t0},
        step2_visible=visible, warning=message, error=error,
    )
