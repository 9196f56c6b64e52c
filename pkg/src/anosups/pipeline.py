"""Batch helpers shared by the command line and the experiment scripts."""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .calibration import CalibrationProfile, calibrate
from .detector import DetectionReport, detect
from .image import mask_to_patch_indices
from .metrics import EvalResult, dice, patch_confusion
from .rng import derive_seed


def detection_seed(root: int, name: str) -> int:
    """Partition seed for one test image, keyed by its name rather than its position."""
    return derive_seed(root, "detect", name)


def detect_many(model, profile: CalibrationProfile, images: Sequence[np.ndarray], names: Sequence[str],
                mode: str = "two-step", seed: int = 0, jobs: int = 1) -> list[DetectionReport]:
    """Detect on each image; results come back in input order whatever ``jobs`` is."""

    def one(i):
        return detect(model, profile, images[i], mode, detection_seed(seed, names[i]), on_all_suspected="fallback")

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(one, range(len(images))))
    return [one(i) for i in range(len(images))]


def evaluate(report: DetectionReport, gt_mask: np.ndarray, patch_size: int) -> EvalResult:
    m = len(report.e1)
    gt_patches = mask_to_patch_indices(gt_mask, patch_size)
    return patch_confusion(report.anomalies, gt_patches, m, dice(report.pixel_mask, gt_mask))


@dataclass
class AblationRow:
    mode: str
    k: int
    dice_mean: float
    dice_std: float
    repeats: int
    passes_per_image: int
    seconds_per_image: float
    run_means: list


def reconstruction_passes(mode: str, k: int) -> int:
    """Forward passes of the reconstructor per image (Step 2 counted once)."""
    return k + (1 if mode == "two-step" else 0)


def ablation(model, calib_images, test_images, gt_masks, names, ks=(2, 4, 8, 16), repeat: int = 10,
             seed: int = 0, alpha1: float = 0.0, alpha2: float = 0.0, jobs: int = 1,
             inspect=None) -> list[AblationRow]:
    """One-step at the smallest K, then two-step at every K.

    Each repeat re-draws every image's partition from a repeat-specific seed;
    the DICE mean is over images and repeats, and the STD is taken across the
    per-repeat means.  Calibration is redone for each K.  ``inspect``, if
    given, is called with every :class:`DetectionReport` produced.
    """
    ks = sorted(ks)
    plan = [("one-step", ks[0])] + [("two-step", k) for k in ks]
    profiles = {k: calibrate(model, calib_images, k, derive_seed(seed, "calibrate", k), alpha1, alpha2, jobs)
                for k in ks}
    rows = []
    for mode, k in plan:
        run_means, elapsed = [], 0.0
        for r in range(repeat):
            t0 = time.perf_counter()
            reports = detect_many(model, profiles[k], test_images, names, mode, derive_seed(seed, "ablate", r), jobs)
            elapsed += time.perf_counter() - t0
            if inspect is not None:
                for rep in reports:
                    inspect(rep)
            run_means.append(float(np.mean([dice(rep.pixel_mask, gt) for rep, gt in zip(reports, gt_masks)])))
        rows.append(AblationRow(
            mode, k, float(np.mean(run_means)), float(np.std(run_means)), repeat,
            reconstruction_passes(mode, k), elapsed / (repeat * len(test_images)), run_means,
        ))
    return rows


def ablation_csv(rows: list[AblationRow]) -> str:
    """The reproducible part of the ablation table (no wall-clock column)."""
    lines = ["model,k,passes_per_image,dice_mean,dice_std,repeats"]
    for r in rows:
        lines.append(f"{r.mode},{r.k},{r.passes_per_image},{r.dice_mean:.6f},{r.dice_std:.6f},{r.repeats}")
    return "\n".join(lines) + "\n"


def ablation_timing_csv(rows: list[AblationRow]) -> str:
    lines = ["model,k,seconds_per_image"]
    for r in rows:
        lines.append(f"{r.mode},{r.k},{r.seconds_per_image:.6f}")
    return "\n".join(lines) + "\n"
