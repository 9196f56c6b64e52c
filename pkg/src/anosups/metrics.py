"""DICE and patch-level confusion counts."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch


def dice(pred_mask, gt_mask) -> float:
    """``2|A & B| / (|A| + |B|)``, taken as 1 when both masks are empty."""
    a = np.asarray(pred_mask, dtype=bool)
    b = np.asarray(gt_mask, dtype=bool)
    if a.shape != b.shape:
        raise ShapeMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


@dataclass(frozen=True)
class EvalResult:
    tp: int
    fp: int
    fn: int
    tn: int
    dice: float = float("nan")

    @property
    def type1_rate(self) -> float:
        d = self.fp + self.tn
        return self.fp / d if d else 0.0

    @property
    def type2_rate(self) -> float:
        d = self.fn + self.tp
        return self.fn / d if d else 0.0


def patch_confusion(pred_patches, gt_patches, m: int, dice_value: float = float("nan")) -> EvalResult:
    pred = {int(i) for i in pred_patches}
    gt = {int(i) for i in gt_patches}
    for s in (pred, gt):
        if any(not 0 <= i < m for i in s):
            raise ValueError(f"patch index outside 0..{m - 1}")
    tp = len(pred & gt)
    fp = len(pred - gt)
    fn = len(gt - pred)
    return EvalResult(tp, fp, fn, m - tp - fp - fn, dice_value)


CSV_FIELDS = ["image", "dice", "tp", "fp", "fn", "tn", "type1_rate", "type2_rate"]


def evaluation_csv(rows: list[tuple[str, EvalResult]]) -> str:
    """Per-image rows followed by ``mean`` and ``std`` rows (population std)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)

    def fmt(v):
        return f"{v:.6f}" if isinstance(v, float) else str(v)

    table = []
    for name, r in rows:
        vals = [r.dice, r.tp, r.fp, r.fn, r.tn, r.type1_rate, r.type2_rate]
        table.append(vals)
        w.writerow([name] + [fmt(v) for v in vals])
    if table:
        arr = np.asarray(table, dtype=np.float64)
        w.writerow(["mean"] + [fmt(float(v)) for v in arr.mean(0)])
        w.writerow(["std"] + [fmt(float(v)) for v in arr.std(0)])
    return buf.getvalue()
