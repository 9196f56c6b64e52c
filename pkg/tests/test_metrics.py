from __future__ import annotations

import csv
import io

import numpy as np
import pytest

from anosups.errors import ShapeMismatch
from anosups.metrics import EvalResult, dice, evaluation_csv, patch_confusion


def counting_dice(a, b):
    inter = size_a = size_b = 0
    for x, y in zip(a.ravel().tolist(), b.ravel().tolist()):
        inter += x and y
        size_a += x
        size_b += y
    return 1.0 if size_a + size_b == 0 else 2.0 * inter / (size_a + size_b)


def test_dice_examples():
    a = np.zeros((20, 20), dtype=bool)
    a[:10, :10] = True
    assert dice(a, a) == 1.0
    b = np.zeros_like(a)
    b[10:, 10:] = True
    assert dice(a, b) == 0.0
    c = np.zeros_like(a)
    c[5:15, :10] = True  # 100 px, 50 shared
    assert dice(a, c) == 0.5
    assert dice(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0
    with pytest.raises(ShapeMismatch):
        dice(np.zeros((2, 2)), np.zeros((2, 3)))


def test_dice_matches_pixel_counting_oracle():
    rng = np.random.default_rng(31)
    for _ in range(200):
        shape = tuple(int(v) for v in rng.integers(1, 40, 2))
        a = rng.uniform(size=shape) < rng.uniform()
        b = rng.uniform(size=shape) < rng.uniform()
        assert abs(dice(a, b) - counting_dice(a, b)) <= 1e-12
        assert dice(a, b) == dice(b, a)


def test_confusion_examples():
    r = patch_confusion({1, 2}, {1, 2}, 4)
    assert (r.fp, r.fn, r.type1_rate, r.type2_rate) == (0, 0, 0.0, 0.0)
    r = patch_confusion(set(), {3}, 4)
    assert (r.fn, r.type2_rate, r.tn) == (1, 1.0, 3)
    with pytest.raises(ValueError):
        patch_confusion({4}, set(), 4)


def test_confusion_matches_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(100):
        pred = set(rng.choice(196, 5, replace=False).tolist())
        gt = set(rng.choice(196, int(rng.integers(0, 12)), replace=False).tolist())
        r = patch_confusion(pred, gt, 196)
        tp = sum(1 for i in range(196) if i in pred and i in gt)
        fp = sum(1 for i in range(196) if i in pred and i not in gt)
        fn = sum(1 for i in range(196) if i not in pred and i in gt)
        assert (r.tp, r.fp, r.fn, r.tn) == (tp, fp, fn, 196 - tp - fp - fn)
        assert r.tp + r.fp + r.fn + r.tn == 196


def test_evaluation_csv_has_mean_and_std_rows():
    rows = [("a", EvalResult(1, 0, 0, 3, 1.0)), ("b", EvalResult(0, 1, 1, 2, 0.0))]
    table = list(csv.reader(io.StringIO(evaluation_csv(rows))))
    assert table[0][:2] == ["image", "dice"]
    assert [r[0] for r in table[1:]] == ["a", "b", "mean", "std"]
    assert float(table[3][1]) == 0.5 and float(table[4][1]) == 0.5
