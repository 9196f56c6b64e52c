from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anosups import synth
from anosups.calibration import CalibrationProfile, calibrate
from anosups.detector import (
    ScopeWarning, detect, patch_error, step1_errors, step1_identify_suspects, step2_confirm, step2_grid,
    suspects_from, warn_scope,
)
from anosups.errors import AllPatchesSuspected, GeometryMismatch, ShapeMismatch
from anosups.image import partition_patches, patchify


def test_patch_error_examples():
    a = np.zeros((16, 16, 3))
    assert patch_error(a, a) == 0.0
    b = a + 0.1
    # direct summation oracle
    total = 0.0
    for v in (b - a).ravel():
        total += v * v
    assert math.isclose(patch_error(b, a), math.sqrt(total), rel_tol=1e-12)
    assert math.isclose(patch_error(b, a), 2.77128, abs_tol=5e-6)
    rng = np.random.default_rng(0)
    x, y = rng.uniform(size=(2, 8, 8, 1))
    assert patch_error(x, y) == patch_error(y, x)
    with pytest.raises(ShapeMismatch):
        patch_error(np.zeros((4, 4, 1)), np.zeros((4, 4, 3)))


def test_suspects_threshold_is_strict():
    assert suspects_from(np.array([0.1, 5.0, 0.2]), 1.0) == [1]
    assert suspects_from(np.array([1.0, 1.0]), 1.0) == []


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=1, max_size=50), st.floats(0, 10), st.floats(0, 10))
def test_suspect_set_grows_as_threshold_drops(e1, qa, qb):
    lo, hi = min(qa, qb), max(qa, qb)
    assert set(suspects_from(np.array(e1), hi)) <= set(suspects_from(np.array(e1), lo))


def test_warn_scope_examples():
    with pytest.warns(ScopeWarning):
        assert warn_scope(range(120), 196) is not None
    assert warn_scope(range(10), 196) is None
    with pytest.warns(ScopeWarning):
        warn_scope(range(70), 196, ratio=0.3)


def test_step1_reconstructs_each_patch_from_its_own_group(pca_model, small_train_images):
    from anosups.image import make_incomplete_images
    from anosups.reconstructor import reconstruct_patches
    img = small_train_images[3]
    e1 = step1_errors(pca_model, img, 4, seed=21)
    original = patchify(img, 16)
    part = partition_patches(16, 4, 21)
    for g, grid in enumerate(make_incomplete_images(original, part)):
        rec = reconstruct_patches(pca_model, grid, part.group(g))
        for i, patch in rec.items():
            assert e1[i] == patch_error(patch, original.patches[i])


def test_step1_geometry_checked(pca_model, rng):
    with pytest.raises(GeometryMismatch):
        step1_errors(pca_model, rng.uniform(size=(32, 32, 3)), 2, 0)


def test_step2_examples(pca_model, small_train_images):
    img = small_train_images[0]
    e2, anomalies = step2_confirm(pca_model, img, [], 0.0)
    assert e2 == {} and anomalies == []
    with pytest.raises(AllPatchesSuspected):
        step2_confirm(pca_model, img, range(16), 0.0)
    e2, anomalies = step2_confirm(pca_model, img, [1, 4], 0.0)
    assert set(e2) == {1, 4} and set(anomalies) <= {1, 4}


def test_step2_grid_visible_set_is_complement(small_train_images):
    grid = patchify(small_train_images[0], 16)
    s = [0, 3, 7]
    g2 = step2_grid(grid, s)
    assert set(g2.visible_indices.tolist()) == set(range(16)) - set(s)


def profile_for(model, images, k=2):
    return calibrate(model, images, k, seed=0)


@pytest.mark.parametrize("mode", ["two-step", "one-step"])
def test_report_invariants(mode, pca_model, small_suite_config):
    calib = synth.normal_images(small_suite_config, 4, "calib")
    profile = profile_for(pca_model, calib).with_alphas(0.2, 0.1)
    for item in synth.build_suite(small_suite_config):
        rep = detect(pca_model, profile, item.image, mode, seed=4)
        assert rep.suspected == suspects_from(rep.e1, profile.q1)
        assert set(rep.anomalies) <= set(rep.suspected)
        assert rep.pixel_mask.sum() == len(rep.anomalies) * 16 * 16
        if mode == "one-step":
            assert rep.e2 == {} and rep.anomalies == rep.suspected
        else:
            assert set(rep.e2) == set(rep.suspected)
            assert rep.anomalies == [i for i in rep.suspected if rep.e2[i] > profile.q2]
            assert not set(rep.step2_visible) & set(rep.suspected)
            if rep.suspected:
                assert set(rep.step2_visible) == set(range(16)) - set(rep.suspected)


def test_detect_is_deterministic(pca_model, small_suite_config):
    calib = synth.normal_images(small_suite_config, 3, "calib")
    profile = profile_for(pca_model, calib).with_alphas(0.1, 0.05)
    img = synth.build_suite(small_suite_config)[0].image
    a = detect(pca_model, profile, img, "two-step", seed=99)
    b = detect(pca_model, profile, img, "two-step", seed=99)
    assert a.to_json() == b.to_json()
    assert a.pixel_mask.tobytes() == b.pixel_mask.tobytes()
    data = json.loads(a.to_json())
    assert "timings_ms" not in data
    assert set(json.loads(a.to_json(include_timings=True))["timings_ms"]) == {"step1", "step2", "total"}


def test_parallel_step1_is_identical(tiny_attention_model, small_train_images):
    for k in (2, 3, 16):
        seq = step1_errors(tiny_attention_model, small_train_images[5], k, seed=8)
        par = step1_errors(tiny_attention_model, small_train_images[5], k, seed=8, parallel=4)
        assert seq.tobytes() == par.tobytes()


def test_all_suspected_policy(pca_model, small_train_images):
    profile = CalibrationProfile(np.array([-1.0]), 0.0, 0.0, 2, 0)  # every error exceeds q1
    img = small_train_images[0]
    with pytest.warns(ScopeWarning), pytest.raises(AllPatchesSuspected):
        detect(pca_model, profile, img, "two-step", seed=0)
    with pytest.warns(ScopeWarning):
        rep = detect(pca_model, profile, img, "two-step", seed=0, on_all_suspected="fallback")
    assert rep.anomalies == list(range(16)) and rep.error
    with pytest.warns(ScopeWarning):
        one = detect(pca_model, profile, img, "one-step", seed=0)
    assert one.anomalies == list(range(16))


def test_mode_validated(pca_model, small_train_images):
    profile = CalibrationProfile(np.array([1.0]), 0.0, 0.0, 2, 0)
    with pytest.raises(ValueError):
        detect(pca_model, profile, small_train_images[0], "three-step", seed=0)


def test_identify_suspects_returns_both(pca_model, small_train_images):
    e1, s = step1_identify_suspects(pca_model, small_train_images[0], 2, 0.0, seed=1)
    assert s == [i for i in range(16) if e1[i] > 0.0]
