from __future__ import annotations

import csv
import json
import shutil
import subprocess
import sys
import warnings

import pytest

from anosups.cli import main

SMALL = ["--n", "6", "--height", "64", "--width", "64", "--n-train", "8", "--n-calib", "3", "--texture", "blotch",
         "--size-min", "4", "--size-max", "24"]


def run(*argv):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus"
    assert run("synth", "--out", corpus, "--seed", 7, *SMALL) == 0
    assert run("train", "--corpus", corpus, "--out", root / "pca.bin", "--kind", "pca", "--rank", 3) == 0
    assert run("calibrate", "--corpus", corpus, "--model", root / "pca.bin", "--out", root / "profile.json",
               "--k", 2, "--alpha1", 0.1, "--alpha2", 0.05) == 0
    return root, corpus


def read(path):
    return path.read_bytes()


def test_synth_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("synth", "--out", a, "--seed", 7, *SMALL) == 0
    assert run("synth", "--out", b, "--seed", 7, *SMALL) == 0
    assert json.loads((a / "manifest.json").read_text())["sha256"] == json.loads((b / "manifest.json").read_text())["sha256"]
    for f in sorted((a / "images").iterdir()):
        assert read(f) == read(b / "images" / f.name)


def test_synth_manifest_spans_sizes(tmp_path):
    assert run("synth", "--out", tmp_path, "--n", 20, "--n-train", 1, "--n-calib", 1, "--size-min", 4,
               "--size-max", 64, "--seed", 2) == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["splits"] == {"train": 1, "calib": 1, "test": 20}
    from anosups.corpus import load_masks
    from anosups.image import mask_to_patch_indices
    names = [f"test_{i:04d}" for i in range(10)]
    counts = [len(mask_to_patch_indices(m, 16)) for m in load_masks(tmp_path, names)]
    assert min(counts) == 1 and max(counts) > 3


def test_synth_rejects_bad_size(tmp_path, capsys):
    assert run("synth", "--out", tmp_path, "--size-min", 0) == 1
    assert "size" in capsys.readouterr().err
    assert run("synth", "--out", tmp_path, "--height", 50) == 1


def test_train_outputs(pipeline):
    root, _ = pipeline
    assert (root / "pca.bin").read_bytes()[:8] == b"ANOSUPS1"
    assert json.loads((root / "pca.bin.json").read_text())["kind"] == "pca"
    assert (root / "pca.bin.loss.csv").read_text().startswith("epoch,train_loss,holdout_loss")


def test_train_attention_writes_loss_curve(pipeline, tmp_path):
    _, corpus = pipeline
    out = tmp_path / "att.bin"
    assert run("train", "--corpus", corpus, "--out", out, "--epochs", 2, "--dim", 8, "--heads", 2,
               "--blocks", 1) == 0
    rows = list(csv.reader(open(out.with_name("att.bin.loss.csv"))))
    assert rows[0] == ["epoch", "train_loss", "holdout_loss"] and len(rows) == 3


def test_profile_file(pipeline):
    root, _ = pipeline
    meta = json.loads((root / "profile.json").read_text())
    assert meta["k"] == 2 and meta["n_errors"] == 3 * 16 and meta["alpha1"] == 0.1


def test_detect_modes_and_outputs(pipeline, tmp_path):
    root, corpus = pipeline
    for mode in ("two-step", "one-step"):
        out = tmp_path / mode
        assert run("detect", "--corpus", corpus, "--model", root / "pca.bin", "--profile", root / "profile.json",
                   "--out", out, "--mode", mode, "--seed", 3) == 0
        reports = sorted(out.glob("test_*.json"))
        assert len(reports) == 6 and len(list(out.glob("test_*.png"))) == 6
        for f in reports:
            rep = json.loads(f.read_text())
            assert rep["mode"] == mode and rep["q1"] <= rep["q2"]
            if mode == "one-step":
                assert rep["e2"] == [] and rep["anomalies"] == rep["suspected"]
        assert (out / "timings.csv").read_text().startswith("image,step1_ms,step2_ms")


def test_detect_on_image_directory(pipeline, tmp_path):
    root, corpus = pipeline
    imgs = tmp_path / "in"
    imgs.mkdir()
    shutil.copy(corpus / "images" / "test_0000.png", imgs / "part.png")
    assert run("detect", "--images", imgs, "--model", root / "pca.bin", "--profile", root / "profile.json",
               "--out", tmp_path / "out") == 0
    assert (tmp_path / "out" / "part.json").exists()


def test_determinism_across_runs_and_jobs(pipeline, tmp_path):
    root, corpus = pipeline
    outs = []
    for tag, jobs in (("a", 1), ("b", 1), ("c", 3)):
        out = tmp_path / tag
        assert run("detect", "--corpus", corpus, "--model", root / "pca.bin", "--profile", root / "profile.json",
                   "--out", out, "--seed", 5, "--jobs", jobs) == 0
        outs.append(out)
    for f in sorted(outs[0].iterdir()):
        if f.name == "timings.csv":
            continue
        for other in outs[1:]:
            assert read(f) == read(other / f.name), f.name
    for tag, jobs in (("x", 1), ("y", 2)):
        assert run("ablate", "--corpus", corpus, "--model", root / "pca.bin", "--out", tmp_path / f"{tag}.csv",
                   "--ks", "2,4", "--repeat", 2, "--seed", 1, "--jobs", jobs, "--alpha1", 0.1) == 0
    assert read(tmp_path / "x.csv") == read(tmp_path / "y.csv")


def test_ablate_table_shape(pipeline, tmp_path):
    root, corpus = pipeline
    out = tmp_path / "ablation.csv"
    assert run("ablate", "--corpus", corpus, "--model", root / "pca.bin", "--out", out, "--repeat", 3) == 0
    rows = list(csv.DictReader(open(out)))
    assert [(r["model"], r["k"]) for r in rows] == [("one-step", "2"), ("two-step", "2"), ("two-step", "4"),
                                                     ("two-step", "8"), ("two-step", "16")]
    assert all(r["repeats"] == "3" for r in rows)
    assert [int(r["passes_per_image"]) for r in rows] == [2, 3, 5, 9, 17]
    timing = list(csv.DictReader(open(tmp_path / "ablation_timing.csv")))
    assert len(timing) == 5 and all(float(r["seconds_per_image"]) > 0 for r in timing)


def test_eval_on_perfect_predictions(pipeline, tmp_path):
    _, corpus = pipeline
    det = tmp_path / "perfect"
    det.mkdir()
    for f in (corpus / "masks").glob("test_*.png"):
        shutil.copy(f, det / f.name)
    out = tmp_path / "eval.csv"
    assert run("eval", "--corpus", corpus, "--detections", det, "--out", out) == 0
    rows = {r["image"]: r for r in csv.DictReader(open(out))}
    assert float(rows["mean"]["dice"]) == 1.0
    assert float(rows["mean"]["type1_rate"]) == 0.0 and float(rows["mean"]["type2_rate"]) == 0.0


def test_config_file_with_flag_override(pipeline, tmp_path):
    root, corpus = pipeline
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# detection run\ncorpus = {corpus}\nmodel = {root / 'pca.bin'}\nprofile = {root / 'profile.json'}\n"
                   f"mode = one-step\nseed = 5\n")
    assert run("detect", "--config", cfg, "--out", tmp_path / "cfg") == 0
    assert json.loads((tmp_path / "cfg" / "test_0000.json").read_text())["mode"] == "one-step"
    assert run("detect", "--config", cfg, "--out", tmp_path / "flag", "--mode", "two-step") == 0
    assert json.loads((tmp_path / "flag" / "test_0000.json").read_text())["mode"] == "two-step"
    cfg.write_text("bogus_key = 1\n")
    assert run("detect", "--config", cfg, "--out", tmp_path / "bad") == 1


def test_validation_errors_exit_1(pipeline, tmp_path):
    root, corpus = pipeline
    assert run("calibrate", "--corpus", corpus, "--model", root / "pca.bin", "--out", tmp_path / "p.json", "--k", 1) == 1
    assert run("detect", "--corpus", corpus, "--model", tmp_path / "missing.bin", "--profile", root / "profile.json",
               "--out", tmp_path / "o") == 1
    assert run("ablate", "--corpus", corpus, "--model", root / "pca.bin", "--out", tmp_path / "a.csv", "--repeat", 0) == 1
    assert run("detect", "--model", root / "pca.bin", "--profile", root / "profile.json", "--out", tmp_path / "o") == 1
    assert run("frobnicate") == 1


def test_geometry_mismatch_exit_1(pipeline, tmp_path, capsys):
    root, _ = pipeline
    other = tmp_path / "big"
    assert run("synth", "--out", other, "--n", 2, "--height", 96, "--width", 96, "--n-train", 1, "--n-calib", 1) == 0
    capsys.readouterr()
    assert run("calibrate", "--corpus", other, "--model", root / "pca.bin", "--out", tmp_path / "p.json") == 1
    err = capsys.readouterr().err
    assert "rows=4" in err and "96x96" in err


def test_preprocess_resize(pipeline, tmp_path):
    root, _ = pipeline
    other = tmp_path / "big"
    assert run("synth", "--out", other, "--n", 2, "--height", 96, "--width", 96, "--n-train", 1, "--n-calib", 2) == 0
    assert run("calibrate", "--corpus", other, "--model", root / "pca.bin", "--out", tmp_path / "p.json",
               "--preprocess", "resize", "--size", "64x64") == 0


def test_runtime_failure_exit_2(pipeline, tmp_path):
    _, corpus = pipeline
    assert run("train", "--corpus", corpus, "--out", tmp_path / "x.bin", "--optimizer", "sgd", "--lr", "1e30",
               "--epochs", 3, "--dim", 8, "--heads", 2, "--blocks", 1) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "anosups", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "synth" in proc.stdout


def test_jobs_default_from_environment(monkeypatch):
    from anosups.cli import parse_args
    monkeypatch.setenv("ANOSUPS_JOBS", "3")
    assert parse_args(["eval", "--corpus", "c", "--detections", "d", "--out", "o"]).jobs == 3
