"""Command line: ``anosups {synth,train,calibrate,detect,eval,ablate}``.

Every option can also come from a flat ``key = value`` config file given
with ``--config``; flags on the command line take precedence.

Exit codes: 0 success, 1 invalid input, 2 runtime or numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path


from . import corpus, synth
from .calibration import calibrate, load_profile, save_profile
from .errors import AnoSupsError, DivergedTraining, GeometryMismatch
from .image import center_crop, load_mask_png, load_png, mask_to_patch_indices, resize, save_mask_png
from .metrics import dice, evaluation_csv, patch_confusion
from .pipeline import ablation, ablation_csv, ablation_timing_csv, detect_many
from .reconstructor import KINDS, TrainConfig, load_model, save_model, train

log = logging.getLogger("anosups")


class ValidationError(Exception):
    pass


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment, dashes in keys become underscores."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("ANOSUPS_JOBS", "1")))
    except ValueError:
        return 1


def _mix(text: str) -> dict:
    out = {}
    for part in text.split(","):
        kind, _, weight = part.partition("=")
        kind = kind.strip()
        if kind not in synth.ANOMALY_KINDS:
            raise ValidationError(f"unknown anomaly kind {kind!r} in --mix")
        out[kind] = float(weight or 1)
    return out


def _ks(text: str) -> list[int]:
    return [int(k) for k in text.split(",") if k.strip()]


def _prepare(images, patch_size: int, preprocess: str, size):
    out = []
    for img in images:
        if preprocess == "crop":
            img = center_crop(img, patch_size)
        elif preprocess == "resize":
            img = resize(img, *size)
        h, w = img.shape[:2]
        if h % patch_size or w % patch_size:
            raise ValidationError(f"image {h}x{w} is not divisible by patch size {patch_size}; use --preprocess")
        out.append(img)
    return out


# -- commands -------------------------------------------------------------------

def cmd_synth(a) -> None:
    if a.size_min < 1 or a.size_max < a.size_min:
        raise ValidationError("anomaly sizes must satisfy 1 <= size-min <= size-max")
    if a.height % a.patch_size or a.width % a.patch_size:
        raise ValidationError(f"{a.height}x{a.width} is not divisible by patch size {a.patch_size}")
    if a.n < 1:
        raise ValidationError("--n must be at least 1")
    cfg = synth.SuiteConfig(
        n_images=a.n, height=a.height, width=a.width, channels=a.channels, patch_size=a.patch_size,
        texture=a.texture, jitter=a.jitter, noise=a.noise, mix=_mix(a.mix),
        size_min=a.size_min, size_max=a.size_max, seed=a.seed,
    )
    man = corpus.write_corpus(a.out, cfg, a.n_train, a.n_calib)
    print(man["sha256"])


def cmd_train(a) -> None:
    _, images = corpus.load_split(a.corpus, "train")
    images = _prepare(images, a.patch_size, a.preprocess, a.size)
    cfg = TrainConfig(
        k_for_masking=a.k, epochs=a.epochs, batch_size=a.batch_size, learning_rate=a.lr,
        optimizer=a.optimizer, seed=a.seed, dim=a.dim, heads=a.heads, blocks=a.blocks,
        mlp_ratio=a.mlp_ratio, rank=a.rank,
    )
    model = train(cfg, a.kind, images, a.patch_size)
    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    curve = model.history.get("train_loss", [])
    hold = model.history.get("holdout_loss", [])
    with open(out.with_suffix(out.suffix + ".loss.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "holdout_loss"])
        for i, v in enumerate(curve):
            w.writerow([i + 1, f"{v:.8f}", f"{hold[i]:.8f}" if i < len(hold) else ""])


def _load_model_for(a, images):
    model = load_model(a.model)
    for img in images:
        h, w, c = img.shape
        if (h // model.patch_size, w // model.patch_size, c) != (model.rows, model.cols, model.channels) \
                or h % model.patch_size or w % model.patch_size:
            raise GeometryMismatch(
                f"image {h}x{w}x{c} does not match model P={model.patch_size}, C={model.channels}, "
                f"rows={model.rows}, cols={model.cols}"
            )
    return model


def cmd_calibrate(a) -> None:
    if a.k < 2:
        raise ValidationError("--k must be at least 2")
    _, images = corpus.load_split(a.corpus, "calib")
    model = load_model(a.model)
    images = _prepare(images, model.patch_size, a.preprocess, a.size)
    model = _load_model_for(a, images)
    profile = calibrate(model, images, a.k, a.seed, a.alpha1, a.alpha2, a.jobs)
    Path(a.out).parent.mkdir(parents=True, exist_ok=True)
    save_profile(profile, a.out)


def _test_inputs(a):
    if a.images:
        files = sorted(Path(a.images).glob("*.png"))
        if not files:
            raise ValidationError(f"no PNG files under {a.images}")
        return [f.stem for f in files], [load_png(f) for f in files]
    return corpus.load_split(a.corpus, "test")


def cmd_detect(a) -> None:
    names, images = _test_inputs(a)
    model = load_model(a.model)
    images = _prepare(images, model.patch_size, a.preprocess, a.size)
    model = _load_model_for(a, images)
    profile = load_profile(a.profile).with_alphas(*_alphas(a, load_profile(a.profile)))
    reports = detect_many(model, profile, images, names, a.mode, a.seed, a.jobs)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    timing_rows = []
    for name, rep in zip(names, reports):
        (out / f"{name}.json").write_text(rep.to_json())
        save_mask_png(out / f"{name}.png", rep.pixel_mask)
        timing_rows.append((name, rep.timings["step1"] * 1e3, rep.timings["step2"] * 1e3))
        if rep.warning:
            log.warning("%s: %s", name, rep.warning)
    with open(out / "timings.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image", "step1_ms", "step2_ms"])
        for row in timing_rows:
            w.writerow([row[0], f"{row[1]:.3f}", f"{row[2]:.3f}"])


def _alphas(a, profile):
    return (
        profile.alpha1 if a.alpha1 is None else a.alpha1,
        profile.alpha2 if a.alpha2 is None else a.alpha2,
    )


def cmd_eval(a) -> None:
    det = Path(a.detections)
    names = [p.stem for p in corpus.split_files(a.corpus, "test")]
    if not names:
        raise ValidationError(f"no test images in {a.corpus}")
    rows = []
    for name in names:
        pred_path = det / f"{name}.png"
        if not pred_path.exists():
            raise ValidationError(f"missing detection mask {pred_path}")
        pred = load_mask_png(pred_path)
        gt = load_mask_png(Path(a.corpus) / "masks" / f"{name}.png")
        if pred.shape != gt.shape:
            raise GeometryMismatch(f"{name}: prediction {pred.shape} vs ground truth {gt.shape}")
        m = (gt.shape[0] // a.patch_size) * (gt.shape[1] // a.patch_size)
        res = patch_confusion(mask_to_patch_indices(pred, a.patch_size), mask_to_patch_indices(gt, a.patch_size), m,
                              dice(pred, gt))
        rows.append((name, res))
    text = evaluation_csv(rows)
    Path(a.out).parent.mkdir(parents=True, exist_ok=True)
    Path(a.out).write_text(text)
    print(text.splitlines()[-2])


def cmd_ablate(a) -> None:
    if a.repeat < 1:
        raise ValidationError("--repeat must be at least 1")
    ks = _ks(a.ks)
    if not ks or min(ks) < 2:
        raise ValidationError("--ks must list values >= 2")
    _, calib = corpus.load_split(a.corpus, "calib")
    names, images = corpus.load_split(a.corpus, "test")
    gts = corpus.load_masks(a.corpus, names)
    model = load_model(a.model)
    calib = _prepare(calib, model.patch_size, a.preprocess, a.size)
    images = _prepare(images, model.patch_size, a.preprocess, a.size)
    model = _load_model_for(a, images + calib)
    rows = ablation(model, calib, images, gts, names, ks, a.repeat, a.seed, a.alpha1 or 0.0, a.alpha2 or 0.0, a.jobs)
    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(ablation_csv(rows))
    out.with_name(out.stem + "_timing.csv").write_text(ablation_timing_csv(rows))
    sys.stdout.write(ablation_csv(rows))


# -- parser ---------------------------------------------------------------------

def _size(text: str):
    h, _, w = text.lower().partition("x")
    return int(h), int(w or h)


def _common(p, model=True):
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=_default_jobs(), help="worker threads (default $ANOSUPS_JOBS or 1)")
    p.add_argument("--preprocess", choices=["none", "crop", "resize"], default="none")
    p.add_argument("--size", type=_size, default=(224, 224), help="HxW target for --preprocess resize")
    p.add_argument("-v", "--verbose", action="store_true")
    if model:
        p.add_argument("--model", required=True)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="anosups", description="Two-step suspected-patch anomaly detection")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic corpus")
    _common(p, model=False)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=60, help="test images (half anomalous)")
    p.add_argument("--n-train", type=int, default=60)
    p.add_argument("--n-calib", type=int, default=20)
    p.add_argument("--height", type=int, default=224)
    p.add_argument("--width", type=int, default=224)
    p.add_argument("--channels", type=int, choices=[1, 3], default=3)
    p.add_argument("--patch-size", type=int, default=16)
    p.add_argument("--texture", choices=synth.TEXTURES, default="grid")
    p.add_argument("--jitter", type=float, default=0.1)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--mix", default="line=1,color=1,hole=1")
    p.add_argument("--size-min", type=float, default=4)
    p.add_argument("--size-max", type=float, default=64)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit a patch reconstructor on the train split")
    _common(p, model=False)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--kind", choices=KINDS, default="attention")
    p.add_argument("--patch-size", type=int, default=16)
    p.add_argument("--k", type=int, default=2, help="masking ratio is 1 - 1/K")
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    p.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--blocks", type=int, default=2)
    p.add_argument("--mlp-ratio", type=int, default=2)
    p.add_argument("--rank", type=int, default=8)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="error distribution on the calib split")
    _common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="profile JSON")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--alpha1", type=float, default=0.0)
    p.add_argument("--alpha2", type=float, default=0.0)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("detect", help="run detection on the test split or an image directory")
    _common(p)
    p.add_argument("--corpus")
    p.add_argument("--images", help="directory of PNGs instead of the corpus test split")
    p.add_argument("--profile", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--mode", choices=["two-step", "one-step"], default="two-step")
    p.add_argument("--alpha1", type=float, default=None, help="override the profile's alpha1")
    p.add_argument("--alpha2", type=float, default=None, help="override the profile's alpha2")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="DICE and patch confusion against ground truth")
    _common(p, model=False)
    p.add_argument("--corpus", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--patch-size", type=int, default=16)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="one-step vs two-step and the K sweep")
    _common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="ablation CSV")
    p.add_argument("--ks", default="2,4,8,16")
    p.add_argument("--repeat", type=int, default=10)
    p.add_argument("--alpha1", type=float, default=0.0)
    p.add_argument("--alpha2", type=float, default=0.0)
    p.set_defaults(func=cmd_ablate)
    return ap


def parse_args(argv=None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config and argv and not argv[0].startswith("-"):
        values = read_config(known.config)
        sub = parser._subparsers._group_actions[0].choices[argv[0]]
        dests = {act.dest: act for act in sub._actions}
        defaults = {}
        for key, raw in values.items():
            if key not in dests:
                raise ValidationError(f"{known.config}: unknown key {key!r} for {argv[0]}")
            act = dests[key]
            defaults[key] = act.type(raw) if act.type else raw
            act.required = False
        sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "detect" and not (args.images or args.corpus):
            raise ValidationError("detect needs --corpus or --images")
        args.func(args)
    except (ValidationError, GeometryMismatch, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DivergedTraining, AnoSupsError, FloatingPointError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
