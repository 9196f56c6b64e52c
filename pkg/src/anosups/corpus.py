"""On-disk corpus: ``images/`` and ``masks/`` PNG pairs plus ``manifest.json``.

File names carry the split: ``train_0000.png`` and ``calib_0000.png`` are
anomaly-free, ``test_0000.png`` has a matching ``masks/test_0000.png``.
Any directory of PNGs following this naming works as a corpus.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import synth
from .image import load_mask_png, load_png, save_mask_png, save_png

SPLITS = ("train", "calib", "test")


def write_corpus(out, config: synth.SuiteConfig, n_train: int, n_calib: int) -> dict:
    out = Path(out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    for split, n in (("train", n_train), ("calib", n_calib)):
        for i, img in enumerate(synth.normal_images(config, n, split)):
            save_png(out / "images" / f"{split}_{i:04d}.png", img)
    suite = synth.build_suite(config)
    for i, item in enumerate(suite):
        save_png(out / "images" / f"test_{i:04d}.png", item.image)
        save_mask_png(out / "masks" / f"test_{i:04d}.png", item.gt_mask)
    man = synth.manifest(config, suite)
    man["splits"] = {"train": n_train, "calib": n_calib, "test": len(suite)}
    man["sha256"] = synth.manifest_hash(man)
    (out / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True))
    return man


def split_files(corpus, split: str) -> list[Path]:
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    return sorted((Path(corpus) / "images").glob(f"{split}_*.png"))


def load_split(corpus, split: str) -> tuple[list[str], list[np.ndarray]]:
    files = split_files(corpus, split)
    if not files:
        raise FileNotFoundError(f"no {split}_*.png images under {Path(corpus) / 'images'}")
    return [f.stem for f in files], [load_png(f) for f in files]


def load_masks(corpus, names) -> list[np.ndarray]:
    return [load_mask_png(Path(corpus) / "masks" / f"{n}.png") for n in names]
