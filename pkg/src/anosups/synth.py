"""Synthetic normal textures and injected anomalies with exact ground truth.

Three anomaly kinds are supported: ``line`` (a hard dark stroke), ``color``
(a filled disk of a random colour) and ``hole`` (one or more disks set to
zero).  Every injected pixel differs from the background, so the ground
truth mask is exactly the set of changed pixels.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import OutOfBounds
from .rng import Xoshiro256, derive_seed, numpy_rng

TEXTURES = ("grid", "stripes", "blotch")
ANOMALY_KINDS = ("line", "color", "hole")

CRACK_VALUE = 0.02
MIN_FILL_CONTRAST = 0.2

# Textures keep every channel inside [LOW, HIGH] so cracks and holes always
# change the pixels they cover.
LOW, HIGH = 0.1, 0.95
TINT = (1.0, 0.86, 0.7)


def generate_texture(kind: str, h: int, w: int, c: int = 3, jitter: float = 0.1, seed: int = 0,
                     period: int = 16, contrast: float = 0.25, noise: float = 0.0) -> np.ndarray:
    """Parametric normal texture with seeded brightness and phase jitter.

    ``grid`` draws 2 px dark lines every ``period`` pixels on a flat field,
    ``stripes`` a diagonal sinusoid, ``blotch`` a sum of low-frequency
    cosines.  The jitter shifts the global brightness uniformly within
    ``[-jitter, jitter]`` and the pattern phase by up to ``jitter * 4 * pi``
    radians (grid and stripes) or a full cycle scaled by ``jitter`` (blotch).
    ``noise`` adds i.i.d. Gaussian grain of that standard deviation per
    pixel.  With ``jitter=0`` and ``noise=0`` the output does not depend on
    ``seed``.
    """
    if kind not in TEXTURES:
        raise ValueError(f"unknown texture {kind!r}")
    rng = Xoshiro256(seed)
    brightness = (2 * rng.uniform() - 1) * jitter
    phase_a = (2 * rng.uniform() - 1) * jitter * 4 * math.pi
    phase_b = (2 * rng.uniform() - 1) * jitter * 4 * math.pi
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    base = 0.55

    if kind == "grid":
        sy = int(round(phase_a / (2 * math.pi) * period)) % period
        sx = int(round(phase_b / (2 * math.pi) * period)) % period
        on_line = (((yy - sy) % period) < 2) | (((xx - sx) % period) < 2)
        field_ = np.where(on_line, base - contrast, base)
        # lines cover a fixed share of pixels, restore a centred mean
        field_ = field_ - field_.mean() + base - contrast * _grid_line_share(period)
    elif kind == "stripes":
        field_ = base + contrast * np.sin(2 * math.pi * (xx + yy) / period + phase_a)
    else:
        field_ = np.full((h, w), base)
        nrng = numpy_rng(derive_seed(0, "blotch", h, w))
        freqs = [(1, 0), (0, 1), (1, 1), (2, 1), (1, 2), (2, 2)]
        amps = nrng.uniform(0.4, 1.0, len(freqs))
        amps = contrast * amps / amps.sum() * 1.2
        base_phase = nrng.uniform(0, 2 * math.pi, len(freqs))
        for i, ((fy, fx), amp) in enumerate(zip(freqs, amps)):
            ph = base_phase[i] + (2 * rng.uniform() - 1) * jitter * 2 * math.pi
            field_ += amp * np.cos(2 * math.pi * (fy * yy / h + fx * xx / w) + ph)

    field_ = field_ + brightness
    tint = np.asarray(TINT[:c] if c == 3 else (1.0,), dtype=np.float64)
    img = field_[:, :, None] * tint
    if noise > 0:
        img = img + numpy_rng(derive_seed(seed, "grain")).normal(0.0, noise, img.shape)
    return np.clip(img, LOW, HIGH)


def _grid_line_share(period: int) -> float:
    return 1.0 - ((period - 2) / period) ** 2


@dataclass
class AnomalySpec:
    """Geometry of one injected anomaly.

    ``line`` uses ``points=[(x0, y0), (x1, y1)]`` and ``size`` as the stroke
    thickness; ``color`` uses one centre, ``size`` as radius and ``color``;
    ``hole`` uses any number of centres with radius ``size``.
    """

    kind: str
    points: list
    size: float
    color: list = field(default_factory=list)
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LabeledImage:
    image: np.ndarray
    gt_mask: np.ndarray
    specs: list


def _disk(h, w, cx, cy, r):
    yy, xx = np.mgrid[0:h, 0:w]
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r


def _segment(h, w, p0, p1, thickness):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    (x0, y0), (x1, y1) = p0, p1
    dx, dy = x1 - x0, y1 - y0
    t = np.clip(((xx - x0) * dx + (yy - y0) * dy) / (dx * dx + dy * dy), 0.0, 1.0)
    dist2 = (xx - (x0 + t * dx)) ** 2 + (yy - (y0 + t * dy)) ** 2
    return dist2 <= (thickness / 2.0) ** 2


def _check_point(x, y, h, w, margin=0.0):
    if not (margin <= x <= w - 1 - margin and margin <= y <= h - 1 - margin):
        raise OutOfBounds(f"({x}, {y}) with extent {margin} leaves the {h}x{w} image")


def anomaly_footprint(spec: AnomalySpec, h: int, w: int) -> np.ndarray:
    """Pixels an anomaly covers; validates its geometry."""
    if spec.size < 1:
        raise OutOfBounds("radius/thickness must be at least 1 px")
    if spec.kind == "line":
        if len(spec.points) != 2:
            raise OutOfBounds("a line needs exactly two endpoints")
        p0, p1 = (tuple(map(float, p)) for p in spec.points)
        if p0 == p1:
            raise OutOfBounds("zero-length line")
        for x, y in (p0, p1):
            _check_point(x, y, h, w)
        return _segment(h, w, p0, p1, spec.size)
    if spec.kind in ("color", "hole"):
        if not spec.points or (spec.kind == "color" and len(spec.points) != 1):
            raise OutOfBounds(f"invalid centre list for {spec.kind}")
        out = np.zeros((h, w), dtype=bool)
        for x, y in spec.points:
            _check_point(x, y, h, w, spec.size)
            out |= _disk(h, w, x, y, spec.size)
        return out
    raise ValueError(f"unknown anomaly kind {spec.kind!r}")


def inject(image: np.ndarray, spec: AnomalySpec) -> LabeledImage:
    """Paint one anomaly; the returned mask is exactly the changed pixels."""
    h, w, c = image.shape
    foot = anomaly_footprint(spec, h, w)
    out = image.copy()
    if spec.kind == "line":
        out[foot] = CRACK_VALUE
    elif spec.kind == "hole":
        out[foot] = 0.0
    else:
        color = np.asarray(spec.color, dtype=np.float64)[:c]
        if color.shape != (c,):
            raise ValueError(f"fill colour needs {c} channels")
        contrast = np.abs(image[foot] - color).max(axis=1)
        if contrast.size and contrast.min() < MIN_FILL_CONTRAST:
            raise ValueError(f"fill contrast {contrast.min():.3f} below {MIN_FILL_CONTRAST}")
        out[foot] = color
    changed = np.any(out != image, axis=2)
    return LabeledImage(out, changed, [spec])


def random_color(rng: Xoshiro256, region: np.ndarray, channels: int, tries: int = 200) -> list:
    """A colour differing from every pixel of ``region`` by at least the minimum contrast."""
    for _ in range(tries):
        color = [rng.uniform() for _ in range(channels)]
        if np.abs(region - np.asarray(color)).max(axis=1).min() >= MIN_FILL_CONTRAST + 1e-9:
            return [round(v, 6) for v in color]
    raise ValueError("could not find a colour with enough contrast")


def _allocate(mix: dict[str, float], n: int) -> list[str]:
    """Largest-remainder allocation of ``n`` items to the kinds in ``mix``."""
    kinds = [k for k in ANOMALY_KINDS if mix.get(k, 0) > 0]
    total = sum(mix[k] for k in kinds)
    quotas = [n * mix[k] / total for k in kinds]
    counts = [int(math.floor(q)) for q in quotas]
    rest = sorted(range(len(kinds)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in rest[: n - sum(counts)]:
        counts[i] += 1
    return [k for k, cnt in zip(kinds, counts) for _ in range(cnt)]


def make_anomaly(kind: str, size: float, image: np.ndarray, rng: Xoshiro256, patch_size: int) -> AnomalySpec:
    """Random anomaly of characteristic extent ``size`` pixels.

    Extents below one patch are placed wholly inside a single patch.
    """
    h, w, c = image.shape
    seed = rng.next_u64()
    if kind == "line":
        thick = float(2 + rng.below(2))
        margin = thick / 2 + 1
        for _ in range(1000):
            ang = rng.uniform() * math.pi
            if size < patch_size:
                length = min(max(2.0, float(size)), patch_size - 1 - 2 * margin)
                dx, dy = length * math.cos(ang), length * math.sin(ang)
                row, col = _random_cell(rng, h, w, patch_size)
                room_x = patch_size - 1 - 2 * margin - abs(dx)
                room_y = patch_size - 1 - 2 * margin - abs(dy)
                left = col * patch_size + margin + rng.uniform() * max(room_x, 0.0)
                top = row * patch_size + margin + rng.uniform() * max(room_y, 0.0)
                x0 = left + (abs(dx) if dx < 0 else 0.0)
                y0 = top
            else:
                dx, dy = size * math.cos(ang), size * math.sin(ang)
                x0 = margin + rng.uniform() * (w - 1 - 2 * margin)
                y0 = margin + rng.uniform() * (h - 1 - 2 * margin)
            x1, y1 = x0 + dx, y0 + dy
            if margin <= min(x0, x1) and max(x0, x1) <= w - 1 - margin and margin <= min(y0, y1) and max(y0, y1) <= h - 1 - margin:
                return AnomalySpec("line", [[round(x0, 3), round(y0, 3)], [round(x1, 3), round(y1, 3)]], thick, [], seed)
        raise ValueError("could not place line")
    if kind == "color":
        r = max(1.0, size / 2.0)
        cx, cy = _disk_center(rng, h, w, r, patch_size, size)
        foot = _disk(h, w, cx, cy, r)
        return AnomalySpec("color", [[cx, cy]], r, random_color(rng, image[foot], c), seed)
    if kind == "hole":
        count = 1 + rng.below(3)
        r = max(1.0, size / 2.0 / math.sqrt(count))
        pts = [list(_disk_center(rng, h, w, r, patch_size, 2 * r)) for _ in range(count)]
        return AnomalySpec("hole", pts, r, [], seed)
    raise ValueError(f"unknown anomaly kind {kind!r}")


def _random_cell(rng, h, w, p):
    return rng.below(h // p), rng.below(w // p)


def _disk_center(rng, h, w, r, p, extent):
    if extent < p and 2 * math.ceil(r) + 1 <= p:
        row, col = _random_cell(rng, h, w, p)
        span = p - 1 - 2 * math.ceil(r)
        cx = col * p + math.ceil(r) + rng.below(span + 1)
        cy = row * p + math.ceil(r) + rng.below(span + 1)
        return float(cx), float(cy)
    lo = math.ceil(r)
    return float(lo + rng.below(w - 2 * lo)), float(lo + rng.below(h - 2 * lo))


@dataclass
class SuiteConfig:
    n_images: int = 60
    height: int = 224
    width: int = 224
    channels: int = 3
    patch_size: int = 16
    texture: str = "blotch"
    jitter: float = 0.1
    noise: float = 0.02
    mix: dict = field(default_factory=lambda: {"line": 1, "color": 1, "hole": 1})
    size_min: float = 4
    size_max: float = 64
    seed: int = 0


def normal_images(config: SuiteConfig, n: int, stage: str) -> list[np.ndarray]:
    """``n`` anomaly-free textures drawn under a named seed stage."""
    return [
        generate_texture(config.texture, config.height, config.width, config.channels, config.jitter,
                         derive_seed(config.seed, stage, i), period=config.patch_size, noise=config.noise)
        for i in range(n)
    ]


def build_suite(config: SuiteConfig) -> list[LabeledImage]:
    """Half normal, half abnormal images with sizes spread geometrically.

    Abnormal images are listed first.  Sizes are evenly spaced on a log
    scale between ``size_min`` and ``size_max`` and assigned to kinds by a
    seeded shuffle, so both extremes always occur.
    """
    if config.n_images < 1:
        raise ValueError("n_images must be >= 1")
    if not 1 <= config.size_min <= config.size_max:
        raise ValueError("need 1 <= size_min <= size_max")
    n_abn = config.n_images // 2
    rng = Xoshiro256(derive_seed(config.seed, "suite"))
    kinds = _allocate(config.mix, n_abn)
    rng.shuffle(kinds)
    if n_abn > 1:
        sizes = [config.size_min * (config.size_max / config.size_min) ** (i / (n_abn - 1)) for i in range(n_abn)]
    else:
        sizes = [config.size_min] * n_abn
    rng.shuffle(sizes)
    backgrounds = normal_images(config, config.n_images, "test")
    out = []
    for i, bg in enumerate(backgrounds):
        if i < n_abn:
            spec = make_anomaly(kinds[i], sizes[i], bg, rng, config.patch_size)
            out.append(inject(bg, spec))
        else:
            out.append(LabeledImage(bg, np.zeros(bg.shape[:2], dtype=bool), []))
    return out


def manifest(config: SuiteConfig, suite: list[LabeledImage]) -> dict:
    entries = []
    for i, item in enumerate(suite):
        entries.append({
            "index": i,
            "anomalous": bool(item.specs),
            "specs": [s.to_dict() for s in item.specs],
            "image_sha256": hashlib.sha256(item.image.tobytes()).hexdigest(),
            "mask_sha256": hashlib.sha256(np.packbits(item.gt_mask).tobytes()).hexdigest(),
        })
    return {"config": asdict(config), "images": entries}


def manifest_hash(man: dict) -> str:
    return hashlib.sha256(json.dumps(man, sort_keys=True).encode("utf-8")).hexdigest()
