"""Procedural class-conditional shape datasets.

Each class renders one shape type on a background. A single
``diversity_knob`` in [0, 1] scales every nuisance range (position, scale,
shape hue, background hue), so the intra-class diversity of the "real" data
is a known generative parameter. Domain ``A`` is the source domain (flat
backgrounds); domain ``B`` uses disjoint shape types on striped backgrounds
and serves as the unseen target domain for re-purposing.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InsufficientDataError

# Shape predicates on normalized coordinates (x right, y down, unit radius).
SHAPES = {
    "circle": lambda x, y: x**2 + y**2 <= 1.0,
    "square": lambda x, y: np.maximum(abs(x), abs(y)) <= 0.8,
    "triangle": lambda x, y: (y <= 0.7) & (abs(x) <= 0.95 * (y + 0.9) / 1.6),
    "cross": lambda x, y: ((abs(x) <= 0.3) & (abs(y) <= 0.95)) | ((abs(y) <= 0.3) & (abs(x) <= 0.95)),
    "diamond": lambda x, y: abs(x) + abs(y) <= 1.0,
    "ring": lambda x, y: (x**2 + y**2 <= 1.0) & (x**2 + y**2 >= 0.55**2),
    "bar": lambda x, y: (abs(x) <= 1.0) & (abs(y) <= 0.35),
    "saltire": lambda x, y: ((abs(x - y) <= 0.4) | (abs(x + y) <= 0.4)) & (x**2 + y**2 <= 1.0),
    "star": lambda x, y: np.hypot(x, y) <= 0.55 + 0.45 * np.cos(5 * np.arctan2(x, -y)),
    "frame": lambda x, y: (np.maximum(abs(x), abs(y)) <= 0.85) & (np.maximum(abs(x), abs(y)) >= 0.5),
    # domain B
    "hexagon": lambda x, y: np.maximum(abs(x) * 0.866 + abs(y) * 0.5, abs(y)) <= 0.87,
    "crescent": lambda x, y: (x**2 + y**2 <= 1.0) & ((x - 0.45) ** 2 + y**2 >= 0.8**2),
    "tee": lambda x, y: ((abs(y + 0.7) <= 0.25) & (abs(x) <= 0.95)) | ((abs(x) <= 0.25) & (y >= -0.7) & (y <= 0.95)),
    "ell": lambda x, y: ((abs(x + 0.6) <= 0.3) & (abs(y) <= 0.95)) | ((abs(y - 0.65) <= 0.3) & (x >= -0.9) & (x <= 0.9)),
    "dome": lambda x, y: (x**2 + (y - 0.4) ** 2 <= 1.0) & (y <= 0.4),
    "ellipse": lambda x, y: (x / 0.45) ** 2 + y**2 <= 1.0,
    "dots": lambda x, y: ((x - 0.5) ** 2 + y**2 <= 0.42**2) | ((x + 0.5) ** 2 + y**2 <= 0.42**2),
}

DOMAIN_SHAPES = {
    "A": ("circle", "square", "triangle", "cross", "diamond", "ring", "bar", "saltire", "star", "frame"),
    "B": ("hexagon", "crescent", "tee", "ell", "dome", "ellipse", "dots"),
}

_SUPERSAMPLE = 2
_BASE_RADIUS = 0.28
_MAX_OFFSET = 0.15
_MAX_SCALE_JITTER = 0.3


@dataclass(frozen=True)
class DatasetSpec:
    domain_id: str = "A"
    num_classes: int = 10
    image_size: int = 32
    channels: int = 3
    diversity_knob: float = 1.0
    samples_per_class: int = 200
    seed: int = 0

    def validate(self) -> "DatasetSpec":
        if self.domain_id not in DOMAIN_SHAPES:
            raise ConfigurationError(f"domain_id must be one of {sorted(DOMAIN_SHAPES)}", "domain_id")
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be >= 2", "num_classes")
        if self.image_size < 8:
            raise ConfigurationError("image_size must be >= 8", "image_size")
        if self.channels not in (1, 3):
            raise ConfigurationError("channels must be 1 or 3", "channels")
        if not 0.0 <= self.diversity_knob <= 1.0:
            raise ConfigurationError("diversity_knob must lie in [0, 1]", "diversity_knob")
        if self.samples_per_class < 1:
            raise ConfigurationError("samples_per_class must be >= 1", "samples_per_class")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer", "seed")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - fields
        if unknown:
            raise ConfigurationError(f"unknown dataset field(s): {sorted(unknown)}", sorted(unknown)[0])
        return cls(**d)


@dataclass
class LabeledImageSet:
    images: np.ndarray  # [N, H, W, C] float32 in [-1, 1]
    labels: np.ndarray  # [N] int64
    spec: DatasetSpec

    def __len__(self) -> int:
        return len(self.labels)

    def class_images(self, y: int) -> np.ndarray:
        return self.images[self.labels == y]

    def split(self, fraction: float, rng: np.random.Generator) -> tuple["LabeledImageSet", "LabeledImageSet"]:
        """Random stratification-free split into (first, second) parts."""
        idx = rng.permutation(len(self))
        cut = int(round(fraction * len(self)))
        a, b = np.sort(idx[:cut]), np.sort(idx[cut:])
        return (
            LabeledImageSet(self.images[a], self.labels[a], self.spec),
            LabeledImageSet(self.images[b], self.labels[b], self.spec),
        )


def _hsv_to_rgb(h, s, v):
    """Vectorized HSV -> RGB; all inputs broadcastable, outputs in [0, 1]."""
    h = np.mod(h, 1.0)
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(int) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def shape_for_class(domain_id: str, y: int) -> tuple[str, int]:
    """Return (shape name, cycle index) for class ``y`` of a domain."""
    names = DOMAIN_SHAPES[domain_id]
    return names[y % len(names)], y // len(names)


def _class_base_hue(domain_id: str, y: int) -> float:
    offset = 0.0 if domain_id == "A" else 0.31
    _, cycle = shape_for_class(domain_id, y)
    return float(np.mod(offset + y * 0.618034 + cycle * 0.5, 1.0))


def _render_class(spec: DatasetSpec, y: int, rng: np.random.Generator) -> np.ndarray:
    n, size, k = spec.samples_per_class, spec.image_size, spec.diversity_knob
    shape_name, _ = shape_for_class(spec.domain_id, y)
    predicate = SHAPES[shape_name]
    base_hue = _class_base_hue(spec.domain_id, y)

    # nuisance draws; zero range at knob=0 keeps the canonical image
    offset = rng.uniform(-1.0, 1.0, size=(n, 2)) * _MAX_OFFSET * k
    scale = 1.0 + rng.uniform(-1.0, 1.0, size=n) * _MAX_SCALE_JITTER * k
    shape_hue = base_hue + rng.uniform(-0.5, 0.5, size=n) * k
    bg_hue = base_hue + 0.5 + rng.uniform(-0.5, 0.5, size=n) * k
    stripe_phase = rng.uniform(0.0, 1.0, size=n) * k

    ss = size * _SUPERSAMPLE
    coords = (np.arange(ss) + 0.5) / ss - 0.5  # in [-0.5, 0.5)
    gy, gx = np.meshgrid(coords, coords, indexing="ij")
    radius = _BASE_RADIUS * scale
    x = (gx[None] - offset[:, 0, None, None]) / radius[:, None, None]
    yy = (gy[None] - offset[:, 1, None, None]) / radius[:, None, None]
    mask = predicate(x, yy).astype(np.float64)
    mask = mask.reshape(n, size, _SUPERSAMPLE, size, _SUPERSAMPLE).mean(axis=(2, 4))

    fg = _hsv_to_rgb(shape_hue, np.full(n, 0.85), np.full(n, 0.95))  # [n, 3]
    if spec.domain_id == "A":
        bg = np.broadcast_to(_hsv_to_rgb(bg_hue, np.full(n, 0.6), np.full(n, 0.3))[:, None, None, :], (n, size, size, 3))
    else:
        rows = (np.arange(size) + 0.5) / size
        stripes = (np.floor((rows[None, :] + stripe_phase[:, None]) * 5.0) % 2).astype(np.float64)  # [n, size]
        value = 0.18 + 0.22 * stripes
        bg = _hsv_to_rgb(
            np.broadcast_to(bg_hue[:, None], (n, size)),
            np.full((n, size), 0.6),
            value,
        )[:, :, None, :]
        bg = np.broadcast_to(bg, (n, size, size, 3))
    img = mask[..., None] * fg[:, None, None, :] + (1.0 - mask[..., None]) * bg
    if spec.channels == 1:
        img = img.mean(axis=-1, keepdims=True)
    return (img * 2.0 - 1.0).astype(np.float32)


def generate_dataset(spec: DatasetSpec) -> LabeledImageSet:
    """Render ``num_classes * samples_per_class`` images, class-major order."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    images = [_render_class(spec, y, rng) for y in range(spec.num_classes)]
    labels = np.repeat(np.arange(spec.num_classes, dtype=np.int64), spec.samples_per_class)
    out = np.clip(np.concatenate(images, axis=0), -1.0, 1.0)
    return LabeledImageSet(images=out, labels=labels, spec=spec)


def real_reference_stats(data: LabeledImageSet, classifier, n_pairs: int = 200, seed: int = 0):
    """Per-class reference statistics of a real image set.

    Args:
        data: labeled images.
        classifier: a ``ClassifierCheckpoint``; its penultimate features fit
            the Gaussian used by the Fréchet distance and its mid-layer tap
            drives the perceptual pair distance.
        n_pairs: pairs sampled for the MS-SSIM and perceptual references.
        seed: seed for pair sampling (one derived stream per class).

    Returns:
        dict mapping class index -> ``metrics.ReferenceStats``.
    """
    from . import metrics
    from .seeding import make_rng

    stats = {}
    for y in np.unique(data.labels):
        imgs = data.class_images(int(y))
        if len(imgs) < 2:
            raise InsufficientDataError(f"class {int(y)} has {len(imgs)} sample(s); need >= 2")
        stats[int(y)] = metrics.reference_stats_for(
            imgs, classifier, n_pairs=n_pairs, rng=make_rng(seed, "reference", int(y))
        )
    return stats
