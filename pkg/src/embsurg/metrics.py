"""Diversity and realism metrics for class-conditional image sets.

Diversity: mean pairwise MS-SSIM (lower = more diverse) and a perceptual
pair distance on unit-normalized mid-layer classifier features (higher =
more diverse). Realism: Inception-Score analog, Fréchet distance on
penultimate classifier features, and top-1 classifier accuracy.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import nets
from .errors import ConfigurationError, InsufficientDataError, ShapeError
from .objective import select_pairs

logger = logging.getLogger(__name__)

REPORT_VERSION = 1

# Standard 5-scale MS-SSIM weights; 32x32 inputs only host the last 3 scales.
MS_SSIM_WEIGHTS_5 = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MS_SSIM_SCALES = 3
MS_SSIM_WINDOW = 7
MS_SSIM_SIGMA = 1.5
FRECHET_EPS = 1e-6

METRIC_NAMES = ("is_mean", "is_std", "frechet", "accuracy", "ms_ssim", "perceptual")
# higher/lower-is-better annotations for report headers
METRIC_DIRECTION = {
    "is_mean": "higher=better",
    "is_std": "",
    "frechet": "lower=better",
    "accuracy": "higher=better",
    "ms_ssim": "lower=better",
    "perceptual": "higher=better",
}


def ms_ssim_weights(scales: int = MS_SSIM_SCALES) -> np.ndarray:
    w = np.asarray(MS_SSIM_WEIGHTS_5[-scales:], dtype=np.float64)
    return w / w.sum()


def _gaussian_window(size: int, sigma: float) -> torch.Tensor:
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
    g = torch.exp(-(coords**2) / (2 * sigma**2))
    g = g / g.sum()
    return g[:, None] * g[None, :]


def ms_ssim(x, y, scales: int = MS_SSIM_SCALES, window: int = MS_SSIM_WINDOW, sigma: float = MS_SSIM_SIGMA):
    """Multi-scale SSIM between paired image batches.

    Args:
        x, y: arrays [n, H, W, C] in [-1, 1] (mapped to [0, 1] internally).
        scales: number of dyadic scales; the smallest scale must still fit
            the Gaussian window.

    Returns:
        numpy array [n] of MS-SSIM values. Negative contrast-structure terms
        are clipped at 0 before exponentiation, so values lie in [0, 1].
    """
    x = torch.as_tensor(np.asarray(x), dtype=torch.float64)
    y = torch.as_tensor(np.asarray(y), dtype=torch.float64)
    if x.shape != y.shape or x.ndim != 4:
        raise ShapeError(f"ms_ssim needs two equal [n, H, W, C] batches, got {tuple(x.shape)} and {tuple(y.shape)}")
    min_side = window * 2 ** (scales - 1)
    if min(x.shape[1], x.shape[2]) < min_side:
        raise InsufficientDataError(f"images smaller than {min_side}px cannot host {scales} scales")
    x = ((x + 1.0) / 2.0).permute(0, 3, 1, 2)
    y = ((y + 1.0) / 2.0).permute(0, 3, 1, 2)
    channels = x.shape[1]
    kernel = _gaussian_window(window, sigma).expand(channels, 1, window, window).contiguous()
    c1, c2 = 0.01**2, 0.03**2
    weights = torch.as_tensor(ms_ssim_weights(scales))

    def blur(t):
        return F.conv2d(t, kernel, groups=channels)

    values = []
    for s in range(scales):
        mu_x, mu_y = blur(x), blur(y)
        sxx = blur(x * x) - mu_x**2
        syy = blur(y * y) - mu_y**2
        sxy = blur(x * y) - mu_x * mu_y
        cs_map = (2 * sxy + c2) / (sxx + syy + c2)
        if s == scales - 1:
            lum = (2 * mu_x * mu_y + c1) / (mu_x**2 + mu_y**2 + c1)
            values.append((lum * cs_map).mean(dim=(1, 2, 3)))
        else:
            values.append(cs_map.mean(dim=(1, 2, 3)))
            x = F.avg_pool2d(x, 2)
            y = F.avg_pool2d(y, 2)
    stacked = torch.relu(torch.stack(values, dim=1))
    return torch.prod(stacked ** weights[None, :], dim=1).numpy()


def _pair_indices(n: int, n_pairs: int, rng: np.random.Generator) -> np.ndarray:
    if n < 2:
        raise InsufficientDataError(f"need >= 2 images for pairwise metrics, got {n}")
    return np.asarray(select_pairs(n, min(n_pairs, n * (n - 1) // 2), rng), dtype=np.int64)


def ms_ssim_diversity(images, n_pairs: int = 200, rng: np.random.Generator | None = None) -> float:
    """Mean MS-SSIM over distinct random pairs (sampled without replacement)."""
    images = np.asarray(images)
    rng = rng if rng is not None else np.random.default_rng(0)
    pairs = _pair_indices(len(images), n_pairs, rng)
    return float(np.mean(ms_ssim(images[pairs[:, 0]], images[pairs[:, 1]])))


def _unit_features(p, images) -> np.ndarray:
    with torch.no_grad():
        f = nets.batched(lambda b: nets.features(p, b, "midlayer"), torch.as_tensor(np.asarray(images)))
    return f.to(torch.float64).numpy()


def perceptual_distances(feats: np.ndarray, pairs: np.ndarray) -> tuple[np.ndarray, int]:
    """Unit-normalized feature distances for index pairs; drops zero-norm pairs."""
    norms = np.linalg.norm(feats, axis=1)
    ok = (norms[pairs[:, 0]] > 0) & (norms[pairs[:, 1]] > 0)
    pairs = pairs[ok]
    a = feats[pairs[:, 0]] / norms[pairs[:, 0], None]
    b = feats[pairs[:, 1]] / norms[pairs[:, 1], None]
    return np.linalg.norm(a - b, axis=1), int((~ok).sum())


def perceptual_pair_distance(images, p, n_pairs: int = 200, rng: np.random.Generator | None = None) -> float:
    """Mean distance between unit-normalized mid-layer features of random pairs.

    Stands in for LPIPS: 0 for identical images, larger for more diverse sets.
    Pairs where either feature vector is all zeros are excluded (logged).
    """
    images = np.asarray(images)
    rng = rng if rng is not None else np.random.default_rng(0)
    pairs = _pair_indices(len(images), n_pairs, rng)
    d, excluded = perceptual_distances(_unit_features(p, images), pairs)
    if excluded:
        logger.warning("perceptual distance: excluded %d pair(s) with zero features", excluded)
    if len(d) == 0:
        raise InsufficientDataError("no valid pairs for perceptual distance")
    return float(d.mean())


def inception_score(probs, splits: int = 10) -> tuple[float, float]:
    """Per split exp(mean_x KL(p(y|x) || p(y))); returns (mean, std) over splits."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ShapeError("probs must be [N, K]")
    n = len(probs)
    if splits < 1 or n < splits:
        raise InsufficientDataError(f"need N >= splits (N={n}, splits={splits})")
    if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-4):
        raise ConfigurationError("rows of probs must be probability vectors (tolerance 1e-4)", "probs")
    scores = []
    for part in np.array_split(probs, splits):
        marginal = part.mean(axis=0, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(part > 0, part * (np.log(part) - np.log(marginal)), 0.0)
        scores.append(math.exp(terms.sum(axis=1).mean()))
    return float(np.mean(scores)), float(np.std(scores))


def _psd_sqrt(C: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh((C + C.T) / 2.0)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def frechet_distance(mu1, C1, mu2, C2, eps: float = FRECHET_EPS) -> float:
    """||mu1 - mu2||^2 + Tr(C1 + C2 - 2 (C1 C2)^{1/2}) via symmetric eigendecompositions.

    ``eps * I`` is added to both covariances; the trace of (C1 C2)^{1/2} is
    computed as Tr((S1 C2 S1)^{1/2}) with S1 = C1^{1/2}, which is symmetric
    PSD, so no complex square roots arise.
    """
    mu1, mu2 = np.atleast_1d(np.asarray(mu1, np.float64)), np.atleast_1d(np.asarray(mu2, np.float64))
    C1, C2 = np.atleast_2d(np.asarray(C1, np.float64)), np.atleast_2d(np.asarray(C2, np.float64))
    d = mu1.shape[0]
    if mu2.shape != (d,) or C1.shape != (d, d) or C2.shape != (d, d):
        raise ShapeError("frechet_distance: dimension mismatch")
    eye = np.eye(d) * eps
    C1 = (C1 + C1.T) / 2.0 + eye
    C2 = (C2 + C2.T) / 2.0 + eye
    S1 = _psd_sqrt(C1)
    M = S1 @ C2 @ S1
    tr_sqrt = np.sqrt(np.clip(np.linalg.eigvalsh((M + M.T) / 2.0), 0.0, None)).sum()
    diff = mu1 - mu2
    value = float(diff @ diff + np.trace(C1) + np.trace(C2) - 2.0 * tr_sqrt)
    return max(value, 0.0)


def classifier_accuracy(images, p, y: int) -> float:
    images = torch.as_tensor(np.asarray(images))
    if len(images) == 0:
        raise InsufficientDataError("classifier_accuracy needs a non-empty batch")
    probs = nets.batched(lambda b: nets.classify(p, b)[0], images)
    return float((probs.argmax(dim=1) == int(y)).double().mean())


def gaussian_fit(feats) -> tuple[np.ndarray, np.ndarray]:
    feats = np.asarray(feats, dtype=np.float64)
    if len(feats) < 2:
        raise InsufficientDataError("need >= 2 samples to fit a covariance")
    return feats.mean(axis=0), np.cov(feats, rowvar=False)


@dataclass
class ReferenceStats:
    mean: np.ndarray
    cov: np.ndarray
    ms_ssim: float
    perceptual: float
    n_images: int


def penultimate_features(p, images) -> np.ndarray:
    with torch.no_grad():
        f = nets.batched(lambda b: nets.features(p, b, "penultimate"), torch.as_tensor(np.asarray(images)))
    return f.to(torch.float64).numpy()


def reference_stats_for(images, p, n_pairs: int = 200, rng: np.random.Generator | None = None) -> ReferenceStats:
    rng = rng if rng is not None else np.random.default_rng(0)
    mu, C = gaussian_fit(penultimate_features(p, images))
    return ReferenceStats(
        mean=mu,
        cov=C,
        ms_ssim=ms_ssim_diversity(images, n_pairs, rng),
        perceptual=perceptual_pair_distance(images, p, n_pairs, rng),
        n_images=len(images),
    )


def evaluate_class_set(
    images,
    y: int,
    p,
    reference: ReferenceStats | None = None,
    n_pairs: int = 200,
    splits: int = 10,
    rng: np.random.Generator | None = None,
) -> dict:
    """All five metrics for one class's image set.

    Returns a dict with ``ms_ssim``, ``perceptual``, ``is_mean``, ``is_std``,
    ``frechet`` (None and ``frechet_missing=True`` without a reference),
    ``accuracy``, ``n_images`` and ``n_pairs``.
    """
    images = np.asarray(images)
    rng = rng if rng is not None else np.random.default_rng(0)
    with torch.no_grad():
        probs = nets.batched(lambda b: nets.classify(p, b)[0], torch.as_tensor(images)).to(torch.float64).numpy()
    probs = probs / probs.sum(axis=1, keepdims=True)
    is_mean, is_std = inception_score(probs, splits=min(splits, len(images)))
    out = {
        "ms_ssim": ms_ssim_diversity(images, n_pairs, rng),
        "perceptual": perceptual_pair_distance(images, p, n_pairs, rng),
        "is_mean": is_mean,
        "is_std": is_std,
        "accuracy": float((probs.argmax(axis=1) == int(y)).mean()),
        "frechet": None,
        "n_images": int(len(images)),
        "n_pairs": int(min(n_pairs, len(images) * (len(images) - 1) // 2)),
    }
    if reference is None:
        out["frechet_missing"] = True
    else:
        mu, C = gaussian_fit(penultimate_features(p, images))
        out["frechet"] = frechet_distance(mu, C, reference.mean, reference.cov)
    return out


def mix_sample_sets(set_a, set_b, n_each: int = 500, rng: np.random.Generator | None = None) -> np.ndarray:
    """Draw ``n_each`` images without replacement from each set, concatenate, shuffle."""
    set_a, set_b = np.asarray(set_a), np.asarray(set_b)
    if len(set_a) < n_each or len(set_b) < n_each:
        raise InsufficientDataError(f"each set needs >= {n_each} images (got {len(set_a)}, {len(set_b)})")
    rng = rng if rng is not None else np.random.default_rng(0)
    ia = rng.choice(len(set_a), n_each, replace=False)
    ib = rng.choice(len(set_b), n_each, replace=False)
    mixed = np.concatenate([set_a[ia], set_b[ib]], axis=0)
    return mixed[rng.permutation(len(mixed))]


@dataclass
class MetricReport:
    per_class: dict = field(default_factory=dict)  # class -> metric dict
    provenance: dict = field(default_factory=dict)
    version: int = REPORT_VERSION

    @property
    def aggregate(self) -> dict:
        """Unweighted mean of every metric across classes (None-valued entries skipped)."""
        agg = {}
        for name in METRIC_NAMES:
            vals = [m[name] for m in self.per_class.values() if m.get(name) is not None]
            agg[name] = float(np.mean(vals)) if vals else None
        return agg

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "provenance": self.provenance,
            "per_class": {str(k): v for k, v in sorted(self.per_class.items())},
            "aggregate": self.aggregate,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        if d.get("version") != REPORT_VERSION:
            raise ConfigurationError(f"unsupported metric report version {d.get('version')!r}", "version")
        return cls(per_class={int(k): v for k, v in d["per_class"].items()}, provenance=d.get("provenance", {}))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        cols = list(METRIC_NAMES) + ["n_images", "n_pairs"]
        writer.writerow(["class"] + cols)
        for k, m in sorted(self.per_class.items()):
            writer.writerow([k] + [m.get(c) for c in cols])
        return buf.getvalue()


def ms_ssim_provenance() -> dict:
    return {
        "ms_ssim_scales": MS_SSIM_SCALES,
        "ms_ssim_window": MS_SSIM_WINDOW,
        "ms_ssim_weights": ms_ssim_weights().tolist(),
        "perceptual_tap": "midlayer",
        "frechet_tap": "penultimate",
        "frechet_eps": FRECHET_EPS,
    }


def report_from_slices(slices: dict, provenance: dict | None = None) -> MetricReport:
    prov = ms_ssim_provenance()
    prov.update(provenance or {})
    return MetricReport(per_class=dict(slices), provenance=prov)


def asdict_stats(stats: ReferenceStats) -> dict:
    d = asdict(stats)
    d["mean"] = stats.mean.tolist()
    d["cov"] = stats.cov.tolist()
    return d


def evaluate_embedding(
    g,
    p,
    c,
    y: int,
    n_images: int = 1000,
    seed: int = 0,
    reference: ReferenceStats | None = None,
    n_pairs: int = 200,
    splits: int = 10,
) -> dict:
    """Sample ``n_images`` from embedding ``c`` and score them as class ``y`` of ``p``.

    Latents and pair draws depend only on ``seed``, so two embeddings
    evaluated with the same seed are compared on identical z.
    """
    from .sampling import sample_class_set
    from .seeding import make_rng

    images = sample_class_set(g, c, n_images, make_rng(seed, "eval-latents"))
    return evaluate_class_set(images, y, p, reference, n_pairs, splits, make_rng(seed, "eval-pairs"))
