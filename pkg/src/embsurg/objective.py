"""Embedding objectives: class log-likelihood, pairwise diversity, and their sum.

All three are stated as quantities to *maximize*:

    L_AM(c)   = mean_z log P(y_c | G(c, z))
    L_D(c)    = mean_(i,j) ||phi(G(c, z_i)) - phi(G(c, z_j))|| / ||z_i - z_j||
    L_AM-D(c) = L_AM(c) + lambda * L_D(c)

The diversity pairs are drawn from the same latent batch used for L_AM, so
a single generator pass serves both terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import nets
from .errors import ConfigurationError, DegeneratePairError

PHI_CHOICES = ("pixel", "midlayer", "softmax")


@dataclass(frozen=True)
class ObjectiveConfig:
    target_class: int
    lam: float = 0.0
    phi: str = "softmax"
    num_pairs: int = 10
    batch_size: int = 20

    def validate(self) -> "ObjectiveConfig":
        if self.lam < 0:
            raise ConfigurationError("lambda must be >= 0", "lam")
        if self.phi not in PHI_CHOICES:
            raise ConfigurationError(f"phi must be one of {PHI_CHOICES}", "phi")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1", "batch_size")
        if self.lam > 0 and not 0 < self.num_pairs <= self.batch_size * (self.batch_size - 1) // 2:
            raise ConfigurationError(
                f"num_pairs={self.num_pairs} infeasible for batch_size={self.batch_size}", "num_pairs"
            )
        return self


@dataclass
class LossBreakdown:
    total: torch.Tensor
    am: torch.Tensor
    diversity: torch.Tensor

    def as_floats(self) -> tuple[float, float, float]:
        return tuple(float(t.detach()) for t in (self.total, self.am, self.diversity))


def select_pairs(n_z: int, num_pairs: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """``num_pairs`` distinct unordered index pairs (i < j), uniform without replacement."""
    total = n_z * (n_z - 1) // 2
    if num_pairs < 0 or num_pairs > total:
        raise ConfigurationError(f"cannot draw {num_pairs} distinct pairs from {n_z} items (max {total})", "num_pairs")
    iu, ju = np.triu_indices(n_z, k=1)
    chosen = rng.choice(total, size=num_pairs, replace=False)
    return [(int(iu[k]), int(ju[k])) for k in chosen]


def am_loss(g, p, c, Z, y_c: int, images: torch.Tensor | None = None) -> torch.Tensor:
    """Mean log-probability of class ``y_c`` over generations G(c, z), z in Z.

    ``images`` may be passed to reuse an existing forward pass.
    """
    if Z is None or len(Z) == 0:
        raise ConfigurationError("am_loss needs a non-empty latent batch", "Z")
    if images is None:
        images = nets.generate(g, c, Z)
    _, logp = nets.classify(p, images)
    return logp[:, y_c].mean()


def _phi(p, images: torch.Tensor, phi: str) -> torch.Tensor:
    if phi not in PHI_CHOICES:
        raise ConfigurationError(f"phi must be one of {PHI_CHOICES}", "phi")
    if phi == "pixel":
        return images.reshape(images.shape[0], -1)
    return nets.features(p, images, phi)


def diversity_from_features(feats: torch.Tensor, Z: torch.Tensor, pairs) -> torch.Tensor:
    if len(pairs) == 0:
        raise ConfigurationError("diversity needs at least one pair", "pairs")
    seen = set()
    for i, j in pairs:
        if i == j or (min(i, j), max(i, j)) in seen:
            raise ConfigurationError(f"pairs must be distinct with i != j, got ({i}, {j})", "pairs")
        seen.add((min(i, j), max(i, j)))
    idx = torch.as_tensor(pairs, dtype=torch.long)
    dz = torch.linalg.vector_norm(Z[idx[:, 0]] - Z[idx[:, 1]], dim=1)
    if torch.any(dz == 0):
        raise DegeneratePairError("a latent pair has identical endpoints")
    df = torch.linalg.vector_norm(feats[idx[:, 0]] - feats[idx[:, 1]], dim=1)
    return (df / dz).mean()


def diversity_loss(g, c, Z, pairs, phi: str = "pixel", p=None, images: torch.Tensor | None = None) -> torch.Tensor:
    """Mean ratio of feature-space distance to latent distance over ``pairs``.

    ``p`` (a classifier) is required for the midlayer and softmax spaces.
    """
    if phi != "pixel" and p is None:
        raise ConfigurationError(f"phi={phi!r} needs a classifier", "p")
    Z = torch.as_tensor(Z, dtype=g.dtype)
    if images is None:
        images = nets.generate(g, c, Z)
    return diversity_from_features(_phi(p, images, phi), Z, pairs)


def combined_loss(g, p, c, Z, cfg: ObjectiveConfig, pairs=None) -> LossBreakdown:
    """L_AM + lambda * L_D over one latent batch.

    With ``lam == 0`` the diversity term is not evaluated and ``total`` is
    exactly ``am_loss`` on the same batch.
    """
    Z = torch.as_tensor(Z, dtype=g.dtype)
    images = nets.generate(g, c, Z)
    am = am_loss(g, p, c, Z, cfg.target_class, images=images)
    if cfg.lam == 0:
        zero = torch.zeros((), dtype=am.dtype)
        if pairs is not None and len(pairs) > 0:
            with torch.no_grad():
                zero = diversity_from_features(_phi(p, images.detach(), cfg.phi), Z, pairs)
        return LossBreakdown(total=am, am=am, diversity=zero)
    if pairs is None:
        raise ConfigurationError("lambda > 0 needs latent pairs", "pairs")
    div = diversity_from_features(_phi(p, images, cfg.phi), Z, pairs)
    return LossBreakdown(total=am + cfg.lam * div, am=am, diversity=div)
