"""Seed fan-out: one global seed -> independent labeled streams."""

from __future__ import annotations

import hashlib
import os

import numpy as np
import torch

SEED_ENV_VAR = "EMBSURG_SEED"


def derive_seed(seed: int, *labels) -> int:
    """Deterministically derive a 63-bit child seed from ``seed`` and labels."""
    h = hashlib.sha256(str(int(seed)).encode())
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode())
    return int.from_bytes(h.digest()[:8], "little") & ((1 << 63) - 1)


def make_rng(seed: int, *labels) -> np.random.Generator:
    if labels:
        seed = derive_seed(seed, *labels)
    return np.random.default_rng(seed)


def trial_seed(seed: int, trial: int) -> int:
    return int(seed) ^ int(trial)


def env_seed(default: int | None = None) -> int | None:
    value = os.environ.get(SEED_ENV_VAR)
    if value is None or value.strip() == "":
        return default
    return int(value)


def seed_torch(seed: int) -> None:
    torch.manual_seed(seed & 0xFFFF_FFFF_FFFF)


def sample_latents(rng: np.random.Generator, n: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    """Draw ``n`` latent vectors from N(0, I) using a numpy stream."""
    return torch.from_numpy(rng.standard_normal((n, dim))).to(dtype)
