"""Comparison treatments: embedding noise and single-row adversarial finetuning."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
import torch

from . import nets
from .errors import CapabilityError, ConfigurationError, OptimizationDiverged, StateError
from .optimizer import TrialResult
from .seeding import sample_latents

logger = logging.getLogger(__name__)

FINETUNE_INIT_SIGMA = 0.1
EXPLODE_FACTOR = 10.0


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.1

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigurationError("sigma must be >= 0", "sigma")


def embedding_scale(W) -> float:
    """Half-width of the embedding value range relative to a reference half-width of 0.6.

    Makes noise levels comparable across embedding matrices of different
    magnitude: a matrix whose entries span [-0.6, 0.6] has scale 1.
    """
    W = np.asarray(W.detach().cpu() if isinstance(W, torch.Tensor) else W, dtype=np.float64)
    return float((W.max() - W.min()) / 2.0 / 0.6)


def noise_baseline(W, y: int, spec: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    """W[y] + eps with eps ~ N(0, sigma^2 I); ``W`` is not modified."""
    W = np.asarray(W.detach().cpu() if isinstance(W, torch.Tensor) else W, dtype=np.float64)
    if not 0 <= y < W.shape[0]:
        raise ConfigurationError(f"class {y} out of range", "y")
    return W[y] + rng.standard_normal(W.shape[1]) * spec.sigma


def finetune_embedding(
    g,
    d,
    y: int,
    iters: int = 10,
    rng: np.random.Generator | None = None,
    *,
    lr: float | None = None,
    batch_size: int = 64,
    init_sigma: float = FINETUNE_INIT_SIGMA,
):
    """Adversarially finetune row ``y`` of W against a frozen discriminator.

    The row starts at ``W[y] + N(0, 0.1^2)`` and takes ``iters`` Adam steps on
    the generator loss the toy GAN was trained with (hinge: -D(G(c, z), y)).
    Everything else (generator body, other rows, discriminator) stays fixed.
    Training stops early if the loss exceeds 10x its initial magnitude.

    Returns:
        (embedding, loss trace)

    Raises:
        CapabilityError: if no discriminator is available.
        OptimizationDiverged: on a non-finite loss.
    """
    if d is None:
        raise CapabilityError("finetuning needs the generator's discriminator")
    if not 0 <= y < g.num_classes:
        raise ConfigurationError(f"class {y} out of range", "y")
    rng = rng if rng is not None else np.random.default_rng(0)
    if lr is None:
        lr = float(g.meta.get("lr_g", 2e-4))
    betas = tuple(g.meta.get("train", {}).get("betas", (0.0, 0.9)))
    d_sum, g_sum = d.checksum(), g.body_checksum()

    W = g.embedding.clone()
    start = W[y].to(torch.float64).numpy() + rng.standard_normal(g.embed_dim) * init_sigma
    c = torch.nn.Parameter(torch.as_tensor(start, dtype=g.dtype))
    opt = torch.optim.Adam([c], lr=lr, betas=betas)
    labels = torch.full((batch_size,), int(y), dtype=torch.long)
    trace = []
    for it in range(iters):
        Z = sample_latents(rng, batch_size, g.latent_dim, g.dtype)
        x = nets.generate(g, c, Z).permute(0, 3, 1, 2)
        loss = -d.net(x, labels).mean()
        value = float(loss.detach())
        if not np.isfinite(value):
            raise OptimizationDiverged(f"finetuning collapsed at iteration {it}", trace=trace)
        if trace and abs(value) > EXPLODE_FACTOR * max(abs(trace[0]), 1e-8):
            logger.info("finetuning stopped at iteration %d: loss exploded", it)
            break
        trace.append(value)
        opt.zero_grad()
        loss.backward()
        opt.step()

    if d.checksum() != d_sum or g.body_checksum() != g_sum:
        raise StateError("finetuning modified frozen parameters")
    return c.detach().to(torch.float64).numpy().copy(), trace


def baseline_result(embedding, y: int, method: str, seed: int, trace=(), init=None, wall_time: float = 0.0, **prov) -> TrialResult:
    """Wrap a baseline embedding as a TrialResult flagged with its method."""
    tr = np.zeros((len(trace), 3))
    if len(trace):
        # finetuning minimizes the generator loss; record the maximized form
        tr[:, 0] = -np.asarray(trace)
    return TrialResult(
        final_embedding=np.asarray(embedding, dtype=np.float64),
        trace=tr,
        init_embedding=None if init is None else np.asarray(init, dtype=np.float64),
        seed=seed,
        wall_time=wall_time,
        target_class=int(y),
        method=method,
        provenance=dict(prov),
    )


def run_noise_baseline(g, y: int, sigma: float, seed: int) -> TrialResult:
    t0 = time.perf_counter()
    emb = noise_baseline(g.embedding, y, NoiseSpec(sigma), np.random.default_rng(seed))
    return baseline_result(emb, y, "noise", seed, wall_time=time.perf_counter() - t0, sigma=sigma)


def run_finetune_baseline(g, d, y: int, seed: int, iters: int = 10, **kw) -> TrialResult:
    t0 = time.perf_counter()
    emb, trace = finetune_embedding(g, d, y, iters, np.random.default_rng(seed), **kw)
    return baseline_result(
        emb, y, "finetune", seed, trace=trace, wall_time=time.perf_counter() - t0,
        iters=iters, loss=g.meta.get("loss", "hinge"), lr=kw.get("lr", g.meta.get("lr_g")),
    )
