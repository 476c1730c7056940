"""Class-embedding optimization loop and multi-trial orchestration.

Regimes:

    AM-S    init uniformly inside a ball around the class's own embedding, lr 0.01
    AM-L    init uniformly inside a ball around the mean embedding, lr 0.1
    AM-D-S  AM-S plus a softmax diversity term with lambda = 2
    AM-D-L  AM-L plus the same diversity term

Every run: Adam with default betas, 200 steps, a fresh batch of 20 latents
every 20 steps, and coordinate-wise clipping of the embedding after each
step. The generator and classifier are never modified.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from . import nets
from .errors import ConfigurationError, OptimizationDiverged, StateError
from .objective import ObjectiveConfig, combined_loss, select_pairs
from .seeding import sample_latents, trial_seed

logger = logging.getLogger(__name__)

INIT_STRATEGIES = ("around-original", "around-mean", "top-k", "explicit")
BALL_DISTRIBUTIONS = ("uniform-ball", "truncated-gaussian")
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

REGIMES = {
    # regime: (init strategy, learning rate, lambda)
    "AM-S": ("around-original", 0.01, 0.0),
    "AM-L": ("around-mean", 0.1, 0.0),
    "AM-D-S": ("around-original", 0.01, 2.0),
    "AM-D-L": ("around-mean", 0.1, 2.0),
}


def normalize_regime(name: str) -> str:
    key = name.strip().upper()
    if key not in REGIMES:
        raise ConfigurationError(f"unknown regime {name!r}; expected one of {sorted(REGIMES)}", "regime")
    return key


@dataclass(frozen=True)
class InitSpec:
    strategy: str = "around-original"
    radius: float = 0.1
    k: int = 5
    vector: tuple | None = None
    distribution: str = "uniform-ball"

    def validate(self) -> "InitSpec":
        if self.strategy not in INIT_STRATEGIES:
            raise ConfigurationError(f"unknown init strategy {self.strategy!r}", "strategy")
        if self.strategy in ("around-original", "around-mean") and self.radius < 0:
            raise ConfigurationError("radius must be >= 0", "radius")
        if self.distribution not in BALL_DISTRIBUTIONS:
            raise ConfigurationError(f"unknown ball distribution {self.distribution!r}", "distribution")
        if self.strategy == "explicit" and self.vector is None:
            raise ConfigurationError("explicit init needs a vector", "vector")
        if self.strategy == "top-k" and self.k < 1:
            raise ConfigurationError("k must be >= 1", "k")
        return self


@dataclass(frozen=True)
class OptimizationConfig:
    regime: str = "AM-L"
    learning_rate: float = 0.1
    steps: int = 200
    resample_interval: int = 20
    batch_size: int = 20
    objective: ObjectiveConfig = ObjectiveConfig(target_class=0)
    clip_bounds: tuple | None = None
    init: InitSpec = InitSpec(strategy="around-mean")
    trials: int = 5
    seed: int = 0

    @classmethod
    def for_regime(cls, regime: str, target_class: int, **overrides) -> "OptimizationConfig":
        """Config with the regime's documented defaults; ``overrides`` win.

        ``lam``/``phi``/``num_pairs``/``radius`` are accepted as shortcuts
        into the nested objective and init records.
        """
        regime = normalize_regime(regime)
        strategy, lr, lam = REGIMES[regime]
        obj_kw = {k: overrides.pop(k) for k in ("lam", "phi", "num_pairs") if k in overrides}
        init_kw = {k: overrides.pop(k) for k in ("radius", "distribution") if k in overrides}
        batch = overrides.get("batch_size", 20)
        objective = overrides.pop("objective", None) or ObjectiveConfig(
            target_class=target_class, lam=obj_kw.get("lam", lam), batch_size=batch,
            **{k: v for k, v in obj_kw.items() if k != "lam"},
        )
        init = overrides.pop("init", None) or InitSpec(strategy=strategy, **init_kw)
        kw = dict(regime=regime, learning_rate=lr, objective=objective, init=init)
        kw.update(overrides)
        return cls(**kw).validate()

    def validate(self) -> "OptimizationConfig":
        if self.steps < 0:
            raise ConfigurationError("steps must be >= 0", "steps")
        if self.resample_interval < 1:
            raise ConfigurationError("resample_interval must be >= 1", "resample_interval")
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be >= 0", "learning_rate")
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1", "trials")
        if self.batch_size != self.objective.batch_size:
            raise ConfigurationError("batch_size must match objective.batch_size", "batch_size")
        if self.clip_bounds is not None and not self.clip_bounds[0] < self.clip_bounds[1]:
            raise ConfigurationError("clip bounds need lo < hi", "clip_bounds")
        self.objective.validate()
        self.init.validate()
        return self

    def replace(self, **kw) -> "OptimizationConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizationConfig":
        d = dict(d)
        d["objective"] = ObjectiveConfig(**d["objective"])
        init = dict(d["init"])
        if init.get("vector") is not None:
            init["vector"] = tuple(init["vector"])
        d["init"] = InitSpec(**init)
        if d.get("clip_bounds") is not None:
            d["clip_bounds"] = tuple(d["clip_bounds"])
        return cls(**d)


@dataclass
class TrialResult:
    final_embedding: np.ndarray | None
    trace: np.ndarray  # [steps, 3]: (L_total, L_AM, L_D), objective as maximized
    init_embedding: np.ndarray | None
    seed: int
    wall_time: float
    target_class: int
    trial_index: int = 0
    regime: str = ""
    method: str = "am"
    clip_bounds: tuple | None = None
    metrics: dict | None = None
    error: str | None = None
    provenance: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return self.error is not None

    def trace_csv(self) -> str:
        lines = ["step,L_total,L_AM,L_D"]
        for i, (t, a, d) in enumerate(self.trace):
            lines.append(f"{i},{float(t)!r},{float(a)!r},{float(d)!r}")
        return "\n".join(lines) + "\n"


def compute_clip_bounds(W, margin: float = 0.0) -> tuple[float, float]:
    """[min(W) - margin, max(W) + margin] over all entries."""
    W = np.asarray(W.detach().cpu() if isinstance(W, torch.Tensor) else W, dtype=np.float64)
    return float(W.min() - margin), float(W.max() + margin)


def default_clip_bounds(g) -> tuple[float, float]:
    """Bounds of the trained embedding matrix (kept through corruption) or of W."""
    bounds = g.meta.get("embedding_bounds")
    if bounds is not None:
        return float(bounds[0]), float(bounds[1])
    return compute_clip_bounds(g.embedding)


def _ball_sample(dim: int, radius: float, rng: np.random.Generator, distribution: str) -> np.ndarray:
    if radius == 0:
        return np.zeros(dim)
    if distribution == "uniform-ball":
        u = rng.standard_normal(dim)
        u /= np.linalg.norm(u)
        return u * radius * rng.uniform() ** (1.0 / dim)
    # isotropic Gaussian with std radius/sqrt(dim), rejected outside the ball
    while True:
        v = rng.standard_normal(dim) * radius / np.sqrt(dim)
        if np.linalg.norm(v) <= radius:
            return v


def init_embedding(W, y: int, spec: InitSpec, rng: np.random.Generator, ranking=None, rank_index: int = 0) -> np.ndarray:
    """Starting embedding for one trial.

    ``ranking`` is the output of ``repurpose.rank_source_classes`` and is
    required by the ``top-k`` strategy, which returns row
    ``ranking[rank_index]`` of W verbatim.
    """
    spec.validate()
    W = np.asarray(W.detach().cpu() if isinstance(W, torch.Tensor) else W, dtype=np.float64)
    d = W.shape[1]
    if spec.strategy == "around-original":
        if not 0 <= y < W.shape[0]:
            raise ConfigurationError(f"class {y} has no row in W", "y")
        return W[y] + _ball_sample(d, spec.radius, rng, spec.distribution)
    if spec.strategy == "around-mean":
        return W.mean(axis=0) + _ball_sample(d, spec.radius, rng, spec.distribution)
    if spec.strategy == "top-k":
        if ranking is None:
            raise ConfigurationError("top-k init needs a ranking from a probe classifier", "ranking")
        if rank_index >= min(spec.k, len(ranking)):
            raise ConfigurationError(f"rank index {rank_index} outside top-{spec.k}", "k")
        return W[int(ranking[rank_index][0])].copy()
    vec = np.asarray(spec.vector, dtype=np.float64)
    if vec.shape != (d,):
        raise ConfigurationError(f"explicit vector must have length {d}", "vector")
    return vec.copy()


def optimize_embedding(
    g, p, y: int, cfg: OptimizationConfig, rng: np.random.Generator, *, init=None, ranking=None, rank_index: int = 0
) -> TrialResult:
    """Run one optimization trial and return the last-step embedding.

    Args:
        g: frozen GeneratorCheckpoint.
        p: frozen ClassifierCheckpoint whose class ``y`` is the target.
        y: target class of ``p``.
        cfg: optimization settings.
        rng: numpy stream for the init draw, latent batches, and pairs.
        init: optional explicit starting vector (overrides ``cfg.init``).

    Raises:
        OptimizationDiverged: on a non-finite objective; carries the trace.
    """
    cfg.validate()
    if not 0 <= y < p.num_classes:
        raise ConfigurationError(f"target class {y} out of range for the classifier", "y")
    if cfg.objective.target_class != y:
        cfg = cfg.replace(objective=dataclasses.replace(cfg.objective, target_class=y))
    g_sum, p_sum = g.body_checksum(), p.checksum()
    t0 = time.perf_counter()

    if init is None:
        init = init_embedding(g.embedding, y, cfg.init, rng, ranking=ranking, rank_index=rank_index)
    init = np.asarray(init, dtype=np.float64)
    lo, hi = cfg.clip_bounds if cfg.clip_bounds is not None else default_clip_bounds(g)
    c = torch.nn.Parameter(torch.as_tensor(np.clip(init, lo, hi), dtype=g.dtype))
    opt = torch.optim.Adam([c], lr=cfg.learning_rate, betas=ADAM_BETAS, eps=ADAM_EPS)

    trace = []
    Z = pairs = None
    n_pairs = min(cfg.objective.num_pairs, cfg.batch_size * (cfg.batch_size - 1) // 2)
    for step in range(cfg.steps):
        if step % cfg.resample_interval == 0:
            Z = sample_latents(rng, cfg.batch_size, g.latent_dim, g.dtype)
            pairs = select_pairs(cfg.batch_size, n_pairs, rng) if n_pairs > 0 else None
        loss = combined_loss(g, p, c, Z, cfg.objective, pairs)
        values = loss.as_floats()
        trace.append(values)
        if not np.all(np.isfinite(values)):
            raise OptimizationDiverged(f"non-finite objective at step {step}", trace=trace)
        opt.zero_grad()
        (-loss.total).backward()
        opt.step()
        with torch.no_grad():
            c.clamp_(lo, hi)

    if g.body_checksum() != g_sum or p.checksum() != p_sum:
        raise StateError("frozen generator or classifier parameters changed during optimization")
    return TrialResult(
        final_embedding=c.detach().to(torch.float64).numpy().copy(),
        trace=np.asarray(trace, dtype=np.float64).reshape(-1, 3),
        init_embedding=init,
        seed=-1,
        wall_time=time.perf_counter() - t0,
        target_class=int(y),
        regime=cfg.regime,
        clip_bounds=(float(lo), float(hi)),
        provenance={"config": cfg.to_dict()},
    )


def run_trials(g, p, y: int, cfg: OptimizationConfig, *, ranking=None, inits=None) -> list[TrialResult]:
    """``cfg.trials`` independent trials; trial t is seeded with ``cfg.seed ^ t``.

    A diverged trial is recorded with ``error`` set; if every trial fails the
    last error is re-raised.
    """
    cfg.validate()
    results = []
    last_error = None
    for t in range(cfg.trials):
        seed = trial_seed(cfg.seed, t)
        rng = np.random.default_rng(seed)
        init = None if inits is None else inits[t]
        try:
            res = optimize_embedding(g, p, y, cfg, rng, init=init, ranking=ranking, rank_index=t)
        except OptimizationDiverged as exc:
            logger.warning("trial %d diverged: %s", t, exc)
            last_error = exc
            res = TrialResult(
                final_embedding=None,
                trace=np.asarray(exc.trace, dtype=np.float64).reshape(-1, 3),
                init_embedding=None,
                seed=seed,
                wall_time=0.0,
                target_class=int(y),
                regime=cfg.regime,
                error=str(exc),
            )
        res.seed = seed
        res.trial_index = t
        results.append(res)
    if all(r.failed for r in results):
        raise last_error
    return results


SELECTION_RULES = ("best-perceptual", "best-accuracy", "index")


def select_trial(results: list[TrialResult], rule: str = "best-perceptual", index: int = 0) -> TrialResult:
    """Pick one trial; metric ties go to the lowest trial index."""
    ok = [r for r in results if not r.failed]
    if not ok:
        raise StateError("no successful trials to select from")
    if rule not in SELECTION_RULES:
        raise ConfigurationError(f"unknown selection rule {rule!r}", "rule")
    if len(ok) == 1:
        return ok[0]
    if rule == "index":
        return results[index]
    key = "perceptual" if rule == "best-perceptual" else "accuracy"
    if any(r.metrics is None or key not in r.metrics for r in ok):
        raise StateError(f"rule {rule!r} needs '{key}' metrics attached to every trial")
    best = ok[0]
    for r in ok[1:]:
        if r.metrics[key] > best.metrics[key]:
            best = r
    return best
