"""Re-purposing a source-domain generator for target-domain classes.

The generator (trained on domain A) is left untouched; new embeddings are
searched against a classifier trained only on domain B.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from . import nets
from .errors import ConfigurationError, InsufficientDataError, StateError
from .metrics import evaluate_embedding
from .optimizer import OptimizationConfig, TrialResult, run_trials, select_trial
from .seeding import make_rng, sample_latents

logger = logging.getLogger(__name__)


@torch.no_grad()
def rank_source_classes(g, p_target, y_b: int, samples_per_class: int = 10, rng: np.random.Generator | None = None):
    """Source classes sorted by the mean target probability of their samples.

    Each source embedding generates ``samples_per_class`` images (the same z
    for every class); returns ``[(source_class, mean p_target(y_b)), ...]``
    in non-increasing score order, ties broken by class index.
    """
    if not 0 <= y_b < p_target.num_classes:
        raise ConfigurationError(f"target class {y_b} out of range", "y_b")
    rng = rng if rng is not None else np.random.default_rng(0)
    Z = sample_latents(rng, samples_per_class, g.latent_dim, g.dtype)
    scores = []
    for k in range(g.num_classes):
        probs, _ = nets.classify(p_target, nets.generate(g, g.embedding[k], Z))
        scores.append((k, float(probs[:, y_b].mean())))
    return sorted(scores, key=lambda kv: (-kv[1], kv[0]))


@dataclass
class RepurposeTask:
    generator: object
    classifier: object
    target_class: int
    init: str = "around-mean"  # or "top-k"
    trials: int = 5
    k: int = 5
    radius: float = 0.1
    seed: int = 0
    cfg_overrides: dict = field(default_factory=dict)
    n_eval: int = 1000
    eval_seed: int = 0
    rank_samples: int = 10
    reference: object = None  # metrics.ReferenceStats of real target-class data
    selection_rule: str = "best-accuracy"

    def config(self) -> OptimizationConfig:
        if self.init not in ("around-mean", "top-k"):
            raise ConfigurationError("repurpose init must be 'around-mean' or 'top-k'", "init")
        from .optimizer import InitSpec

        trials = self.k if self.init == "top-k" else self.trials
        init = InitSpec(strategy=self.init, radius=self.radius, k=self.k)
        overrides = dict(self.cfg_overrides)
        overrides.setdefault("seed", self.seed)
        return OptimizationConfig.for_regime("AM-L", self.target_class, init=init, trials=trials, **overrides)


@dataclass
class RepurposeResult:
    trials: list
    selected: TrialResult
    baseline: TrialResult
    ranking: list


def _attach_metrics(task: RepurposeTask, result: TrialResult) -> TrialResult:
    result.metrics = evaluate_embedding(
        task.generator, task.classifier, result.final_embedding, task.target_class,
        n_images=task.n_eval, seed=task.eval_seed, reference=task.reference,
    )
    return result


def repurpose_class(task: RepurposeTask) -> RepurposeResult:
    """AM-L trials for one target class plus the top-1 source-class baseline.

    ``around-mean`` runs ``trials`` trials from balls around mean(W);
    ``top-k`` runs one trial per top-k source embedding. The baseline is the
    unmodified top-1 source embedding scored by the target classifier on the
    same evaluation latents as the trials.
    """
    g, p = task.generator, task.classifier
    cfg = task.config()
    ranking = rank_source_classes(g, p, task.target_class, task.rank_samples, make_rng(task.seed, "rank"))
    if task.init == "top-k" and len(ranking) < task.k:
        cfg = cfg.replace(trials=len(ranking))
    results = run_trials(g, p, task.target_class, cfg, ranking=ranking if task.init == "top-k" else None)
    for r in results:
        if not r.failed:
            _attach_metrics(task, r)
            r.method = f"repurpose-{task.init}"
    top1 = ranking[0][0]
    baseline = TrialResult(
        final_embedding=g.embedding[top1].to(torch.float64).numpy().copy(),
        trace=np.zeros((0, 3)),
        init_embedding=None,
        seed=task.eval_seed,
        wall_time=0.0,
        target_class=task.target_class,
        method="top1-baseline",
        provenance={"source_class": int(top1), "rank_score": ranking[0][1]},
    )
    _attach_metrics(task, baseline)
    selected = select_trial(results, task.selection_rule)
    return RepurposeResult(trials=results, selected=selected, baseline=baseline, ranking=ranking)


def multi_embedding_styles(trials: list, n_embeddings: int = 2, rule: str = "best-accuracy") -> list:
    """Pick ``n_embeddings`` mutually distant trial embeddings (greedy farthest point).

    The first pick is the best trial under ``rule``; each further pick
    maximizes its minimum distance to the embeddings already chosen.
    """
    ok = [t for t in trials if not t.failed]
    if len(ok) < n_embeddings:
        raise InsufficientDataError(f"need {n_embeddings} successful trials, have {len(ok)}")
    chosen = [select_trial(ok, rule)]
    while len(chosen) < n_embeddings:
        best, best_d = None, -1.0
        for t in ok:
            if any(t is c for c in chosen):
                continue
            dist = min(float(np.linalg.norm(t.final_embedding - c.final_embedding)) for c in chosen)
            if dist > best_d:
                best, best_d = t, dist
        if best_d <= 0:
            raise StateError("remaining trial embeddings coincide with the chosen ones")
        chosen.append(best)
    return chosen
