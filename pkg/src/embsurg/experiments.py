"""Experiment harness: the reference fixture and one function per study.

``build_fixture`` trains (or loads from a cache directory) everything the
studies share: the domain-A classifier, the conditional GAN with its
snapshots and discriminator, the domain-B classifier, and real-data
reference statistics. Each study function returns a plain dict of numbers
plus the TrialResults it produced; pass/fail judgement is left to callers.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import baselines, container, nets
from .config import ExperimentConfig
from .errors import IntegrityError, UnsupportedVersionError
from .metrics import evaluate_class_set, evaluate_embedding, mix_sample_sets
from .optimizer import REGIMES, OptimizationConfig, TrialResult, run_trials, select_trial
from .repurpose import RepurposeTask, repurpose_class
from .sampling import InterpolationSpec, interpolate, sample_class_set
from .seeding import derive_seed, make_rng, sample_latents
from .synthdata import generate_dataset, real_reference_stats

logger = logging.getLogger(__name__)


@dataclass
class Fixture:
    config: ExperimentConfig
    generator: nets.GeneratorCheckpoint
    discriminator: nets.DiscriminatorCheckpoint
    snapshots: list  # [(iteration, GeneratorCheckpoint)]
    classifier: nets.ClassifierCheckpoint
    target_classifier: nets.ClassifierCheckpoint
    reference: dict = field(default_factory=dict)  # class -> ReferenceStats (domain A)
    target_reference: dict = field(default_factory=dict)  # class -> ReferenceStats (domain B)
    timings: dict = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return self.config.seed

    def provenance(self, **extra) -> dict:
        prov = {"config_digest": self.config.digest(), "seed": self.seed}
        prov.update(extra)
        return prov


def seeded_spec(cfg: ExperimentConfig, name: str):
    """Dataset spec ``name`` with its seed folded into the global seed."""
    spec = getattr(cfg, name)
    return dataclasses.replace(spec, seed=derive_seed(cfg.seed, "data", name, spec.seed))


def _component_configs(cfg: ExperimentConfig):
    gan_cfg = dataclasses.replace(cfg.gan_train, seed=derive_seed(cfg.seed, "gan-train", cfg.gan_train.seed))
    clf_cfg = dataclasses.replace(
        cfg.classifier_train, seed=derive_seed(cfg.seed, "classifier-train", cfg.classifier_train.seed)
    )
    tgt_cfg = dataclasses.replace(
        cfg.classifier_train, seed=derive_seed(cfg.seed, "target-classifier-train", cfg.classifier_train.seed)
    )
    return gan_cfg, clf_cfg, tgt_cfg


def _fixture_files(root: Path) -> dict:
    return {
        "generator": root / "generator.emb",
        "discriminator": root / "discriminator.emb",
        "classifier": root / "classifier.emb",
        "target_classifier": root / "target_classifier.emb",
    }


def _load_cached(root: Path):
    files = _fixture_files(root)
    if not all(p.exists() for p in files.values()):
        return None
    try:
        parts = {k: container.load(p) for k, p in files.items()}
        snaps = []
        for p in sorted(root.glob("snapshot_*.emb"), key=lambda q: int(q.stem.split("_")[1])):
            snaps.append((int(p.stem.split("_")[1]), container.load(p, expect="generator")))
    except (IntegrityError, UnsupportedVersionError) as exc:
        logger.warning("ignoring damaged fixture cache %s: %s", root, exc)
        return None
    return parts, snaps


def train_components(cfg: ExperimentConfig):
    """Train classifier, GAN and target classifier from scratch."""
    gan_cfg, clf_cfg, tgt_cfg = _component_configs(cfg)
    timings = {}
    t0 = time.perf_counter()
    clf = nets.train_toy_classifier(generate_dataset(seeded_spec(cfg, "classifier_data")), clf_cfg, cfg.classifier)
    timings["classifier"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    gan_data = generate_dataset(seeded_spec(cfg, "gan_data"))
    g, d, snaps = nets.train_toy_gan(gan_data, gan_cfg, cfg.generator)
    timings["gan"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    tgt_spec = seeded_spec(cfg, "target_data")
    tgt_net = dataclasses.replace(
        cfg.classifier, num_classes=tgt_spec.num_classes, image_size=tgt_spec.image_size, channels=tgt_spec.channels
    )
    tgt = nets.train_toy_classifier(generate_dataset(tgt_spec), tgt_cfg, tgt_net)
    timings["target_classifier"] = time.perf_counter() - t0
    parts = {"generator": g, "discriminator": d, "classifier": clf, "target_classifier": tgt}
    return parts, snaps, timings


def build_fixture(cfg: ExperimentConfig, cache_dir=None) -> Fixture:
    """Train or load the shared artifacts and compute real-data references.

    With ``cache_dir`` the trained artifacts are stored under
    ``<cache_dir>/fixture-<config digest>/`` and reused on later calls.
    """
    cfg.validate()
    root = Path(cache_dir) / f"fixture-{cfg.digest()}" if cache_dir is not None else None
    cached = _load_cached(root) if root is not None else None
    timings = {}
    if cached is None:
        parts, snaps, timings = train_components(cfg)
        if root is not None:
            prov = {"config_digest": cfg.digest(), "seed": cfg.seed}
            for name, path in _fixture_files(root).items():
                container.save(path, parts[name], seed=cfg.seed, provenance=prov)
            for it, snap in snaps:
                container.save(root / f"snapshot_{it}.emb", snap, seed=cfg.seed, provenance={**prov, "iteration": it})
    else:
        parts, snaps = cached

    n_pairs = cfg.metrics.n_pairs
    ref_data = generate_dataset(seeded_spec(cfg, "reference_data"))
    reference = real_reference_stats(ref_data, parts["classifier"], n_pairs, derive_seed(cfg.seed, "reference"))
    tgt_spec = dataclasses.replace(
        seeded_spec(cfg, "target_data"), seed=derive_seed(cfg.seed, "target-reference"), samples_per_class=200
    )
    target_reference = real_reference_stats(
        generate_dataset(tgt_spec), parts["target_classifier"], n_pairs, derive_seed(cfg.seed, "target-reference")
    )
    return Fixture(
        config=cfg,
        snapshots=snaps,
        reference=reference,
        target_reference=target_reference,
        timings=timings,
        **parts,
    )


# ---------------------------------------------------------------------------
# shared helpers


def eval_seed(fx: Fixture) -> int:
    return derive_seed(fx.seed, "eval")


def evaluate(fx: Fixture, g, c, y: int, classifier=None, reference=None) -> dict:
    """Metrics for embedding ``c`` on the shared evaluation latents."""
    m = fx.config.metrics
    p = classifier if classifier is not None else fx.classifier
    if reference is None and p is fx.classifier:
        reference = fx.reference.get(y)
    return evaluate_embedding(g, p, c, y, m.n_images, eval_seed(fx), reference, m.n_pairs, m.is_splits)


def optimization_config(fx: Fixture, regime: str, y: int, **overrides) -> OptimizationConfig:
    """Regime defaults from the experiment config; trial seeds derive from the global seed."""
    o = fx.config.optimization
    strategy, _, lam = REGIMES[regime.upper()]
    kw = dict(
        steps=o.steps,
        resample_interval=o.resample_interval,
        batch_size=o.batch_size,
        trials=o.trials,
        learning_rate=o.lr_small if strategy == "around-original" else o.lr_large,
        num_pairs=o.num_pairs,
        phi=o.phi,
        lam=o.lam if lam > 0 else 0.0,
        radius=o.radius,
        distribution=o.init_distribution,
        seed=derive_seed(fx.seed, "trials", regime.upper(), y),
    )
    kw.update(overrides)
    return OptimizationConfig.for_regime(regime, y, **kw)


def scored_trials(fx: Fixture, g, y: int, cfg: OptimizationConfig, **kw) -> list[TrialResult]:
    """Run trials and attach evaluation metrics to every successful one."""
    results = run_trials(g, fx.classifier, y, cfg, **kw)
    for r in results:
        if not r.failed:
            r.metrics = evaluate(fx, g, r.final_embedding, y)
        r.provenance.update(fx.provenance(target_class=y))
    return results


def _mean(values) -> float:
    return float(np.mean(list(values)))


def _trial_summary(results) -> list[dict]:
    return [
        {"trial": r.trial_index, "seed": r.seed, "accuracy": r.metrics["accuracy"], "perceptual": r.metrics["perceptual"]}
        for r in results
        if not r.failed
    ]


def _slim(m: dict) -> dict:
    return {k: m[k] for k in ("accuracy", "perceptual", "ms_ssim", "is_mean", "frechet") if k in m}


# ---------------------------------------------------------------------------
# studies


def repair(fx: Fixture, y: int | None = None, regime: str = "AM-L", rule: str | None = None) -> dict:
    """Corrupt one class far from the embedding cloud, then search for a new embedding."""
    y = fx.config.experiments.repair_class if y is None else y
    rule = rule or fx.config.metrics.selection_rule
    g = fx.generator
    gc = nets.corrupt_class(g, y, "random-far", seed=derive_seed(fx.seed, "corrupt", y))
    t0 = time.perf_counter()
    trials = scored_trials(fx, gc, y, optimization_config(fx, regime, y))
    runtime = time.perf_counter() - t0
    selected = select_trial(trials, rule)
    return {
        "class": y,
        "regime": regime,
        "rule": rule,
        "original": evaluate(fx, g, g.embedding[y], y),
        "corrupted": evaluate(fx, gc, gc.embedding[y], y),
        "reference_perceptual": fx.reference[y].perceptual,
        "reference_ms_ssim": fx.reference[y].ms_ssim,
        "selected": selected.metrics,
        "selected_index": selected.trial_index,
        "trials_summary": _trial_summary(trials),
        "runtime": runtime,
        "trials": trials,
        "corrupted_generator": gc,
    }


def _closure(corr: float, am: float, real: float) -> float:
    gap = real - corr
    if gap == 0:
        return float("nan")
    return (am - corr) / gap


def gap_closure(fx: Fixture, classes=None, sigma: float | None = None, regime: str = "AM-L") -> dict:
    """Scale-down corruption on several classes; fraction of each diversity gap the AM trials close.

    Closure is (AM - corrupted) / (real - corrupted) per metric, using the
    mean over all successful trials of a class.
    """
    ex = fx.config.experiments
    classes = list(ex.low_diversity_classes if classes is None else classes)
    sigma = ex.scale_down_sigma if sigma is None else sigma
    per_class = {}
    for y in classes:
        gc = nets.corrupt_class(fx.generator, y, "scale-down", sigma=sigma)
        corr = evaluate(fx, gc, gc.embedding[y], y)
        trials = scored_trials(fx, gc, y, optimization_config(fx, regime, y))
        ok = [t for t in trials if not t.failed]
        am = {k: _mean(t.metrics[k] for t in ok) for k in ("ms_ssim", "perceptual", "accuracy")}
        ref = fx.reference[y]
        per_class[y] = {
            "corrupted": _slim(corr),
            "am_mean": am,
            "real": {"ms_ssim": ref.ms_ssim, "perceptual": ref.perceptual},
            "closure_ms_ssim": _closure(corr["ms_ssim"], am["ms_ssim"], ref.ms_ssim),
            "closure_perceptual": _closure(corr["perceptual"], am["perceptual"], ref.perceptual),
            "trials": trials,
            "corrupted_generator": gc,
        }
    return {
        "classes": classes,
        "sigma": sigma,
        "regime": regime,
        "per_class": per_class,
        "mean_closure_ms_ssim": _mean(v["closure_ms_ssim"] for v in per_class.values()),
        "mean_closure_perceptual": _mean(v["closure_perceptual"] for v in per_class.values()),
    }


def mixing(fx: Fixture, g_corr, am_embedding, y: int) -> dict:
    """Corrupted-only set vs. a 50/50 mix of corrupted and AM samples of one class."""
    m = fx.config.metrics
    n_each = m.mix_each
    corrupted = sample_class_set(g_corr, g_corr.embedding[y], 2 * n_each, make_rng(fx.seed, "mix-corrupted", y))
    am = sample_class_set(g_corr, am_embedding, n_each, make_rng(fx.seed, "mix-am", y))
    mixed = mix_sample_sets(corrupted, am, n_each, make_rng(fx.seed, "mix", y))
    ref = fx.reference[y]
    out = {}
    for name, images in (("corrupted", corrupted), ("mixed", mixed)):
        rng = make_rng(fx.seed, "mix-pairs", name, y)
        out[name] = _slim(evaluate_class_set(images, y, fx.classifier, ref, m.n_pairs, m.is_splits, rng))
    return {"class": y, "n_each": n_each, **out}


def noise_study(fx: Fixture, classes=None, draws: int = 3) -> dict:
    """Uncorrupted embeddings vs. W[y] + N(0, sigma^2) for sigma = 0.1 and 0.3 * scale."""
    ex = fx.config.experiments
    g = fx.generator
    classes = list(range(g.num_classes) if classes is None else classes)
    scale = baselines.embedding_scale(g.embedding)
    sigmas = {"small": ex.noise_sigmas[0], "large": ex.noise_sigmas[1] * scale}
    per_class = {}
    for y in classes:
        base = evaluate(fx, g, g.embedding[y], y)
        row = {"original": _slim(base)}
        for name, sigma in sigmas.items():
            ms = []
            for k in range(draws):
                rng = make_rng(fx.seed, "noise", name, y, k)
                ms.append(evaluate(fx, g, baselines.noise_baseline(g.embedding, y, baselines.NoiseSpec(sigma), rng), y))
            row[name] = {key: _mean(mm[key] for mm in ms) for key in ("accuracy", "perceptual", "ms_ssim")}
            row[name]["delta_accuracy"] = row[name]["accuracy"] - base["accuracy"]
            row[name]["perceptual_ratio"] = row[name]["perceptual"] / max(base["perceptual"], 1e-12)
        per_class[y] = row
    summary = {}
    for name in sigmas:
        summary[name] = {
            "sigma": sigmas[name],
            "mean_delta_accuracy": _mean(r[name]["delta_accuracy"] for r in per_class.values()),
            "mean_perceptual_ratio": _mean(r[name]["perceptual_ratio"] for r in per_class.values()),
        }
    return {"embedding_scale": scale, "per_class": per_class, "summary": summary}


def finetune_study(fx: Fixture, repair_out: dict) -> dict:
    """Single-row adversarial finetuning on the repaired class, one run per AM trial seed."""
    y = repair_out["class"]
    gc = repair_out["corrupted_generator"]
    ex = fx.config.experiments
    trials = [t for t in repair_out["trials"] if not t.failed]
    results = []
    for t in trials:
        r = baselines.run_finetune_baseline(gc, fx.discriminator, y, seed=t.seed, iters=ex.finetune_iters)
        r.metrics = evaluate(fx, gc, r.final_embedding, y)
        r.provenance.update(fx.provenance(target_class=y))
        results.append(r)
    return {
        "class": y,
        "iters": ex.finetune_iters,
        "finetune_perceptual": _mean(r.metrics["perceptual"] for r in results),
        "finetune_accuracy": _mean(r.metrics["accuracy"] for r in results),
        "am_perceptual": _mean(t.metrics["perceptual"] for t in trials),
        "am_accuracy": _mean(t.metrics["accuracy"] for t in trials),
        "results": results,
    }


def repurpose_study(fx: Fixture, classes=None) -> dict:
    """Domain-B classes: best of mean-init and top-k-init AM-L vs. the top-1 source class."""
    ex = fx.config.experiments
    o = fx.config.optimization
    classes = list(ex.repurpose_classes if classes is None else classes)
    m = fx.config.metrics
    per_class = {}
    for y in classes:
        outs = {}
        for init in ("around-mean", "top-k"):
            task = RepurposeTask(
                generator=fx.generator,
                classifier=fx.target_classifier,
                target_class=y,
                init=init,
                trials=o.trials,
                k=ex.repurpose_top_k,
                radius=o.radius,
                seed=derive_seed(fx.seed, "repurpose", init, y),
                cfg_overrides=dict(
                    steps=o.steps, resample_interval=o.resample_interval, batch_size=o.batch_size,
                    learning_rate=o.lr_large,
                ),
                n_eval=m.n_images,
                eval_seed=eval_seed(fx),
                reference=fx.target_reference.get(y),
            )
            outs[init] = repurpose_class(task)
        best = max(outs.values(), key=lambda r: r.selected.metrics["accuracy"])
        per_class[y] = {
            "baseline_accuracy": best.baseline.metrics["accuracy"],
            "baseline_source": best.baseline.provenance["source_class"],
            "mean_init_accuracy": outs["around-mean"].selected.metrics["accuracy"],
            "topk_init_accuracy": outs["top-k"].selected.metrics["accuracy"],
            "am_accuracy": best.selected.metrics["accuracy"],
            "results": outs,
        }
    return {
        "classes": classes,
        "per_class": per_class,
        "mean_baseline_accuracy": _mean(v["baseline_accuracy"] for v in per_class.values()),
        "mean_am_accuracy": _mean(v["am_accuracy"] for v in per_class.values()),
    }


def lambda_sweep(fx: Fixture, y: int | None = None, phi: str = "softmax", lambdas=None, regime: str = "AM-D-L",
                 trials: int | None = None) -> dict:
    """AM-D on the corrupted repair class for each lambda with identical trial seeds."""
    ex = fx.config.experiments
    y = ex.repair_class if y is None else y
    lambdas = list(ex.lambdas if lambdas is None else lambdas)
    gc = nets.corrupt_class(fx.generator, y, "random-far", seed=derive_seed(fx.seed, "corrupt", y))
    seed = derive_seed(fx.seed, "lambda-sweep", y)
    rows = {}
    for lam in lambdas:
        over = {"lam": float(lam), "phi": phi, "seed": seed}
        if trials is not None:
            over["trials"] = trials
        res = scored_trials(fx, gc, y, optimization_config(fx, regime, y, **over))
        ok = [r for r in res if not r.failed]
        rows[float(lam)] = {
            "accuracy": _mean(r.metrics["accuracy"] for r in ok),
            "perceptual": _mean(r.metrics["perceptual"] for r in ok),
            "ms_ssim": _mean(r.metrics["ms_ssim"] for r in ok),
            "trials": res,
        }
    return {"class": y, "phi": phi, "regime": regime, "per_lambda": rows}


def snapshot_sweep(fx: Fixture, y: int | None = None, regime: str = "AM-S") -> dict:
    """Corrupt the same class in every saved snapshot and apply AM-S to each."""
    y = fx.config.experiments.repair_class if y is None else y
    rows = {}
    for it, snap in fx.snapshots:
        sc = nets.corrupt_class(snap, y, "random-far", seed=derive_seed(fx.seed, "corrupt", y))
        own = evaluate(fx, sc, sc.embedding[y], y)
        res = scored_trials(fx, sc, y, optimization_config(fx, regime, y))
        ok = [r for r in res if not r.failed]
        rows[int(it)] = {
            "own": _slim(own),
            "am_perceptual": _mean(r.metrics["perceptual"] for r in ok),
            "am_accuracy": _mean(r.metrics["accuracy"] for r in ok),
            "trials": res,
        }
    return {"class": y, "regime": regime, "per_snapshot": rows}


@torch.no_grad()
def interpolation_study(fx: Fixture, start, y: int, end=None, n_latents: int = 64) -> dict:
    """Embedding interpolation from ``start`` to ``end`` (default: the class's own row).

    Reports the mean target probability of every frame over a fixed latent
    batch, and whether the endpoint frames equal direct generation.
    """
    g = fx.generator
    end = g.embedding[y].to(torch.float64).numpy() if end is None else np.asarray(end)
    Z = sample_latents(make_rng(fx.seed, "interp", y), n_latents, g.latent_dim, torch.float64).numpy()
    spec = InterpolationSpec("embedding", np.asarray(start), end, Z, fx.config.experiments.interpolation_steps)
    frames = interpolate(g, spec)
    probs = [float(nets.classify(fx.classifier, torch.as_tensor(f))[0][:, y].mean()) for f in frames]
    Zt = torch.as_tensor(Z, dtype=g.dtype)
    direct_start = nets.generate(g, torch.as_tensor(np.asarray(start), dtype=g.dtype), Zt).numpy()
    direct_end = nets.generate(g, torch.as_tensor(end, dtype=g.dtype), Zt).numpy()
    return {
        "class": y,
        "frame_probabilities": probs,
        "endpoints_exact": bool(np.array_equal(frames[0], direct_start) and np.array_equal(frames[-1], direct_end)),
        "frames": frames,
    }
