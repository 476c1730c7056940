"""Command-line entry point: ``embsurg <command> [flags]``.

Exit status: 0 on success, 2 for configuration errors, 3 for runtime
failures (divergence, integrity, state). Errors are also printed to stderr
as one JSON object.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import torch
import yaml

from . import baselines, container, nets, report, sampling
from .config import ExperimentConfig, dump_config, load_config
from .errors import ConfigurationError, EmbsurgError
from .metrics import MetricReport, evaluate_embedding, evaluate_class_set, mix_sample_sets, ms_ssim_provenance
from .optimizer import REGIMES, OptimizationConfig, select_trial
from .repurpose import RepurposeTask, repurpose_class
from .seeding import derive_seed, make_rng, sample_latents
from .synthdata import DatasetSpec, generate_dataset, real_reference_stats

logger = logging.getLogger("embsurg")


# ---------------------------------------------------------------------------
# shared plumbing


def _parse_list(text: str, cast=float) -> list:
    try:
        return [cast(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigurationError(f"cannot parse list {text!r}", "list") from None


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}", "set")
        key, value = item.split("=", 1)
        out[key.strip()] = yaml.safe_load(value)
    return out


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config, _overrides(args.set))
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _provenance(cfg: ExperimentConfig, args, **extra) -> dict:
    prov = {"config_digest": cfg.digest(), "seed": cfg.seed, "command": args.command}
    prov.update(extra)
    return prov


def _out_dir(args, cfg) -> Path:
    out = Path(args.out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _eval_seed(cfg) -> int:
    return derive_seed(cfg.seed, "eval")


def _reference(cfg, p, path, y):
    """Real-data reference stats for class ``y`` from a dataset container (optional)."""
    if path is None:
        return None
    data = container.load(path, expect="dataset")
    return real_reference_stats(data, p, cfg.metrics.n_pairs, derive_seed(cfg.seed, "reference"))[y]


def _evaluate(cfg, g, p, c, y, reference=None) -> dict:
    m = cfg.metrics
    return evaluate_embedding(g, p, c, y, m.n_images, _eval_seed(cfg), reference, m.n_pairs, m.is_splits)


def _opt_config(cfg: ExperimentConfig, regime: str, y: int, args) -> OptimizationConfig:
    o = cfg.optimization
    regime = regime.upper()
    if regime not in REGIMES:
        raise ConfigurationError(f"unknown regime {regime!r}", "regime")
    strategy, _, lam = REGIMES[regime]
    kw = dict(
        steps=o.steps, resample_interval=o.resample_interval, batch_size=o.batch_size, trials=o.trials,
        learning_rate=o.lr_small if strategy == "around-original" else o.lr_large, num_pairs=o.num_pairs,
        phi=o.phi, lam=o.lam if lam > 0 else 0.0, radius=o.radius, distribution=o.init_distribution,
        seed=derive_seed(cfg.seed, "trials", regime, y),
    )
    for name in ("trials", "steps", "lam", "phi", "learning_rate"):
        value = getattr(args, name, None)
        if value is not None:
            kw[name] = value
    return OptimizationConfig.for_regime(regime, y, **kw)


def _grid(g, c, cfg, y, n: int = 16):
    Z = sample_latents(make_rng(cfg.seed, "grid", y), n, g.latent_dim, g.dtype)
    side = int(np.sqrt(n))
    return sampling.render_grid(sampling.sample_with_latents(g, c, Z), side, side)


def _metric_row(method: str, y: int, metrics: dict, **extra) -> dict:
    row = {"method": method, "class": int(y)}
    row.update({k: v for k, v in metrics.items() if not isinstance(v, (list, dict))})
    row.update(extra)
    return row


def _save_trials(out: Path, trials, cfg, args, prefix: str = "trial") -> list[dict]:
    timings = []
    for r in trials:
        name = f"{prefix}_{r.trial_index}"
        container.save(out / f"{name}.emb", r, seed=r.seed, provenance=_provenance(cfg, args))
        (out / f"{name}_trace.csv").write_text(r.trace_csv())
        timings.append({"trial": r.trial_index, "wall_time": r.wall_time, "failed": r.failed})
    return timings


def _log_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# commands


def cmd_synth_data(args, cfg):
    base = getattr(cfg, args.which)
    kw = {}
    for flag, name in (("domain", "domain_id"), ("classes", "num_classes"), ("per_class", "samples_per_class"),
                       ("knob", "diversity_knob"), ("size", "image_size")):
        if getattr(args, flag) is not None:
            kw[name] = getattr(args, flag)
    spec = dataclasses.replace(base, **kw)
    spec = dataclasses.replace(spec, seed=derive_seed(cfg.seed, "data", args.which, spec.seed))
    data = generate_dataset(spec)
    container.save(args.out, data, seed=cfg.seed, provenance=_provenance(cfg, args, spec=spec.to_dict()))
    print(json.dumps({"out": str(args.out), "images": len(data), "classes": spec.num_classes}))


def cmd_train_classifier(args, cfg):
    data = container.load(args.data, expect="dataset")
    tc = cfg.classifier_train
    if args.epochs is not None:
        tc = dataclasses.replace(tc, epochs=args.epochs)
    tc = dataclasses.replace(tc, seed=derive_seed(cfg.seed, "classifier-train", tc.seed))
    s = data.spec
    net = dataclasses.replace(cfg.classifier, num_classes=s.num_classes, image_size=s.image_size, channels=s.channels)
    p = nets.train_toy_classifier(data, tc, net)
    container.save(args.out, p, seed=cfg.seed, provenance=_provenance(cfg, args, data=str(args.data)))
    print(json.dumps({"out": str(args.out), "checksum": p.checksum()}))


def cmd_train_gan(args, cfg):
    data = container.load(args.data, expect="dataset")
    tc = cfg.gan_train
    for name in ("iterations", "snapshot_interval"):
        if getattr(args, name) is not None:
            tc = dataclasses.replace(tc, **{name: getattr(args, name)})
    tc = dataclasses.replace(tc, seed=derive_seed(cfg.seed, "gan-train", tc.seed))
    s = data.spec
    gen = dataclasses.replace(cfg.generator, num_classes=s.num_classes, image_size=s.image_size, channels=s.channels)
    t0 = time.perf_counter()
    g, d, snaps = nets.train_toy_gan(data, tc, gen)
    out = _out_dir(args, cfg)
    prov = _provenance(cfg, args, data=str(args.data))
    container.save(out / "generator.emb", g, seed=cfg.seed, provenance=prov)
    container.save(out / "discriminator.emb", d, seed=cfg.seed, provenance=prov)
    for it, snap in snaps:
        container.save(out / f"snapshot_{it}.emb", snap, seed=cfg.seed, provenance={**prov, "iteration": it})
    _log_json(out / "train_gan.log.json", {"wall_time": time.perf_counter() - t0, "snapshots": [i for i, _ in snaps]})
    print(json.dumps({"out_dir": str(out), "snapshots": len(snaps)}))


def cmd_corrupt(args, cfg):
    g = container.load(args.generator, expect="generator")
    gc = nets.corrupt_class(g, args.class_, args.mode, sigma=args.sigma, source=args.source,
                            seed=derive_seed(cfg.seed, "corrupt", args.class_))
    container.save(args.out, gc, seed=cfg.seed, provenance=_provenance(cfg, args, source=str(args.generator)))
    print(json.dumps({"out": str(args.out), "corruption": gc.meta["corruption"]}))


def cmd_optimize(args, cfg):
    g = container.load(args.generator, expect="generator")
    p = container.load(args.classifier, expect="classifier")
    y = args.class_
    ocfg = _opt_config(cfg, args.regime, y, args)
    from .optimizer import run_trials

    trials = run_trials(g, p, y, ocfg)
    ref = _reference(cfg, p, args.reference_data, y)
    before = _evaluate(cfg, g, p, g.embedding[y], y, ref)
    for r in trials:
        if not r.failed:
            r.metrics = _evaluate(cfg, g, p, r.final_embedding, y, ref)
    selected = select_trial(trials, args.rule or cfg.metrics.selection_rule)
    out = _out_dir(args, cfg)
    timings = _save_trials(out, trials, cfg, args)
    grid = sampling.side_by_side(_grid(g, g.embedding[y], cfg, y), _grid(g, selected.final_embedding, cfg, y))
    sampling.save_png(grid, out / f"grid_class{y}_before_after.png")
    rows = [_metric_row("original", y, before)]
    rows += [_metric_row(ocfg.regime, y, r.metrics, trial=r.trial_index) for r in trials if not r.failed]
    rows.append(_metric_row(f"{ocfg.regime}-selected", y, selected.metrics, trial=selected.trial_index))
    report.write_result(out / f"optimize_class{y}", "optimize", rows, _provenance(cfg, args, regime=ocfg.regime))
    _log_json(out / "timings.json", timings)
    print(json.dumps({"out_dir": str(out), "selected": selected.trial_index,
                      "accuracy": selected.metrics["accuracy"], "perceptual": selected.metrics["perceptual"]}))


def cmd_baseline(args, cfg):
    g = container.load(args.generator, expect="generator")
    y = args.class_
    seed = derive_seed(cfg.seed, "baseline", args.method, y)
    if args.method == "noise":
        sigma = args.sigma
        if args.relative:
            sigma = sigma * baselines.embedding_scale(g.embedding)
        r = baselines.run_noise_baseline(g, y, sigma, seed)
    else:
        d = container.load(args.discriminator, expect="discriminator") if args.discriminator else None
        r = baselines.run_finetune_baseline(g, d, y, seed, iters=args.iters)
    out = _out_dir(args, cfg)
    rows = []
    if args.classifier:
        p = container.load(args.classifier, expect="classifier")
        r.metrics = _evaluate(cfg, g, p, r.final_embedding, y, _reference(cfg, p, args.reference_data, y))
        rows.append(_metric_row(r.method, y, r.metrics))
        report.write_result(out / f"baseline_{args.method}_class{y}", "baseline", rows, _provenance(cfg, args))
    container.save(out / f"baseline_{args.method}_class{y}.emb", r, seed=seed, provenance=_provenance(cfg, args))
    print(json.dumps({"out_dir": str(out), "method": r.method}))


def cmd_evaluate(args, cfg):
    g = container.load(args.generator, expect="generator")
    p = container.load(args.classifier, expect="classifier")
    classes = _parse_list(args.classes, int) if args.classes else list(range(g.num_classes))
    data = container.load(args.reference_data, expect="dataset") if args.reference_data else None
    refs = real_reference_stats(data, p, cfg.metrics.n_pairs, derive_seed(cfg.seed, "reference")) if data else {}
    emb = None
    if args.embedding:
        emb = container.load(args.embedding, expect="trial_result")
        classes = [emb.target_class]
    per_class = {}
    for y in classes:
        c = emb.final_embedding if emb is not None else g.embedding[y]
        per_class[y] = _evaluate(cfg, g, p, c, y, refs.get(y))
    rep = MetricReport(per_class=per_class, provenance={**ms_ssim_provenance(), **_provenance(cfg, args)})
    out = _out_dir(args, cfg)
    (out / "metrics.json").write_text(rep.to_json())
    (out / "metrics.csv").write_text(rep.to_csv())
    method = args.label or ("embedding" if emb is not None else "generator")
    rows = [_metric_row(method, y, m) for y, m in per_class.items()]
    report.write_result(out / f"evaluate_{method}", "evaluate", rows, _provenance(cfg, args))
    print(json.dumps({"out_dir": str(out), "aggregate": rep.aggregate}))


def cmd_repurpose(args, cfg):
    g = container.load(args.generator, expect="generator")
    p = container.load(args.target_classifier, expect="classifier")
    y = args.class_
    o = cfg.optimization
    inits = ["around-mean", "top-k"] if args.init == "both" else [args.init]
    ref = _reference(cfg, p, args.reference_data, y)
    out = _out_dir(args, cfg)
    results = {}
    for init in inits:
        task = RepurposeTask(
            generator=g, classifier=p, target_class=y, init=init, trials=args.trials or o.trials,
            k=cfg.experiments.repurpose_top_k, radius=o.radius, seed=derive_seed(cfg.seed, "repurpose", init, y),
            cfg_overrides=dict(steps=o.steps, resample_interval=o.resample_interval, batch_size=o.batch_size,
                               learning_rate=o.lr_large),
            n_eval=cfg.metrics.n_images, eval_seed=_eval_seed(cfg), reference=ref,
        )
        results[init] = repurpose_class(task)
        _save_trials(out, results[init].trials, cfg, args, prefix=f"repurpose_{init}")
    best = max(results.values(), key=lambda r: r.selected.metrics["accuracy"])
    rows = [_metric_row("top1-source", y, best.baseline.metrics, source=best.baseline.provenance["source_class"])]
    rows += [_metric_row(f"AM-L-{init}", y, r.selected.metrics) for init, r in results.items()]
    report.write_result(out / f"repurpose_class{y}", "repurpose", rows, _provenance(cfg, args))
    grid = sampling.side_by_side(_grid(g, best.baseline.final_embedding, cfg, y), _grid(g, best.selected.final_embedding, cfg, y))
    sampling.save_png(grid, out / f"grid_class{y}_top1_vs_am.png")
    print(json.dumps({"out_dir": str(out), "baseline_accuracy": best.baseline.metrics["accuracy"],
                      "am_accuracy": best.selected.metrics["accuracy"]}))


def cmd_interpolate(args, cfg):
    g = container.load(args.generator, expect="generator")
    y = args.class_
    steps = args.steps or cfg.experiments.interpolation_steps
    rng = make_rng(cfg.seed, "interp", y)
    n = args.rows
    if args.kind == "embedding":
        start = container.load(args.start_trial, expect="trial_result").final_embedding if args.start_trial else g.embedding[y].numpy()
        end = container.load(args.end_trial, expect="trial_result").final_embedding if args.end_trial else g.embedding[y].numpy()
        fixed = sample_latents(rng, n, g.latent_dim, torch.float64).numpy()
        spec = sampling.InterpolationSpec("embedding", start, end, fixed, steps)
        frames = sampling.interpolate(g, spec)
    else:
        Z = sample_latents(rng, 2 * n, g.latent_dim, torch.float64).numpy()
        frames_rows = [
            sampling.interpolate(g, sampling.InterpolationSpec("latent", Z[i], Z[n + i], g.embedding[y].numpy(), steps))
            for i in range(n)
        ]
        frames = [np.concatenate([fr[k] for fr in frames_rows]) for k in range(steps)]
    # rows = latent index, columns = interpolation step
    tiles = np.stack(frames, axis=1).reshape(-1, *frames[0].shape[1:])
    out = _out_dir(args, cfg)
    sampling.save_png(sampling.render_grid(tiles, n, steps), out / f"interpolate_{args.kind}_class{y}.png")
    _log_json(out / f"interpolate_{args.kind}_class{y}.json",
              {"mode": sampling.INTERPOLATION_MODE, "steps": steps, "rows": n, **_provenance(cfg, args)})
    print(json.dumps({"out_dir": str(out), "frames": steps}))


def cmd_mix_eval(args, cfg):
    g = container.load(args.generator, expect="generator")
    p = container.load(args.classifier, expect="classifier")
    y = args.class_
    trial = container.load(args.trial, expect="trial_result")
    n_each = cfg.metrics.mix_each
    m = cfg.metrics
    corrupted = sampling.sample_class_set(g, g.embedding[y], 2 * n_each, make_rng(cfg.seed, "mix-corrupted", y))
    am = sampling.sample_class_set(g, trial.final_embedding, n_each, make_rng(cfg.seed, "mix-am", y))
    mixed = mix_sample_sets(corrupted, am, n_each, make_rng(cfg.seed, "mix", y))
    ref = _reference(cfg, p, args.reference_data, y)
    rows = []
    for name, images in (("generator-only", corrupted), ("generator+AM", mixed)):
        metrics = evaluate_class_set(images, y, p, ref, m.n_pairs, m.is_splits, make_rng(cfg.seed, "mix-pairs", name, y))
        rows.append(_metric_row(name, y, metrics))
    out = _out_dir(args, cfg)
    report.write_result(out / f"mix_class{y}", "mix-eval", rows, _provenance(cfg, args))
    print(json.dumps({"out_dir": str(out), "rows": [{k: r[k] for k in ("method", "perceptual", "frechet")} for r in rows]}))


def cmd_sweep_lambda(args, cfg):
    g = container.load(args.generator, expect="generator")
    p = container.load(args.classifier, expect="classifier")
    y = args.class_
    lambdas = _parse_list(args.lambdas) if args.lambdas else list(cfg.experiments.lambdas)
    phis = [args.phi] if args.phi else list(cfg.experiments.phis)
    ref = _reference(cfg, p, args.reference_data, y)
    from .optimizer import run_trials

    out = _out_dir(args, cfg)
    rows = []
    seed = derive_seed(cfg.seed, "lambda-sweep", y)
    for phi in phis:
        for lam in lambdas:
            ocfg = _opt_config(cfg, args.regime, y, args).replace(seed=seed)
            ocfg = ocfg.replace(objective=dataclasses.replace(ocfg.objective, lam=float(lam), phi=phi)).validate()
            trials = run_trials(g, p, y, ocfg)
            sub = out / f"{phi}_lambda{lam:g}"
            sub.mkdir(parents=True, exist_ok=True)
            for r in trials:
                if not r.failed:
                    r.metrics = _evaluate(cfg, g, p, r.final_embedding, y, ref)
            _save_trials(sub, trials, cfg, args)
            rows += [_metric_row(f"{ocfg.regime} {phi} lambda={lam:g}", y, r.metrics, trial=r.trial_index)
                     for r in trials if not r.failed]
    report.write_result(out / f"sweep_lambda_class{y}", "sweep-lambda", rows, _provenance(cfg, args))
    print(json.dumps({"out_dir": str(out), "sets": len(phis) * len(lambdas)}))


def cmd_sweep_snapshots(args, cfg):
    run = Path(args.run_dir)
    snaps = sorted(run.glob("snapshot_*.emb"), key=lambda q: int(q.stem.split("_")[1]))
    if not snaps:
        raise ConfigurationError(f"no snapshot_<iter>.emb files in {run}", "run_dir")
    p = container.load(args.classifier, expect="classifier")
    y = args.class_
    ref = _reference(cfg, p, args.reference_data, y)
    from .optimizer import run_trials

    out = _out_dir(args, cfg)
    rows = []
    for path in snaps:
        it = int(path.stem.split("_")[1])
        g = container.load(path, expect="generator")
        if args.corrupt != "none":
            g = nets.corrupt_class(g, y, args.corrupt, seed=derive_seed(cfg.seed, "corrupt", y))
        rows.append(_metric_row(f"snapshot-{it} own", y, _evaluate(cfg, g, p, g.embedding[y], y, ref), iteration=it))
        trials = run_trials(g, p, y, _opt_config(cfg, "AM-S", y, args))
        for r in trials:
            if not r.failed:
                r.metrics = _evaluate(cfg, g, p, r.final_embedding, y, ref)
                rows.append(_metric_row(f"snapshot-{it} AM-S", y, r.metrics, iteration=it, trial=r.trial_index))
        sub = out / f"snapshot_{it}"
        sub.mkdir(parents=True, exist_ok=True)
        _save_trials(sub, trials, cfg, args)
    report.write_result(out / f"sweep_snapshots_class{y}", "sweep-snapshots", rows, _provenance(cfg, args))
    print(json.dumps({"out_dir": str(out), "snapshots": len(snaps)}))


def cmd_report(args, cfg):
    rep = report.write_report(args.results, args.out_dir)
    print(report.to_markdown(rep), end="")


def cmd_show_config(args, cfg):
    print(dump_config(cfg), end="")


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--seed", type=int, help="global seed (overrides config and EMBSURG_SEED)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted config override, repeatable")
    common.add_argument("--out-dir", help="output directory (default: config output_dir)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="embsurg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(fn=fn)
        return sp

    def class_arg(sp):
        sp.add_argument("--class", dest="class_", type=int, required=True)

    sp = add("synth-data", cmd_synth_data, "render a synthetic labeled dataset")
    sp.add_argument("--which", default="gan_data",
                    choices=["gan_data", "classifier_data", "reference_data", "target_data"],
                    help="config entry supplying the defaults")
    sp.add_argument("--domain", choices=["A", "B"])
    sp.add_argument("--classes", type=int)
    sp.add_argument("--per-class", type=int)
    sp.add_argument("--knob", type=float)
    sp.add_argument("--size", type=int)
    sp.add_argument("--out", required=True)

    sp = add("train-classifier", cmd_train_classifier, "train the frozen classifier")
    sp.add_argument("--data", required=True)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--out", required=True)

    sp = add("train-gan", cmd_train_gan, "train the conditional GAN and save snapshots")
    sp.add_argument("--data", required=True)
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--snapshot-interval", type=int)

    sp = add("corrupt", cmd_corrupt, "inject a collapsed embedding into one class")
    sp.add_argument("--generator", required=True)
    class_arg(sp)
    sp.add_argument("--mode", choices=nets.CORRUPT_MODES, default="random-far")
    sp.add_argument("--sigma", type=float, default=0.1)
    sp.add_argument("--source", type=int)
    sp.add_argument("--out", required=True)

    for name, fn, help_ in (
        ("optimize", cmd_optimize, "run embedding-optimization trials for one class"),
        ("sweep-lambda", cmd_sweep_lambda, "diversity-weight sweep over feature spaces"),
    ):
        sp = add(name, fn, help_)
        sp.add_argument("--generator", required=True)
        sp.add_argument("--classifier", required=True)
        class_arg(sp)
        sp.add_argument("--regime", default="am-l" if name == "optimize" else "am-d-l")
        sp.add_argument("--trials", type=int)
        sp.add_argument("--steps", type=int)
        sp.add_argument("--reference-data", help="dataset container for the Frechet reference")
        if name == "optimize":
            sp.add_argument("--lam", type=float)
            sp.add_argument("--phi", choices=nets.TAPS)
            sp.add_argument("--lr", dest="learning_rate", type=float)
            sp.add_argument("--rule", choices=["best-perceptual", "best-accuracy", "index"])
        else:
            sp.add_argument("--phi", choices=nets.TAPS)
            sp.add_argument("--lambdas", help="comma-separated, e.g. 2,10,100")

    sp = add("baseline", cmd_baseline, "noise or finetuning baseline for one class")
    sp.add_argument("--generator", required=True)
    class_arg(sp)
    sp.add_argument("--method", choices=["noise", "finetune"], required=True)
    sp.add_argument("--sigma", type=float, default=0.1)
    sp.add_argument("--relative", action="store_true", help="multiply sigma by the embedding scale")
    sp.add_argument("--discriminator")
    sp.add_argument("--iters", type=int, default=10)
    sp.add_argument("--classifier", help="score the result with this classifier")
    sp.add_argument("--reference-data")

    sp = add("evaluate", cmd_evaluate, "metrics for generator classes or a trial embedding")
    sp.add_argument("--generator", required=True)
    sp.add_argument("--classifier", required=True)
    sp.add_argument("--classes", help="comma-separated class list (default: all)")
    sp.add_argument("--embedding", help="TrialResult container to evaluate instead of W rows")
    sp.add_argument("--reference-data")
    sp.add_argument("--label", help="method label used in the report")

    sp = add("repurpose", cmd_repurpose, "optimize an embedding for a target-domain class")
    sp.add_argument("--generator", required=True)
    sp.add_argument("--target-classifier", required=True)
    class_arg(sp)
    sp.add_argument("--init", choices=["around-mean", "top-k", "both"], default="both")
    sp.add_argument("--trials", type=int)
    sp.add_argument("--reference-data")

    sp = add("interpolate", cmd_interpolate, "latent or embedding interpolation strip")
    sp.add_argument("--generator", required=True)
    class_arg(sp)
    sp.add_argument("--kind", choices=["latent", "embedding"], default="embedding")
    sp.add_argument("--start-trial", help="TrialResult supplying the start embedding")
    sp.add_argument("--end-trial", help="TrialResult supplying the end embedding (default: W[class])")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--rows", type=int, default=4)

    sp = add("mix-eval", cmd_mix_eval, "generator-only vs. generator+AM mixed sample sets")
    sp.add_argument("--generator", required=True)
    sp.add_argument("--classifier", required=True)
    class_arg(sp)
    sp.add_argument("--trial", required=True, help="TrialResult with the AM embedding")
    sp.add_argument("--reference-data")

    sp = add("sweep-snapshots", cmd_sweep_snapshots, "AM-S on every saved training snapshot")
    sp.add_argument("--run-dir", required=True)
    sp.add_argument("--classifier", required=True)
    class_arg(sp)
    sp.add_argument("--corrupt", choices=list(nets.CORRUPT_MODES) + ["none"], default="random-far")
    sp.add_argument("--trials", type=int)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--reference-data")

    sp = add("report", cmd_report, "JSON/CSV/Markdown tables from result files")
    sp.add_argument("--results", required=True)

    add("show-config", cmd_show_config, "print the effective configuration")
    return parser


def _fail(exc: Exception, code: int) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    field = getattr(exc, "field", None)
    if field is not None:
        payload["field"] = field
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        args.fn(args, cfg)
    except ConfigurationError as exc:
        return _fail(exc, 2)
    except EmbsurgError as exc:
        return _fail(exc, 3)
    return 0


if __name__ == "__main__":
    sys.exit(main())
