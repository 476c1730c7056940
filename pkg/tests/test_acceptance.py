"""Acceptance suite: one test per criterion at the pinned tolerances.

The end-to-end criteria run on the default-config fixture (trained once and
cached on disk, see conftest). Every test records a PASS/FAIL line that is
printed in the terminal summary. Criteria this desk-scale setup does not
meet are marked ``xfail(strict=True)``: the assertion still runs at the
pinned tolerance, so an unexpected pass is reported as an error.
"""

import numpy as np
import pytest
import torch

from embsurg import container, experiments, metrics, nets
from embsurg.cli import main
from embsurg.objective import PHI_CHOICES, ObjectiveConfig, combined_loss, select_pairs

from conftest import ACCEPTANCE

pytestmark = pytest.mark.slow


def record(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = (bool(ok), detail)


_STUDIES: dict = {}


def study(fx, name):
    # studies are shared between criteria; the fixture is the same for the whole session
    if name not in _STUDIES:
        _STUDIES[name] = _run_study(fx, name)
    return _STUDIES[name]


def _run_study(fx, name):
    if name == "repair":
        return experiments.repair(fx)
    if name == "gap":
        return experiments.gap_closure(fx)
    if name == "noise":
        return experiments.noise_study(fx)
    if name == "repurpose":
        return experiments.repurpose_study(fx)
    if name == "lambda":
        return experiments.lambda_sweep(fx, phi="softmax", lambdas=[2.0, 100.0])
    if name == "snapshots":
        return experiments.snapshot_sweep(fx)
    raise KeyError(name)


def selected_embedding(rep):
    return rep["trials"][rep["selected_index"]].final_embedding


def test_c01_repair(reference_fixture):
    fx = reference_fixture
    rep = study(fx, "repair")
    ref = rep["reference_perceptual"]
    corr, sel = rep["corrupted"], rep["selected"]
    ok = (corr["accuracy"] < 0.2 and corr["perceptual"] <= 0.25 * ref
          and sel["accuracy"] >= 0.8 and sel["perceptual"] >= 0.5 * ref and rep["runtime"] < 300)
    record(1, ok, f"corrupted acc {corr['accuracy']:.3f} perc {corr['perceptual']:.3f}; selected acc "
                  f"{sel['accuracy']:.3f} perc {sel['perceptual']:.3f} (ref {ref:.3f}); {rep['runtime']:.0f}s")
    assert corr["accuracy"] < 0.2
    assert corr["perceptual"] <= 0.25 * ref  # "near 0"
    assert sel["accuracy"] >= 0.8
    assert sel["perceptual"] >= 0.5 * ref
    assert rep["runtime"] < 300


@pytest.mark.xfail(strict=True, raises=AssertionError, reason="scale-down corruption does not lower diversity for this generator; see notes")
def test_c02_gap_closure(reference_fixture):
    gap = study(reference_fixture, "gap")
    ms, perc = gap["mean_closure_ms_ssim"], gap["mean_closure_perceptual"]
    # a gap only exists if the corrupted samples are less diverse than real data
    signs = [(v["real"]["ms_ssim"] < v["corrupted"]["ms_ssim"], v["real"]["perceptual"] > v["corrupted"]["perceptual"])
             for v in gap["per_class"].values()]
    ok = len(gap["classes"]) >= 5 and all(a and b for a, b in signs) and ms >= 0.3 and perc >= 0.3
    record(2, ok, f"{len(gap['classes'])} classes; mean closure ms-ssim {ms:.2f}, perceptual {perc:.2f}; "
                  f"classes with a real diversity gap: {sum(a and b for a, b in signs)}")
    assert len(gap["classes"]) >= 5
    assert all(a and b for a, b in signs)
    assert ms >= 0.3 and perc >= 0.3


def test_c03_mixing(reference_fixture):
    fx = reference_fixture
    rep = study(fx, "repair")
    mix = experiments.mixing(fx, rep["corrupted_generator"], selected_embedding(rep), rep["class"])
    c, m = mix["corrupted"], mix["mixed"]
    ok = m["perceptual"] >= c["perceptual"] and m["frechet"] <= 1.2 * c["frechet"]
    record(3, ok, f"class {rep['class']}: perceptual {c['perceptual']:.3f} -> {m['perceptual']:.3f}; "
                  f"Frechet {c['frechet']:.1f} -> {m['frechet']:.1f}")
    assert m["perceptual"] >= c["perceptual"]
    assert m["frechet"] <= 1.2 * c["frechet"]


def test_c04_noise(reference_fixture):
    s = study(reference_fixture, "noise")["summary"]
    small, large = s["small"], s["large"]
    ok = (abs(small["mean_delta_accuracy"]) < 0.1 and large["mean_delta_accuracy"] <= -0.2
          and large["mean_perceptual_ratio"] <= 1.1)
    record(4, ok, f"sigma 0.1: d_acc {small['mean_delta_accuracy']:+.3f}; sigma {large['sigma']:.2f}: "
                  f"d_acc {large['mean_delta_accuracy']:+.3f}, perceptual x{large['mean_perceptual_ratio']:.2f}")
    assert abs(small["mean_delta_accuracy"]) < 0.1
    assert large["mean_delta_accuracy"] <= -0.2
    assert large["mean_perceptual_ratio"] <= 1.1


def test_c05_finetune(reference_fixture):
    fx = reference_fixture
    ft = experiments.finetune_study(fx, study(fx, "repair"))
    ok = ft["finetune_perceptual"] < ft["am_perceptual"]
    record(5, ok, f"finetune perceptual {ft['finetune_perceptual']:.3f} vs AM-L {ft['am_perceptual']:.3f}")
    assert ft["finetune_perceptual"] < ft["am_perceptual"]


def test_c06_repurpose(reference_fixture):
    rp = study(reference_fixture, "repurpose")
    gain = rp["mean_am_accuracy"] - rp["mean_baseline_accuracy"]
    ok = len(rp["classes"]) >= 5 and gain >= 0.2
    record(6, ok, f"{len(rp['classes'])} classes; AM {rp['mean_am_accuracy']:.3f} vs top-1 "
                  f"{rp['mean_baseline_accuracy']:.3f} (gain {gain:+.3f})")
    assert len(rp["classes"]) >= 5
    assert gain >= 0.2


def test_c07_lambda_tradeoff(reference_fixture):
    rows = study(reference_fixture, "lambda")["per_lambda"]
    lo, hi = rows[2.0], rows[100.0]
    ok = hi["accuracy"] < lo["accuracy"] and hi["perceptual"] >= lo["perceptual"]
    record(7, ok, f"lambda 2: acc {lo['accuracy']:.3f} perc {lo['perceptual']:.3f}; "
                  f"lambda 100: acc {hi['accuracy']:.3f} perc {hi['perceptual']:.3f}")
    assert hi["accuracy"] < lo["accuracy"]
    assert hi["perceptual"] >= lo["perceptual"]


def test_c08_metric_oracles():
    checks = {}
    is_k, _ = metrics.inception_score(np.eye(10), splits=1)
    checks["IS one-hot = K"] = is_k == pytest.approx(10.0, rel=1e-12)
    rng = np.random.default_rng(0)
    raw = rng.uniform(0, 1, (1000, 10))
    is_any, _ = metrics.inception_score(raw / raw.sum(1, keepdims=True))
    checks["IS in [1, K]"] = 1.0 <= is_any <= 10.0
    checks["Frechet 9.0"] = abs(metrics.frechet_distance([0.0], [[1.0]], [3.0], [[1.0]]) - 9.0) <= 1e-6
    checks["Frechet 1.0"] = abs(metrics.frechet_distance([0.0], [[1.0]], [0.0], [[4.0]]) - 1.0) <= 1e-6
    x = rng.uniform(-1, 1, (4, 32, 32, 3)).astype(np.float32)
    checks["MS-SSIM identical"] = bool(np.allclose(metrics.ms_ssim(x, x), 1.0, atol=1e-6))
    p = nets.new_classifier(nets.ClassifierConfig(), seed=0)
    same = np.repeat(x[:1], 4, axis=0)
    checks["perceptual identical"] = metrics.perceptual_pair_distance(same, p, n_pairs=6) <= 1e-6
    feats = rng.standard_normal((300, 8))
    mu, C = metrics.gaussian_fit(feats)
    checks["Frechet self"] = metrics.frechet_distance(mu, C, mu, C) <= 1e-3
    record(8, all(checks.values()), ", ".join(f"{k}: {'ok' if v else 'BAD'}" for k, v in checks.items()))
    assert all(checks.values()), checks


def test_c09_gradient_check(reference_fixture):
    g = reference_fixture.generator.to(torch.float64)
    p = reference_fixture.classifier.to(torch.float64)
    y = reference_fixture.config.experiments.repair_class
    rng = np.random.default_rng(0)
    Z = torch.from_numpy(rng.standard_normal((20, g.latent_dim)))
    pairs = select_pairs(20, 10, rng)
    worst = 0.0
    h = 1e-3
    for phi in PHI_CHOICES:
        for lam in (0.0, 2.0):
            cfg = ObjectiveConfig(target_class=y, lam=lam, phi=phi)
            c = g.embedding[y].clone().requires_grad_(True)
            combined_loss(g, p, c, Z, cfg, pairs).total.backward()
            for k in rng.choice(g.embed_dim, 5, replace=False):
                e = torch.zeros_like(c)
                e[k] = h
                with torch.no_grad():
                    fd = float(combined_loss(g, p, c + e, Z, cfg, pairs).total
                               - combined_loss(g, p, c - e, Z, cfg, pairs).total) / (2 * h)
                worst = max(worst, abs(float(c.grad[k]) - fd) / max(abs(fd), 1e-6))
    record(9, worst <= 1e-3, f"max relative error {worst:.2e} over 5 coords x 3 taps x 2 lambdas")
    assert worst <= 1e-3


TINY_PIPELINE = [
    "--set", "gan_data.samples_per_class=8", "--set", "classifier_data.samples_per_class=8",
    "--set", "gan_train.batch_size=16", "--set", "classifier_train.batch_size=16",
    "--set", "metrics.n_images=16", "--set", "metrics.n_pairs=8", "--set", "metrics.is_splits=2",
    "--set", "optimization.steps=10", "--set", "optimization.trials=2", "--seed", "3",
]


def pipeline(root):
    def run(*argv):
        assert main(list(argv) + TINY_PIPELINE) == 0

    run("synth-data", "--which", "gan_data", "--out", str(root / "data.emb"))
    run("synth-data", "--which", "classifier_data", "--out", str(root / "cdata.emb"))
    run("train-classifier", "--data", str(root / "cdata.emb"), "--epochs", "1", "--out", str(root / "clf.emb"))
    run("train-gan", "--data", str(root / "data.emb"), "--iterations", "6", "--snapshot-interval", "3",
        "--out-dir", str(root / "run"))
    run("corrupt", "--generator", str(root / "run/generator.emb"), "--class", "2", "--out", str(root / "gc.emb"))
    run("optimize", "--generator", str(root / "gc.emb"), "--classifier", str(root / "clf.emb"), "--class", "2",
        "--out-dir", str(root / "opt"))
    return {p.name: p.read_bytes() for p in sorted((root / "opt").glob("trial_*.emb"))}


def test_c10_determinism(tmp_path, capsys):
    a = pipeline(tmp_path / "a")
    b = pipeline(tmp_path / "b")
    capsys.readouterr()
    same = len(a) == 2 and a == b
    record(10, same, f"{len(a)} TrialResult files, bit-identical across two runs: {same}")
    assert len(a) == 2
    assert a == b
    assert container.loads(a["trial_0.emb"]).trace.shape == (10, 3)


def test_c11_interpolation(reference_fixture):
    fx = reference_fixture
    rep = study(fx, "repair")
    it = experiments.interpolation_study(fx, selected_embedding(rep), rep["class"])
    probs = it["frame_probabilities"]
    ok = it["endpoints_exact"] and min(probs[1:-1]) >= 0.5
    record(11, ok, f"endpoints exact: {it['endpoints_exact']}; min intermediate p(y) {min(probs[1:-1]):.3f}")
    assert it["endpoints_exact"]
    assert min(probs[1:-1]) >= 0.5


@pytest.mark.xfail(strict=True, raises=AssertionError, reason="AM-S cannot leave a far-corrupted embedding on an early snapshot; see notes")
def test_c12_snapshot_sweep(reference_fixture):
    ss = study(reference_fixture, "snapshots")["per_snapshot"]
    pairs = {it: (v["own"]["perceptual"], v["am_perceptual"]) for it, v in ss.items()}
    ok = len(pairs) >= 3 and all(am >= own for own, am in pairs.values())
    record(12, ok, "; ".join(f"it {it}: own {o:.3f} AM-S {a:.3f}" for it, (o, a) in pairs.items()))
    assert len(pairs) >= 3
    for it, (own, am) in pairs.items():
        assert am >= own, f"snapshot {it}"
