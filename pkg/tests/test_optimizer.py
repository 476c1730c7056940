import numpy as np
import pytest
import torch

from embsurg import optimizer as opt
from embsurg.errors import ConfigurationError, StateError
from embsurg.objective import ObjectiveConfig
from embsurg.optimizer import InitSpec, OptimizationConfig, TrialResult


def make_cfg(y=1, **kw):
    base = dict(steps=6, batch_size=6, resample_interval=3, trials=3, seed=11)
    base.update(kw)
    return OptimizationConfig.for_regime(kw.pop("regime", "AM-L"), y, **{k: v for k, v in base.items() if k != "regime"})


def test_regime_table():
    cfg = OptimizationConfig.for_regime("am-d-s", 2)
    assert (cfg.init.strategy, cfg.learning_rate, cfg.objective.lam) == ("around-original", 0.01, 2.0)
    cfg = OptimizationConfig.for_regime("AM-L", 2)
    assert (cfg.init.strategy, cfg.learning_rate, cfg.objective.lam) == ("around-mean", 0.1, 0.0)
    assert (cfg.steps, cfg.resample_interval, cfg.batch_size, cfg.trials) == (200, 20, 20, 5)
    assert cfg.objective.num_pairs == 10
    with pytest.raises(ConfigurationError):
        opt.normalize_regime("AM-X")


def test_config_dict_round_trip():
    cfg = make_cfg(clip_bounds=(-0.59, 0.61), lam=2.0, phi="midlayer")
    assert OptimizationConfig.from_dict(cfg.to_dict()) == cfg


def test_zero_radius_returns_row():
    W = np.random.default_rng(0).standard_normal((4, 6))
    out = opt.init_embedding(W, 2, InitSpec(radius=0.0), np.random.default_rng(1))
    assert np.array_equal(out, W[2])


@pytest.mark.parametrize("distribution", opt.BALL_DISTRIBUTIONS)
def test_around_original_stays_in_ball(distribution):
    W = np.random.default_rng(0).standard_normal((4, 6))
    rng = np.random.default_rng(2)
    spec = InitSpec(radius=0.1, distribution=distribution)
    dists = [np.linalg.norm(opt.init_embedding(W, 1, spec, rng) - W[1]) for _ in range(1000)]
    assert max(dists) <= 0.1


def test_around_mean_of_equal_rows():
    v = np.array([0.2, -0.1, 0.3])
    W = np.tile(v, (5, 1))
    out = opt.init_embedding(W, 0, InitSpec(strategy="around-mean", radius=0.1), np.random.default_rng(0))
    assert np.linalg.norm(out - v) <= 0.1


def test_top_k_init_needs_ranking():
    W = np.eye(3)
    with pytest.raises(ConfigurationError):
        opt.init_embedding(W, 0, InitSpec(strategy="top-k"), np.random.default_rng(0))
    out = opt.init_embedding(W, 0, InitSpec(strategy="top-k", k=2), np.random.default_rng(0), ranking=[(2, 0.9), (0, 0.1)], rank_index=0)
    assert np.array_equal(out, W[2])


def test_clip_bounds():
    W = np.array([[-0.2, 0.1], [0.3, 0.0]])
    assert opt.compute_clip_bounds(W) == (-0.2, 0.3)
    lo, hi = opt.compute_clip_bounds(W, margin=0.05)
    assert lo == pytest.approx(-0.25) and hi == pytest.approx(0.35)


def test_published_bounds_accepted_verbatim():
    assert make_cfg(clip_bounds=(-0.59, 0.61)).clip_bounds == (-0.59, 0.61)
    with pytest.raises(ConfigurationError):
        make_cfg(clip_bounds=(0.5, 0.5))


def test_zero_steps_returns_init(small_generator, small_classifier):
    cfg = make_cfg(steps=0, clip_bounds=(-100.0, 100.0))
    res = opt.optimize_embedding(small_generator, small_classifier, 1, cfg, np.random.default_rng(0))
    assert res.trace.shape == (0, 3)
    assert np.allclose(res.final_embedding, res.init_embedding, atol=1e-7)


def test_zero_learning_rate_is_flat(small_generator, small_classifier):
    g = small_generator
    init = g.embedding[1].double().numpy() * 3.0
    cfg = make_cfg(learning_rate=0.0)
    res = opt.optimize_embedding(g, small_classifier, 1, cfg, np.random.default_rng(0), init=init)
    lo, hi = opt.default_clip_bounds(g)
    assert np.allclose(res.final_embedding, np.clip(init, lo, hi), atol=1e-7)


def test_trajectory_respects_clip_and_frozen_body(small_generator, small_classifier, monkeypatch):
    g, p = small_generator, small_classifier
    before = g.body_checksum(), p.checksum()
    seen = []
    real = opt.combined_loss

    def spy(g_, p_, c, Z, cfg, pairs=None):
        seen.append(c.detach().clone())
        return real(g_, p_, c, Z, cfg, pairs)

    monkeypatch.setattr(opt, "combined_loss", spy)
    cfg = make_cfg(learning_rate=5.0, clip_bounds=(-0.3, 0.3), lam=2.0)
    res = opt.optimize_embedding(g, p, 1, cfg, np.random.default_rng(0))
    assert all(float(c.min()) >= -0.3 - 1e-7 and float(c.max()) <= 0.3 + 1e-7 for c in seen)  # float32 rounding
    assert res.final_embedding.min() >= -0.3 - 1e-7 and res.final_embedding.max() <= 0.3 + 1e-7
    assert (g.body_checksum(), p.checksum()) == before
    assert res.trace.shape == (6, 3)


def test_run_trials_deterministic_with_distinct_inits(small_generator, small_classifier):
    cfg = make_cfg()
    a = opt.run_trials(small_generator, small_classifier, 1, cfg)
    b = opt.run_trials(small_generator, small_classifier, 1, cfg)
    assert [r.seed for r in a] == [11 ^ t for t in range(3)]
    for x, y in zip(a, b):
        assert np.array_equal(x.final_embedding, y.final_embedding)
        assert np.array_equal(x.trace, y.trace)
    inits = [r.init_embedding for r in a]
    assert all(not np.array_equal(inits[i], inits[j]) for i in range(3) for j in range(i + 1, 3))


def test_target_out_of_range(small_generator, small_classifier):
    with pytest.raises(ConfigurationError):
        opt.optimize_embedding(small_generator, small_classifier, 9, make_cfg(), np.random.default_rng(0))


def result(i, **metrics):
    return TrialResult(np.zeros(2), np.zeros((0, 3)), None, i, 0.0, 0, trial_index=i, metrics=metrics)


def test_select_trial_rules():
    rs = [result(0, perceptual=0.3, accuracy=0.9), result(1, perceptual=0.5, accuracy=0.1),
          result(2, perceptual=0.5, accuracy=0.95)]
    assert opt.select_trial(rs).trial_index == 1
    assert opt.select_trial(rs, "best-accuracy").trial_index == 2
    assert opt.select_trial(rs, "index", 2).trial_index == 2
    assert opt.select_trial([result(4)], "best-perceptual").trial_index == 4
    with pytest.raises(StateError):
        opt.select_trial([result(0), result(1)], "best-accuracy")
    with pytest.raises(ConfigurationError):
        opt.select_trial(rs, "human")


def test_select_trial_skips_failures():
    bad = result(0, perceptual=9.0)
    bad.error = "diverged"
    assert opt.select_trial([bad, result(1, perceptual=0.1), result(2, perceptual=0.2)]).trial_index == 2
    with pytest.raises(StateError):
        opt.select_trial([bad])


def test_trace_csv_header():
    r = TrialResult(None, np.array([[1.0, 0.5, 0.25]]), None, 0, 0.0, 0)
    assert r.trace_csv().splitlines() == ["step,L_total,L_AM,L_D", "0,1.0,0.5,0.25"]


def test_objective_batch_mismatch_rejected():
    with pytest.raises(ConfigurationError):
        OptimizationConfig(batch_size=10, objective=ObjectiveConfig(0, batch_size=20)).validate()
