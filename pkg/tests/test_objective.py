import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from embsurg import objective
from embsurg.errors import ConfigurationError, DegeneratePairError
from embsurg.objective import ObjectiveConfig, combined_loss, diversity_from_features, select_pairs

from conftest import uniform_classifier


def fixed_probs(monkeypatch, probs):
    probs = torch.as_tensor(probs, dtype=torch.float64)
    monkeypatch.setattr(objective.nets, "classify", lambda p, x: (probs, torch.log(probs)))


def test_uniform_classifier_gives_log_tenth(small_generator):
    g = small_generator
    p = uniform_classifier(image_size=16)
    Z = torch.randn(7, g.latent_dim)
    val = objective.am_loss(g, p, g.embedding[0], Z, 3)
    assert float(val) == pytest.approx(math.log(0.1), abs=1e-6)


def test_am_loss_hand_oracle(monkeypatch, small_generator):
    fixed_probs(monkeypatch, [[0.5, 0.5], [0.25, 0.75]])
    val = objective.am_loss(small_generator, None, small_generator.embedding[0], torch.zeros(2, 8), 0)
    assert float(val) == pytest.approx(-1.039721, abs=1e-6)


def test_am_loss_certain_class_is_zero(monkeypatch, small_generator):
    fixed_probs(monkeypatch, [[1.0, 0.0]] * 3)
    assert float(objective.am_loss(small_generator, None, small_generator.embedding[0], torch.zeros(3, 8), 0)) == 0.0


def test_am_loss_empty_batch(small_generator, small_classifier):
    with pytest.raises(ConfigurationError):
        objective.am_loss(small_generator, small_classifier, small_generator.embedding[0], torch.zeros(0, 8), 0)


def test_pixel_diversity_closed_form():
    m = 16 * 16 * 3
    feats = torch.stack([torch.zeros(m, dtype=torch.float64), torch.full((m,), 0.1, dtype=torch.float64)])
    Z = torch.tensor([[0.0, 0.0], [2.0, 0.0]], dtype=torch.float64)
    val = diversity_from_features(feats, Z, [(0, 1)])
    assert float(val) == pytest.approx(0.1 * math.sqrt(m) / 2, rel=1e-12)
    assert float(diversity_from_features(2 * feats, Z, [(0, 1)])) == pytest.approx(2 * float(val), rel=1e-12)


def test_collapsed_generator_has_zero_diversity(monkeypatch, small_generator):
    img = torch.rand(1, 16, 16, 3)
    monkeypatch.setattr(objective.nets, "generate", lambda g, c, Z: img.expand(len(Z), -1, -1, -1))
    Z = torch.randn(6, 8)
    pairs = select_pairs(6, 5, np.random.default_rng(0))
    assert float(objective.diversity_loss(small_generator, None, Z, pairs, "pixel")) == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.data())
def test_select_pairs_distinct_and_ordered(n, data):
    k = data.draw(st.integers(0, n * (n - 1) // 2))
    pairs = select_pairs(n, k, np.random.default_rng(data.draw(st.integers(0, 2**32 - 1))))
    assert len(set(pairs)) == k
    assert all(0 <= i < j < n for i, j in pairs)


def test_select_pairs_infeasible():
    with pytest.raises(ConfigurationError):
        select_pairs(4, 7, np.random.default_rng(0))


def test_diversity_pair_errors():
    feats = torch.randn(3, 5)
    Z = torch.randn(3, 2)
    with pytest.raises(ConfigurationError):
        diversity_from_features(feats, Z, [(1, 1)])
    with pytest.raises(ConfigurationError):
        diversity_from_features(feats, Z, [(0, 1), (1, 0)])
    with pytest.raises(ConfigurationError):
        diversity_from_features(feats, Z, [])
    Z[2] = Z[0]
    with pytest.raises(DegeneratePairError):
        diversity_from_features(feats, Z, [(0, 2)])


def test_diversity_symmetric_in_pair_order():
    feats, Z = torch.randn(4, 6), torch.randn(4, 3)
    a = diversity_from_features(feats, Z, [(0, 1), (2, 3)])
    b = diversity_from_features(feats, Z, [(1, 0), (3, 2)])
    assert torch.allclose(a, b)


def test_zero_lambda_equals_am(small_generator, small_classifier):
    g, p = small_generator, small_classifier
    Z = torch.randn(5, 8)
    br = combined_loss(g, p, g.embedding[1], Z, ObjectiveConfig(target_class=1, lam=0.0))
    assert torch.equal(br.total, objective.am_loss(g, p, g.embedding[1], Z, 1))


def test_combined_loss_affine_in_lambda(small_generator, small_classifier):
    g, p = small_generator.to(torch.float64), small_classifier.to(torch.float64)
    Z = torch.randn(6, 8, dtype=torch.float64)
    pairs = select_pairs(6, 4, np.random.default_rng(1))
    vals = [float(combined_loss(g, p, g.embedding[2], Z, ObjectiveConfig(2, lam=lam), pairs).total)
            for lam in (1.0, 2.0, 3.0)]
    assert vals[1] - vals[0] == pytest.approx(vals[2] - vals[1], rel=1e-9)


def test_positive_lambda_requires_pairs(small_generator, small_classifier):
    with pytest.raises(ConfigurationError):
        combined_loss(small_generator, small_classifier, small_generator.embedding[0], torch.randn(4, 8),
                      ObjectiveConfig(0, lam=1.0))


@pytest.mark.parametrize("kw", [dict(lam=-1.0), dict(phi="conv5"), dict(lam=1.0, num_pairs=50, batch_size=5)])
def test_config_validation(kw):
    with pytest.raises(ConfigurationError):
        ObjectiveConfig(target_class=0, **kw).validate()


def gradient_errors(g, p, phi, lam, seed=0):
    """Relative errors between autograd and central differences on 5 random coordinates."""
    rng = np.random.default_rng(seed)
    Z = torch.from_numpy(rng.standard_normal((8, g.latent_dim)))
    pairs = select_pairs(8, 6, rng)
    cfg = ObjectiveConfig(target_class=1, lam=lam, phi=phi)

    def f(c):
        return combined_loss(g, p, c, Z, cfg, pairs).total

    c = g.embedding[1].clone().requires_grad_(True)
    f(c).backward()
    errs = []
    h = 1e-3
    for k in rng.choice(g.embed_dim, 5, replace=False):
        e = torch.zeros_like(c)
        e[k] = h
        with torch.no_grad():
            fd = float(f(c + e) - f(c - e)) / (2 * h)
        errs.append(abs(float(c.grad[k]) - fd) / max(abs(fd), 1e-6))
    return errs


@pytest.mark.parametrize("phi", objective.PHI_CHOICES)
@pytest.mark.parametrize("lam", [0.0, 2.0])
def test_gradient_matches_finite_differences(small_generator, small_classifier, phi, lam):
    g = small_generator.to(torch.float64)
    p = small_classifier.to(torch.float64)
    assert max(gradient_errors(g, p, phi, lam)) <= 1e-3
