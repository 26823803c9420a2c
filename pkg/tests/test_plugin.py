import itertools

import numpy as np
import pytest

import properties
from ewplug.basis import cluster_basis, constant_basis
from ewplug.data import Dataset
from ewplug.elicitation import WeightCoefficients
from ewplug.metrics import LinearMetric
from ewplug.plugin import PostShiftRule, apply_rule, pi_ew, weighted_objective


def _rows(eta):
    eta = np.asarray(eta, dtype=float)
    return Dataset(np.zeros((len(eta), 1)), np.zeros(len(eta), dtype=int), eta.shape[1], probs=eta)


def test_unit_weights_are_plain_argmax(rng):
    ds = _rows(rng.dirichlet(np.ones(4), size=50))
    assert np.array_equal(PostShiftRule.from_class_weights(np.ones(4)).predict(ds), ds.eta.argmax(axis=1))


def test_weights_flip_the_decision():
    ds = _rows([[0.6, 0.4]])
    rule = PostShiftRule.from_class_weights([1.0, 2.0])
    assert np.allclose(rule.scores(ds), [[0.6, 0.8]])
    assert rule.predict(ds).tolist() == [1]


def test_ties_go_to_lowest_class():
    ds = _rows(np.full((3, 3), 1 / 3))
    assert apply_rule(PostShiftRule.from_class_weights(np.ones(3)), ds).predict(ds).tolist() == [0, 0, 0]


def test_single_live_class():
    ds = _rows([[0.7, 0.2, 0.1], [0.1, 0.1, 0.8]])
    assert PostShiftRule.from_class_weights([0.0, 1.0, 0.0]).predict(ds).tolist() == [1, 1]


def test_negative_weight_never_wins():
    ds = _rows([[0.9, 0.05, 0.05], [0.5, 0.5, 0.0], [0.98, 0.0, 0.02]])
    pred = PostShiftRule.from_class_weights([-1.0, 1.0, 1.0]).predict(ds)
    assert 0 not in pred.tolist()


def test_apply_rule_with_external_probabilities():
    ds = _rows([[0.6, 0.4], [0.2, 0.8]])
    other = np.array([[0.1, 0.9], [0.9, 0.1]])
    assert apply_rule(PostShiftRule.from_class_weights([1, 1]), ds, other).predict(ds).tolist() == [1, 0]
    with pytest.raises(ValueError):
        apply_rule(PostShiftRule.from_class_weights([1, 1]), ds, other[:1])


def test_constant_basis_is_cost_weighted_bayes(rng):
    m = 3
    eta = rng.dirichlet(np.ones(m), size=200)
    y = np.array([rng.choice(m, p=p) for p in eta])
    ds = Dataset(rng.standard_normal((200, 1)), y, m, probs=eta)
    beta = np.array([1.0, 2.5, 0.7])
    rule = pi_ew(LinearMetric(beta), constant_basis(), ds, ds, eps=1.0)
    assert np.allclose(rule.coefficients.alpha[0], beta, atol=1e-10)
    assert np.array_equal(rule.predict(ds), (eta * beta).argmax(axis=1))


def test_six_point_brute_force(rng):
    k = 6
    counts = rng.integers(1, 8, size=(k, 2))
    idx = np.repeat(np.arange(k), counts.sum(axis=1))
    y = np.concatenate([np.repeat([0, 1], row) for row in counts])
    eta = counts / counts.sum(axis=1, keepdims=True)
    ds = Dataset(np.arange(k)[idx, None].astype(float), y, 2, group_ids=(np.arange(k) % 2)[idx], probs=eta[idx])
    coef = WeightCoefficients([[1.0, 3.0], [2.0, 1.0]], cluster_basis(2))
    W = coef.weights(ds)
    got = weighted_objective(ds, W, PostShiftRule(coef).predict(ds))
    scores = [weighted_objective(ds, W, np.array(a)[idx]) for a in itertools.product(range(2), repeat=k)]
    assert len(scores) == 64
    assert got == max(scores)


def test_full_mode_scores():
    ds = _rows([[0.6, 0.4]])
    # W_ij: reward for predicting j when the label is i
    coef = WeightCoefficients(np.array([[[0.0, 1.0], [1.0, 0.0]]]), constant_basis(), "full")
    rule = PostShiftRule(coef)
    assert np.allclose(rule.scores(ds), [[0.4, 0.6]])
    assert rule.predict(ds).tolist() == [1]


def test_rule_roundtrip_dict(rng):
    rule = PostShiftRule(WeightCoefficients(rng.normal(size=(2, 3)), cluster_basis(2)))
    back = PostShiftRule.from_dict(rule.to_dict())
    ds = Dataset(np.zeros((20, 1)), np.zeros(20, dtype=int), 3, group_ids=rng.integers(0, 2, 20), probs=rng.dirichlet(np.ones(3), size=20))
    assert np.array_equal(back.predict(ds), rule.predict(ds))
    assert rule.to_dict()["tie_break"] == "lowest-class-index"


def test_argmax_scale_invariance_property():
    properties.argmax_scale_invariance()
