import json

import numpy as np
import pytest
from scipy.stats import chi2_contingency, norm

from ewplug.benchmarks import ILN_T, ds_shift, ds_spec, iln_spec
from ewplug.data import Dataset, confusion
from ewplug.metrics import GMean, accuracy
from ewplug.plugin import weighted_objective
from ewplug.shift_lab import (
    CDLN,
    IDLN,
    ILN,
    DiscreteSpec,
    DomainShift,
    GaussianMixtureSpec,
    bayes_oracle,
    cached_oracle,
    corrupt,
    deterministic_rules,
    exact_dataset,
    flip_matrix,
    population_confusion,
    sample_clean,
    shift_from_dict,
    shifted_spec,
    spec_from_dict,
    true_weights,
    uniform_flip_matrix,
)


def test_uniform_joint_frequencies():
    spec = DiscreteSpec([[0.0], [1.0]], np.full((2, 2), 0.25))
    ds = sample_clean(spec, 10_000, seed=1)
    cell = 2 * (ds.features[:, 0] == 1) + ds.labels
    freq = np.bincount(cell, minlength=4) / ds.n
    assert np.all(np.abs(freq - 0.25) < 4 * np.sqrt(0.25 * 0.75 / ds.n))


def test_gaussian_bayes_accuracy():
    spec = GaussianMixtureSpec(means=[[-1.0], [1.0]], cov=[[1.0]], priors=[0.5, 0.5])
    ds = sample_clean(spec, 100_000, seed=2)
    acc = np.mean(ds.eta.argmax(axis=1) == ds.labels)
    assert acc == pytest.approx(norm.cdf(1.0), abs=0.01)


def test_sampling_deterministic():
    spec = GaussianMixtureSpec(means=[[0, 1], [1, 0]], cov=np.eye(2), priors=[0.3, 0.7])
    a, b = sample_clean(spec, 500, seed=9), sample_clean(spec, 500, seed=9)
    assert a.features.tobytes() == b.features.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()


def test_spec_validation():
    with pytest.raises(ValueError, match="degenerate"):
        GaussianMixtureSpec(means=[[0, 0], [1, 1]], cov=[[1, 1], [1, 1]], priors=[0.5, 0.5])
    with pytest.raises(ValueError):
        DiscreteSpec([[0.0]], [[0.5, 0.6]])
    with pytest.raises(ValueError):
        ILN([[0.5, 0.6], [0.5, 0.5]])
    spec = iln_spec()
    assert spec_from_dict(json.loads(json.dumps(spec.to_dict()))).joint.tolist() == spec.joint.tolist()


def test_exact_dataset_counts():
    ds = exact_dataset(iln_spec(), 20)
    assert ds.n == 20
    assert np.allclose(confusion(ds, np.zeros(20, dtype=int)).priors, [0.5, 0.5])
    with pytest.raises(ValueError):
        exact_dataset(iln_spec(), 7)


def test_iln_flip_rate():
    spec = GaussianMixtureSpec(means=[[0, 0], [2, 0], [0, 2]], cov=np.eye(2), priors=[0.4, 0.4, 0.2])
    clean = sample_clean(spec, 20_000, seed=3)
    noisy = corrupt(clean, ILN(flip_matrix(3, 0, 1, 0.6)), seed=4)
    pair = clean.labels < 2
    rate = np.mean(noisy.labels[pair] != clean.labels[pair])
    assert abs(rate - 0.6) < 3 * np.sqrt(0.6 * 0.4 / pair.sum())
    assert np.array_equal(noisy.labels[~pair], clean.labels[~pair])
    assert noisy.n == clean.n and noisy.features is clean.features


def test_identity_transition_is_noop():
    clean = sample_clean(iln_spec(), 1000, seed=5)
    assert np.array_equal(corrupt(clean, ILN(np.eye(2)), seed=6).labels, clean.labels)


def test_cdln_flips_stay_in_their_cluster():
    spec = GaussianMixtureSpec(means=[[0, 1], [-1, -1], [1, -1]], cov=np.eye(2), priors=[0.5, 0.3, 0.2])
    clean = sample_clean(spec, 5000, seed=7)
    noisy = corrupt(clean, CDLN(np.stack([np.eye(3), uniform_flip_matrix(3, 0.5)])), seed=8)
    changed = noisy.labels != clean.labels
    assert not np.any(changed & (clean.group_ids == 0))
    assert np.any(changed & (clean.group_ids == 1))
    no_clusters = Dataset(clean.features[:10], clean.labels[:10], 3)
    with pytest.raises(ValueError, match="cluster ids"):
        corrupt(no_clusters, CDLN(np.stack([np.eye(3)] * 2)))


def test_noisy_conditional_is_carried():
    clean = sample_clean(iln_spec(), 50, seed=1)
    noisy = corrupt(clean, ILN(ILN_T), seed=2)
    assert np.allclose(noisy.eta, clean.eta @ ILN_T)


def test_idln_interpolates():
    shift = IDLN(np.eye(2), [[0.5, 0.5], [0.5, 0.5]], feature=0, scale=2.0)
    ds = Dataset(np.array([[-50.0], [0.0], [50.0]]), [0, 0, 1], 2)
    T = shift.transitions(ds)
    assert np.allclose(T[0], np.eye(2), atol=1e-12)
    assert np.allclose(T[1], [[0.75, 0.25], [0.25, 0.75]])
    assert np.allclose(T[2], 0.5, atol=1e-12)
    assert isinstance(shift_from_dict(shift.to_dict()), IDLN)


def test_domain_shift_keeps_conditional():
    spec = ds_spec()
    train = corrupt(sample_clean(spec, 100_000, seed=1), ds_shift(spec), seed=2)
    point = (train.features[:, 0] == 0).astype(int)
    assert abs(np.mean(point == 0) - 0.5) < 0.01
    for p in range(2):
        observed = np.bincount(train.labels[point == p], minlength=2)
        expected = spec.conditional[p] * observed.sum()
        _, pval, _, _ = chi2_contingency(np.vstack([observed, expected]))
        assert pval > 1e-3


def test_true_weights_examples():
    ds = Dataset(np.zeros((1, 1)), [0], 2)
    W = true_weights(ILN(ILN_T), np.eye(2), ds)[0]
    assert np.allclose(W, np.array([[0.8, -0.2], [-0.2, 0.8]]) / 0.6)
    assert np.allclose(np.diag(W), [4 / 3, 4 / 3])
    assert np.array_equal(true_weights(ILN(np.eye(2)), [[1, 2], [3, 4]], ds)[0], [[1, 2], [3, 4]])
    ds_a = Dataset(np.array([[1.0]]), [0], 2)
    assert np.allclose(true_weights(ds_shift(), np.ones((2, 2)), ds_a)[0], 1.6)
    with pytest.raises(np.linalg.LinAlgError):
        true_weights(ILN(np.full((2, 2), 0.5)), np.eye(2), ds)


def test_weighted_expectation_identity_domain_shift():
    spec, shift = ds_spec(), ds_shift()
    train = exact_dataset(shifted_spec(spec, shift), 1000)
    W = np.einsum("nii->ni", true_weights(shift, np.eye(2), train))
    point = (train.features[:, 0] == 0).astype(int)
    rules = list(deterministic_rules(spec))
    assert len(rules) == 4
    for rule in rules:
        true = np.trace(population_confusion(spec, rule).full)
        assert weighted_objective(train, W, rule[point]) == pytest.approx(true, abs=1e-15)


def test_weighted_expectation_identity_label_noise():
    spec = iln_spec()
    train = exact_dataset(shifted_spec(spec, ILN(ILN_T)), 1000)
    W = true_weights(ILN(ILN_T), np.eye(2), train)
    point = train.features[:, 0].astype(int)
    for rule in deterministic_rules(spec):
        h = np.eye(2)[rule[point]]
        weighted = np.mean(np.einsum("nj,nj->n", W[np.arange(train.n), train.labels], h))
        assert weighted == pytest.approx(np.trace(population_confusion(spec, rule).full), abs=1e-12)


def test_label_noise_population_mixing():
    spec = iln_spec()
    noisy = shifted_spec(spec, ILN(ILN_T))
    clean_priors = spec.joint.sum(axis=0)
    for j in range(2):
        C = population_confusion(noisy, np.full(spec.k, j)).full
        assert np.allclose(C[:, j], ILN_T.T @ clean_priors)


def test_oracle_accuracy_is_plain_argmax():
    spec = DiscreteSpec([[0.0], [1.0], [2.0]], [[0.3, 0.1], [0.1, 0.2], [0.15, 0.15]])
    res = bayes_oracle(spec, accuracy(2), resolution=10)
    assert res.exact
    assert np.allclose(res.weights / res.weights.sum(), [0.5, 0.5])
    assert res.value == pytest.approx(np.sum(spec.joint.max(axis=1)))


def test_oracle_gmean_beats_accuracy_maximizer():
    spec = DiscreteSpec([[0.0], [1.0], [2.0], [3.0]], [[0.5, 0.01], [0.25, 0.03], [0.1, 0.03], [0.05, 0.03]])
    assert np.allclose(spec.joint.sum(axis=0), [0.9, 0.1])
    res = bayes_oracle(spec, GMean(), resolution=200)
    acc_rule = spec.conditional.argmax(axis=1)
    baseline = GMean().value(population_confusion(spec, acc_rule))
    assert res.value > baseline
    assert res.resolution == 200


def test_cached_oracle(tmp_path):
    spec = GaussianMixtureSpec(means=[[0.0], [2.0]], cov=[[1.0]], priors=[0.8, 0.2])
    a = cached_oracle(spec, GMean(), tmp_path, resolution=10, n_mc=2000)
    files = list(tmp_path.glob("oracle-*.json"))
    assert len(files) == 1
    stored = json.loads(files[0].read_text())
    assert stored["resolution"] == 10 and stored["n_mc"] == 2000
    b = cached_oracle(spec, GMean(), tmp_path, resolution=10, n_mc=2000)
    assert a.value == b.value


def test_domain_shift_validation():
    with pytest.raises(ValueError):
        DomainShift(ds_spec(), [1.0, 0.0])
    with pytest.raises(ValueError):
        DomainShift(ds_spec(), [0.2, 0.3, 0.5])
