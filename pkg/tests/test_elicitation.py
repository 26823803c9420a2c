import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import properties
from conftest import random_dataset
from ewplug.basis import BasisSet, ClusterIndicator, cluster_basis, constant_basis
from ewplug.benchmarks import ILN_T, ds_discrete, iln_discrete
from ewplug.classifiers import ArgmaxRule, total_variation, uniform_classifier
from ewplug.data import Dataset, phi_confusions
from ewplug.elicitation import (
    EPS_GRID,
    IllConditionedWarning,
    InfeasibleProbesError,
    SingularSystemError,
    WeightCoefficients,
    assemble_system,
    build_fixed_probes,
    build_threshold_probes,
    default_base,
    elicit,
    required_omega,
    select_epsilon,
    solve_alpha,
    structural_rank,
    system_matrix,
)
from ewplug.metrics import LinearMetric, accuracy
from ewplug.plugin import weighted_objective
from ewplug.shift_lab import DiscreteSpec, deterministic_rules, exact_dataset, population_confusion

SIGMA = np.array([[0.45, 0.10], [0.15, 0.30]])


@pytest.fixture
def pop():
    """One feature value, class priors 0.6 / 0.4, exactly."""
    return exact_dataset(DiscreteSpec([[0.0]], [[0.6, 0.4]]), 10)


def test_probe_eps_one_is_constant(pop):
    probes = build_fixed_probes(constant_basis(), uniform_classifier(2), 1.0, pop)
    for (l, i), h in zip(probes.keys, probes.classifiers):
        assert np.array_equal(h.proba(pop), np.eye(2)[np.full(pop.n, i)])


def test_probe_half_eps_uniform_base(pop):
    h = build_fixed_probes(constant_basis(), uniform_classifier(2), 0.5, pop).classifiers[0]
    assert np.allclose(h.proba(pop)[:, 0], 0.75)


def test_cluster_probe_only_moves_its_cluster(rng):
    ds = random_dataset(rng, 30, 3, k=3)
    base = ArgmaxRule()
    probes = build_fixed_probes(cluster_basis(3), base, 0.7, ds)
    for (l, i), h in zip(probes.keys, probes.classifiers):
        moved = np.any(h.proba(ds) != base.proba(ds), axis=1)
        assert not np.any(moved & (ds.group_ids != l))


def test_probe_eps_validated(pop):
    with pytest.raises(ValueError):
        build_fixed_probes(constant_basis(), uniform_classifier(2), 0.0, pop)


def test_population_sigma(pop):
    probes = build_fixed_probes(constant_basis(), uniform_classifier(2), 0.5, pop)
    sigma, rhs = assemble_system(probes, constant_basis(), pop, [0.55, 0.45])
    assert np.allclose(sigma, SIGMA, atol=1e-15)


def test_identity_sigma_is_diag_priors(pop):
    probes = build_fixed_probes(constant_basis(), uniform_classifier(2), 1.0, pop)
    assert np.allclose(system_matrix(probes, constant_basis(), pop), np.diag([0.6, 0.4]))


def test_empty_cluster_is_singular(rng):
    ds = random_dataset(rng, 20, 2, k=1)
    basis = BasisSet([ClusterIndicator(0), ClusterIndicator(1)])
    probes = build_fixed_probes(basis, ArgmaxRule(), 1.0, ds)
    sigma = system_matrix(probes, basis, ds)
    assert np.all(sigma[:, 2:] == 0)
    with pytest.raises(SingularSystemError, match="singular"):
        solve_alpha(sigma, np.ones(4))


def test_solve_hand_example():
    res = solve_alpha(SIGMA, [0.55, 0.45])
    assert np.allclose(res.alpha, [1.0, 1.0], atol=1e-12)
    assert res.condition_number >= 1


def test_solve_identity():
    v = np.array([0.3, -2.0, 5.0])
    assert np.array_equal(solve_alpha(np.eye(3), v).alpha, v)


def test_solve_ridge_and_validation():
    with pytest.warns(IllConditionedWarning):
        res = solve_alpha(np.diag([1.0, 0.0]), [1.0, 1.0], reg=1e-6)
    assert np.all(np.isfinite(res.alpha))
    with pytest.raises(ValueError):
        solve_alpha(np.ones((2, 3)), [1, 1])
    with pytest.raises(ValueError):
        solve_alpha(np.eye(2), [1, 1], reg=-1)


def test_ill_conditioned_warning():
    with pytest.warns(IllConditionedWarning):
        solve_alpha(np.diag([1.0, 1e-9]), [1.0, 1.0])


def test_domain_shift_weights_solve_but_do_not_identify():
    bm = ds_discrete(exact=True)
    probes = build_fixed_probes(bm.basis, default_base(bm.train), 1.0, bm.train)
    sigma = system_matrix(probes, bm.basis, bm.train)
    rhs = np.array([accuracy(2).evaluate(bm.val, h.proba(bm.val)) for h in probes.classifiers])
    # the density-ratio weights solve the system exactly ...
    assert np.allclose(sigma @ [1.6, 1.6, 0.4, 0.4], rhs, atol=1e-15)
    # ... but so does a whole line of others: every row satisfies sum_i Phi[l, i] / pi[l, i] = 1
    assert np.linalg.matrix_rank(sigma) == 3
    with pytest.raises(SingularSystemError):
        solve_alpha(sigma, rhs)
    res = elicit(accuracy(2), bm.basis, bm.train, bm.val, rank="auto")
    W = WeightCoefficients(res.alpha, bm.basis).weights(bm.train)
    point = (bm.train.features[:, 0] == 0).astype(int)
    for rule in deterministic_rules(bm.spec):
        true = np.trace(population_confusion(bm.spec, rule).full)
        assert weighted_objective(bm.train, W, rule[point]) == pytest.approx(true, abs=1e-12)


def test_elicit_accuracy_no_shift(pop):
    res = elicit(accuracy(2), constant_basis(), pop, pop, base=uniform_classifier(2), eps=0.5)
    assert np.allclose(res.alpha, [1.0, 1.0], atol=1e-12)
    res2 = elicit(LinearMetric([2.0, 2.0]), constant_basis(), pop, pop, base=uniform_classifier(2), eps=0.5)
    assert np.allclose(res2.alpha, [2.0, 2.0], atol=1e-12)


def test_full_mode_recovers_inverse_transition():
    bm = iln_discrete(exact=True)
    res = elicit(accuracy(2), bm.basis, bm.train, bm.val, mode="full")
    assert res.alpha.size == 4
    assert np.allclose(res.alpha.reshape(2, 2), np.linalg.inv(ILN_T), atol=1e-9)
    assert np.allclose(np.diag(res.alpha.reshape(2, 2)), [4 / 3, 4 / 3])


def test_structural_rank():
    assert structural_rank(3, 4) == 12
    assert structural_rank(1, 2, "full") == 3
    assert structural_rank(2, 3, "full") == 13


def test_uniform_base_singular_for_partitions(rng):
    ds = random_dataset(rng, 60, 2, k=2, all_classes=True)
    basis = cluster_basis(2)
    sigma = system_matrix(build_fixed_probes(basis, uniform_classifier(2), 0.5, ds), basis, ds)
    assert np.linalg.matrix_rank(sigma) < 4
    assert isinstance(default_base(ds), ArgmaxRule)
    assert not isinstance(default_base(ds.with_probs(None)), ArgmaxRule)


def test_select_epsilon_smallest_well_conditioned(pop):
    eps = select_epsilon(constant_basis(), pop, base=uniform_classifier(2))
    # condition number is about 1.08 / eps here, so 1e-4 already passes 1e6
    assert eps == min(EPS_GRID)
    assert select_epsilon(constant_basis(), pop, base=uniform_classifier(2), max_cond=50) == 0.1


def test_residual_recomputed(rng):
    ds = random_dataset(rng, 80, 3, k=2, all_classes=True)
    res = elicit(LinearMetric([1.0, 2.0, 0.5]), cluster_basis(2), ds, ds, eps=0.5)
    assert res.residual == pytest.approx(res.recomputed_residual(), abs=0)
    assert res.to_dict()["probe_construction"]["kind"] == "fixed"


def test_center_rows_are_differenced(rng):
    ds = random_dataset(rng, 50, 2, all_classes=True)
    plain = elicit(accuracy(2), constant_basis(), ds, ds, eps=0.3)
    centered = elicit(accuracy(2), constant_basis(), ds, ds, eps=0.3, center=ArgmaxRule())
    shift = phi_confusions(ds, constant_basis(), ArgmaxRule()).ravel()
    assert np.allclose(centered.sigma, plain.sigma - shift[None, :])


def _pure_clusters():
    y = np.tile([0] * 5 + [1] * 5, 2)
    eta = np.where(y[:, None] == np.arange(2), 0.95, 0.05)
    return Dataset(np.zeros((20, 1)), y, 2, group_ids=np.repeat([0, 1], 10), probs=eta)


def test_threshold_probes_feasible():
    ds = _pure_clusters()
    probes = build_threshold_probes(cluster_basis(2), ds, gamma=0.2, omega=0.05)
    assert probes.feasible and len(probes) == 4
    sigma = system_matrix(probes, cluster_basis(2), ds)
    off = sigma - np.diag(np.diag(sigma))
    assert np.all(np.diag(sigma) > off.sum(axis=1))


def test_threshold_probes_infeasible_report():
    ds = _pure_clusters()
    probes = build_threshold_probes(cluster_basis(2), ds, gamma=0.6, omega=0.05)
    assert not probes.feasible
    assert all(not r["feasible"] for r in probes.feasibility)
    with pytest.raises(InfeasibleProbesError, match=r"\(0, 0\)"):
        build_threshold_probes(cluster_basis(2), ds, gamma=0.6, omega=0.05, strict=True)
    assert required_omega(probes, 0.05) == 0.05


def test_threshold_single_cluster_is_constant():
    ds = _pure_clusters()
    probes = build_threshold_probes(constant_basis(), ds, gamma=0.2, omega=0.05)
    for (_, i), h in zip(probes.keys, probes.classifiers):
        assert np.all(h.predict(ds) == i)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(2, 4), L=st.integers(1, 3), eps=st.floats(0.05, 1.0))
def test_exact_recovery(seed, m, L, eps):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng, 120, m, k=L, all_classes=True)
    basis = cluster_basis(L)
    sigma = system_matrix(build_fixed_probes(basis, ArgmaxRule(), eps, ds), basis, ds)
    alpha = rng.normal(size=L * m)
    if np.linalg.cond(sigma) >= 1e6:
        return
    got = solve_alpha(sigma, sigma @ alpha).alpha
    assert np.max(np.abs(got - alpha)) < 1e-8


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(2, 4), eps=st.floats(0.01, 1.0))
def test_probe_neighbourhood(seed, m, eps):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng, 25, m, k=2)
    base = ArgmaxRule()
    probes = build_fixed_probes(cluster_basis(2), base, eps, ds)
    for (l, i), h in zip(probes.keys, probes.classifiers):
        tv = total_variation(h.proba(ds), base.proba(ds))
        assert tv.max() <= eps + 1e-12
        moved = (ds.group_ids == l) & (ds.eta.argmax(axis=1) != i)
        assert np.allclose(tv[moved], eps)


def test_diagonal_dominance_grows_with_eps():
    spec = DiscreteSpec([[0.0], [1.0]], [[0.3, 0.1, 0.05], [0.1, 0.25, 0.2]])
    pop = exact_dataset(spec, 200)
    basis = constant_basis()

    def margin(eps):
        s = system_matrix(build_fixed_probes(basis, uniform_classifier(3), eps, pop), basis, pop)
        off = s[~np.eye(3, dtype=bool)]
        return np.diag(s).min() - off.max()

    margins = [margin(e) for e in sorted(EPS_GRID)]
    assert all(b >= a - 1e-15 for a, b in zip(margins, margins[1:]))


def test_homogeneity_property():
    properties.elicitation_homogeneity()
