from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import single_graph_state, ystar_entropy_score

from ceo import gp as gplib
from scipy.integrate import trapezoid
from ceo.acquisition import (
    AcquisitionSettings,
    AcquisitionState,
    CesRound,
    Kde,
    binned_entropy,
    build_opt_mixture,
    ces_score,
    cei_score,
    cei_scores,
    entropies,
    expected_improvement,
    joint_entropy,
    kde_entropy,
    structure_mi_score,
    thompson_optima,
    ucb_from_stats,
    ucb_weights,
)
from ceo.graphs import CHAIN_ROLES, Dag, HypothesisSpace, InterventionSet
from ceo.posterior import GraphPosterior, LikelihoodModel, posterior_entropy
from ceo.scm import Samples
from ceo.surrogate import CausalSurrogate, Grid, GridFunction

Z_SET = InterventionSet(("Z",), ((-5.0, 5.0),))
SMALL = AcquisitionSettings(J=200, K=400, L=10)


@pytest.fixture(scope="module")
def state():
    return single_graph_state(SMALL)


def _const_surrogate(mean_fn, signal=1.0, noise=1e-6, x=None, y=None):
    grid = Grid.regular(Z_SET, 30)
    pm = GridFunction(grid, mean_fn(grid.points[:, 0]))
    po = GridFunction(grid, np.zeros(len(grid)))
    gp = gplib.GaussianProcess.build(gplib.RbfKernel([1.0], signal), noise, x, y, mean_fn=pm)
    return CausalSurrogate(Z_SET, pm, po, gp)


# KDE and entropy ---------------------------------------------------------------


def test_kde_entropy_standard_normal(rng):
    k = Kde.fit(rng.standard_normal(10_000))
    assert kde_entropy(k) == pytest.approx(0.5 * np.log(2 * np.pi * np.e), abs=0.05)


def test_kde_entropy_scaling(rng):
    x = rng.standard_normal(5000)
    assert kde_entropy(Kde.fit(2 * x)) - kde_entropy(Kde.fit(x)) == pytest.approx(np.log(2), abs=0.05)


def test_kde_range_beyond_five_bandwidths(rng):
    k = Kde.fit(rng.standard_normal(500))
    lo, hi = k.default_range(5.0)
    # same grid spacing over the wider range
    n = 4001
    step = (hi - lo) / (n - 1)
    wide = kde_entropy(k, lo - 400 * step, hi + 400 * step, n + 800)
    assert abs(kde_entropy(k, lo, hi, n) - wide) < 1e-6


def test_kde_integrates_to_one(rng):
    k = Kde.fit(rng.gamma(2.0, size=300))
    lo, hi = k.default_range()
    t = np.linspace(lo, hi, 4000)
    p = k.pdf(t)
    assert np.all(p >= 0)
    assert trapezoid(p, t) == pytest.approx(1.0, abs=1e-3)


def test_binned_entropy_matches_quadrature(rng):
    for x in (rng.standard_normal(400), rng.exponential(size=400), np.concatenate([rng.normal(-3, 0.2, 200), rng.normal(2, 1, 200)])):
        assert binned_entropy(x) == pytest.approx(kde_entropy(Kde.fit(x), resolution=4096), abs=2e-3)


def test_entropies_rows_independent(rng):
    rows = rng.standard_normal((5, 300)) * np.array([[0.01], [1], [10], [1], [100]])
    both = entropies(rows)
    single = [entropies(r[None, :])[0] for r in rows]
    np.testing.assert_allclose(both, single, rtol=0, atol=1e-12)


def test_collapsed_samples_use_bandwidth_floor():
    assert np.isfinite(binned_entropy(np.full(100, 0.3)))


# Thompson optima, UCB weights, mixture ----------------------------------------


def test_thompson_deterministic_function(rng):
    sur = _const_surrogate(np.sin, signal=1e-12, noise=1e-6)
    grid = np.linspace(-5, 5, 30)[:, None]
    xs, ys = thompson_optima(sur, 50, grid, rng)
    i = int(np.argmin(sur.prior_mean(grid)))
    np.testing.assert_array_equal(xs[:, 0], grid[i, 0])
    np.testing.assert_allclose(ys, sur.prior_mean(grid)[i], atol=1e-4)


def test_thompson_matches_brute_force(rng):
    x = np.array([[-2.0], [0.0], [3.0]])
    sur = _const_surrogate(np.cos, x=x, y=[0.5, -0.2, 0.1], noise=0.05)
    grid = np.linspace(-5, 5, 25)[:, None]
    _, ys = thompson_optima(sur, 10_000, grid, np.random.default_rng(1))
    brute = gplib.sample_joint(sur.gp, grid, 10_000, np.random.default_rng(2)).min(axis=1)
    se = np.sqrt(ys.var() / 1e4 + brute.var() / 1e4)
    assert abs(ys.mean() - brute.mean()) <= 3 * se


def test_thompson_single_point_grid(rng):
    sur = _const_surrogate(np.cos, x=[[1.0]], y=[0.0], noise=0.1)
    xs, ys = thompson_optima(sur, 20_000, [[0.5]], rng)
    m, v = sur.posterior([[0.5]])
    assert ys.mean() == pytest.approx(m[0], abs=4 * np.sqrt(v[0] / 2e4))
    assert ys.var() == pytest.approx(v[0], rel=0.05)


def test_ucb_examples():
    np.testing.assert_allclose(ucb_from_stats([0.3], [0.2]), [1.0])
    np.testing.assert_allclose(ucb_from_stats([1.0, 1.0], [0.5, 0.5]), [0.5, 0.5])
    w = ucb_from_stats([0.0, 1.0], [0.0, 0.0], beta=0.1)
    np.testing.assert_allclose(w, [0.7311, 0.2689], atol=1e-4)


def test_ucb_weights_from_surrogates():
    a = _const_surrogate(lambda z: 0.0 * z, signal=1e-12)
    b = _const_surrogate(lambda z: 0.0 * z + 1.0, signal=1e-12)
    g = np.linspace(-5, 5, 11)[:, None]
    np.testing.assert_allclose(ucb_weights([a, b], [g, g]), [0.7311, 0.2689], atol=1e-4)


def test_mixture_point_mass(rng):
    per_set = [(np.zeros((100, 1)), rng.normal(0, 1, 100)), (np.ones((100, 1)), rng.normal(5, 1, 100))]
    mix, ys, xs, sets = build_opt_mixture(per_set, [1.0, 0.0], 300, rng)
    assert np.all(sets == 0)
    assert set(ys) <= set(per_set[0][1])
    assert mix.components[0][0].bandwidth == Kde.fit(per_set[0][1]).bandwidth


def test_mixture_total_expectation(rng):
    per_set = [(np.zeros((500, 1)), rng.normal(0, 1, 500)), (np.ones((500, 1)), rng.normal(3, 2, 500))]
    w = np.array([0.3, 0.7])
    _, ys, _, _ = build_opt_mixture(per_set, w, 10_000, rng)
    want = w[0] * per_set[0][1].mean() + w[1] * per_set[1][1].mean()
    assert abs(ys.mean() - want) <= 3 * ys.std() / 100


def test_mixture_of_identical_components(rng):
    y = rng.normal(0, 1, 1000)
    per_set = [(np.zeros((1000, 1)), y)] * 3
    _, ys, _, _ = build_opt_mixture(per_set, [0.2, 0.3, 0.5], 10_000, rng)
    assert ys.mean() == pytest.approx(y.mean(), abs=3 * y.std() / 100)
    assert ys.std() == pytest.approx(y.std(), rel=0.05)


def test_mixture_weights_validated():
    from ceo.acquisition import OptMixture

    with pytest.raises(ValueError):
        OptMixture(np.array([0.5, 0.6]), ())


# joint entropy -----------------------------------------------------------------


def _two_graph_space():
    a = Dag.from_roles(CHAIN_ROLES, [("X", "Z"), ("Z", "Y")])
    b = Dag.from_roles(CHAIN_ROLES, [("Z", "X"), ("X", "Y")])
    return HypothesisSpace((a, b))


def test_joint_entropy_point_mass(rng):
    post = GraphPosterior.uniform(_two_graph_space()).point_mass(1)
    y = rng.standard_normal(400)
    k = Kde.fit(y)
    assert joint_entropy(post, y, k, rng.normal(size=(400, 2))) == kde_entropy(k)


def test_joint_entropy_independent_case(rng):
    post = GraphPosterior.uniform(_two_graph_space())
    y = rng.standard_normal(400)
    k = Kde.fit(y)
    assert joint_entropy(post, y, k, np.zeros((400, 2))) == pytest.approx(np.log(2) + kde_entropy(k), abs=1e-12)


def test_joint_entropy_subadditive(rng):
    post = GraphPosterior.uniform(_two_graph_space()).add_log_likelihood(np.array([0.0, -0.5]))
    mu = np.array([0.0, 1.0])
    g = rng.choice(2, size=2000, p=post.probs)
    y = rng.normal(mu[g], 1.0)
    ll = -0.5 * (y[:, None] - mu[None, :]) ** 2
    k = Kde.fit(y)
    assert joint_entropy(post, y, k, ll) <= posterior_entropy(post) + kde_entropy(k) + 0.05


# CES ----------------------------------------------------------------------------


def test_ces_branch_is_ystar_for_one_graph(state):
    r = CesRound(state, [0])
    assert r.branch == "ystar"
    assert posterior_entropy(state.post) == 0.0


def test_ces_score_matches_batched_scores(state):
    r = CesRound(state, [3])
    batch = r.score_set(0)
    one = ces_score(state.sets[0], state.candidates[0][4], state, round_=r)
    assert one.score == pytest.approx(batch.scores[4], abs=1e-12)


def test_cost_doubling_halves_scores(state):
    doubled = replace(state, cost=lambda s, x: 2.0 * len(s.targets))
    for si in range(2):
        a = CesRound(state, [5]).score_set(si).scores
        b = CesRound(doubled, [5]).score_set(si).scores
        np.testing.assert_allclose(b, a / 2, rtol=1e-12)
        assert np.argmax(a) == np.argmax(b)


def test_ces_matches_ystar_oracle_on_a_few_candidates(state):
    # single fantasies vary a lot, so both sides average many of them
    st_ = replace(state, settings=replace(SMALL, J=500, K=1000, L=200))
    r = CesRound(st_, [11])
    for si, ci in ((0, 3), (1, 20)):
        ces = r.score_set(si, np.array([ci])).scores[0]
        ref = ystar_entropy_score(st_, si, st_.candidates[si][ci], L=60, seed=ci)
        assert ces == pytest.approx(ref, abs=0.05)


def test_ces_saturated_state_scores_near_zero():
    grid = Grid.regular(Z_SET, 40)
    pm = GridFunction(grid, np.zeros(len(grid)))
    po = GridFunction(grid, np.zeros(len(grid)))
    x = np.repeat(grid.points, 5, axis=0)
    y = np.cos(x[:, 0]) + 0.01 * np.random.default_rng(0).standard_normal(len(x))
    sur = CausalSurrogate.create(Z_SET, pm, po, x, y)
    st_ = AcquisitionState((Z_SET,), (sur,), (grid.points,), (grid.points[::4],), GraphPosterior.uniform(_two_graph_space()).point_mass(0), None, "Y", SMALL)
    res = CesRound(st_, [1]).score_set(0)
    assert np.max(np.abs(res.scores)) <= 0.05


def test_ces_fantasy_count_sensitivity(state):
    lo = CesRound(replace(state, settings=replace(SMALL, L=5)), [2]).score_set(1).scores
    hi = CesRound(replace(state, settings=replace(SMALL, L=40)), [2]).score_set(1).scores
    assert np.mean(np.abs(lo - hi)) <= 0.05


def _snapshot(state):
    out = [state.post.log_weights.copy()]
    for sur in state.surrogates:
        out += [sur.gp.inputs.copy(), sur.gp.outputs.copy(), sur.gp.theta.copy(), sur.prior_mean.values.copy()]
    out += [np.array(c).copy() for c in state.candidates]
    return out


def test_scoring_never_mutates_state(state):
    before = _snapshot(state)
    r = CesRound(state, [9])
    r.score_set(0)
    r.score_set(1)
    cei_scores(replace(state, incumbent=0.0), 1)
    after = _snapshot(state)
    for a, b in zip(before, after):
        np.testing.assert_array_equal(a, b)


# expected improvement ---------------------------------------------------------------


def test_ei_limits():
    assert expected_improvement([0.5], [1e-30], 0.5)[0] == pytest.approx(0.0, abs=1e-12)
    assert expected_improvement([-0.5], [1e-30], 0.5)[0] == pytest.approx(1.0, abs=1e-9)
    assert expected_improvement([1.5], [1e-30], 0.5, direction="max")[0] == pytest.approx(1.0, abs=1e-9)


def test_ei_matches_monte_carlo(rng):
    for mu, var, inc in ((0.0, 1.0, 0.3), (1.0, 0.25, 0.5), (-2.0, 4.0, -1.0)):
        y = rng.normal(mu, np.sqrt(var), 100_000)
        imp = np.maximum(inc - y, 0.0)
        assert expected_improvement([mu], [var], inc)[0] == pytest.approx(imp.mean(), abs=3 * imp.std() / np.sqrt(1e5))


def test_cei_score_divides_by_cost(state):
    s = replace(state, incumbent=-1.0)
    x = s.candidates[1][3]
    one = cei_score(s.sets[1], x, s)
    assert one.score == pytest.approx(cei_scores(s, 1)[3], rel=1e-12)
    with pytest.raises(ValueError):
        cei_score(s.sets[1], x, state)


# structure MI -----------------------------------------------------------------------


@pytest.fixture(scope="module")
def separating_state():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(200)
    z = 2 * x + 0.05 * rng.standard_normal(200)
    y = z + 0.1 * rng.standard_normal(200)
    space = _two_graph_space()
    model = LikelihoodModel(space, Samples({"X": x, "Z": z, "Y": y}))
    x_set = InterventionSet(("X",), ((-5.0, 5.0),))
    grid = Grid.regular(x_set, 11)
    pm = GridFunction(grid, np.zeros(11))
    sur = CausalSurrogate.create(x_set, pm, pm)
    return AcquisitionState((x_set,), (sur,), (grid.points,), (grid.points,), GraphPosterior.uniform(space), model, "Y", replace(SMALL, L=20))


def test_structure_mi_separating_intervention(separating_state):
    s = separating_state
    score = structure_mi_score(s.sets[0], [2.0], s, seed=4)
    assert score.score == pytest.approx(np.log(2), abs=0.05)


def test_structure_mi_point_mass_is_zero(separating_state):
    s = replace(separating_state, post=separating_state.post.point_mass(0))
    assert structure_mi_score(s.sets[0], [2.0], s, seed=1).score == 0.0


@given(st.integers(0, 10_000), st.floats(-3, 3))
def test_structure_mi_non_negative(separating_state, seed, shift):
    s = separating_state
    post = s.post.add_log_likelihood(np.array([shift, 0.0]))
    s = replace(s, post=post)
    for x in (-4.0, -1.0, 0.0, 3.0):
        assert structure_mi_score(s.sets[0], [x], s, seed=seed).score >= -0.05


@given(st.floats(0.1, 10.0), st.integers(0, 100))
def test_uniform_cost_scaling_keeps_argmax(state, c, seed):
    scaled = replace(state, cost=lambda s, x: c * len(s.targets))
    a = CesRound(state, [seed]).score_set(1).scores
    b = CesRound(scaled, [seed]).score_set(1).scores
    np.testing.assert_allclose(b * c, a, rtol=1e-10)
    assert np.argmax(a) == np.argmax(b)
