from dataclasses import replace

import numpy as np
import pytest
from conftest import LINEAR_A, LINEAR_B, linear_chain_scm
from hypothesis import given
from hypothesis import strategies as st

from ceo.acquisition import AcquisitionSettings
from ceo.benchmarks import Benchmark, make_benchmark
from ceo.engine import (
    EffectOracle,
    GapResult,
    RunConfig,
    build_context,
    gap_metric,
    gap_value,
    intervention_cost,
    run_cbo,
    run_cd_cbo,
    run_ceo,
    run_method,
    true_optimum_oracle,
)
from ceo.errors import InvalidIntervention
from ceo.graphs import EMPTY_SET, HypothesisSpace, InterventionSet
from ceo.scm import ClosedForm, Scm, UniformRoot

FAST = RunConfig(
    benchmark="synthetic",
    budget=6.0,
    n_observational=60,
    mc_samples=100,
    prior_grid=(30, 10),
    fit_restarts=2,
    oracle_mc=500,
    acquisition=AcquisitionSettings(J=40, K=80, L=3, candidates_per_dim=12),
)


def strip(trace):
    """Trace records without wall-clock times."""
    return [replace(r, wall_time=0.0) for r in trace.records]


# cost and GAP ---------------------------------------------------------------------


def test_intervention_cost_examples():
    z = InterventionSet(("Z",), ((-5.0, 5.0),))
    xz = InterventionSet(("X", "Z"), ((-5.0, 5.0), (-5.0, 5.0)))
    assert intervention_cost(z, [1.0]) == 1
    assert intervention_cost(xz, [0.0, 1.0]) == 2
    assert intervention_cost(xz, [0.0, 1.0], table={"X+Z": 0.5}) == 0.5
    with pytest.raises(InvalidIntervention):
        intervention_cost(EMPTY_SET)


def test_gap_examples():
    assert gap_value(-2.0, -2.0, 0.0) == 1.0
    assert gap_value(0.0, -2.0, 0.0) == 0.0
    assert gap_value(-1.0, -2.0, 0.0) == 0.5
    assert gap_value(3.0, -2.0, 0.0) == 0.0
    assert gap_value(-2.0, -2.0, -2.0) == 1.0
    assert gap_value(-1.0, -2.0, -2.0) == 0.0
    assert gap_value(4.0, 4.0, 1.0, direction="max") == 1.0


def test_gap_result_stderr():
    r = GapResult.from_gaps([0.2, 0.5, 0.8])
    assert r.mean == pytest.approx(0.5)
    assert r.stderr == pytest.approx(0.3 / np.sqrt(3))
    with pytest.raises(ValueError):
        GapResult.from_gaps([0.5, 1.2])


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(cd_threshold=1.0)
    with pytest.raises(ValueError):
        RunConfig(method="bogus")
    with pytest.raises(ValueError):
        RunConfig(budget=0.0)


# runs ------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def ceo_trace():
    return run_ceo(FAST)


def test_zero_iterations_keeps_initial_state():
    tr = run_ceo(replace(FAST, iterations=0))
    assert tr.error is None and tr.records == []
    assert len(tr.initial) == 4 and np.isfinite(tr.init_best_oracle)
    assert tr.best_oracle == tr.init_best_oracle
    assert gap_metric(tr, make_benchmark("synthetic").optimum.y_star).mean == 0.0


def test_trace_accounting(ceo_trace):
    tr = ceo_trace
    assert tr.error is None and tr.records
    cum = np.array([r.cumulative_cost for r in tr.records])
    assert np.all(np.diff(cum) > 0)
    assert cum[-1] == pytest.approx(sum(intervention_cost(make_benchmark("synthetic").set_by_name(r.set_name)) for r in tr.records))
    assert cum[-1] <= FAST.budget
    assert all(len(r.probs) == 7 for r in tr.records)
    assert [r.iteration for r in tr.records] == list(range(len(tr.records)))


def test_best_so_far_non_increasing(ceo_trace):
    obs = [ceo_trace.init_best_observed] + [r.best_observed for r in ceo_trace.records]
    orc = [ceo_trace.init_best_oracle] + [r.best_oracle for r in ceo_trace.records]
    assert np.all(np.diff(obs) <= 0) and np.all(np.diff(orc) <= 0)


def test_determinism(ceo_trace):
    again = run_ceo(FAST)
    assert strip(again) == strip(ceo_trace)
    assert again.initial_probs == ceo_trace.initial_probs


def test_cbo_point_mass_never_changes():
    tr = run_cbo(replace(FAST, method="cbo_wrong", wrong_index=6))
    assert tr.graph_index == 6
    for r in tr.records:
        assert r.probs[6] == 1.0 and sum(r.probs) == 1.0
        assert r.branch == "cei"


def test_cd_cbo_switch_at_init_is_cbo():
    cd = run_cd_cbo(replace(FAST, cd_threshold=0.05))
    assert cd.stage_switch == 0
    g = cd.graph_index
    bench = make_benchmark("synthetic")
    method = "cbo_true" if g == bench.true_index else "cbo_wrong"
    cbo = run_method(replace(FAST, method=method, wrong_index=None if g == bench.true_index else g))
    assert strip(cd) == strip(cbo)


def test_cd_cbo_keeps_stage_one_data():
    cfg = replace(FAST, cd_threshold=0.999, cd_stage1_budget=3.0)
    tr = run_cd_cbo(cfg)
    assert tr.error is None
    switch = tr.stage_switch
    assert switch is not None and switch >= 1
    stage1 = tr.records[:switch]
    assert all(r.branch == "structure" for r in stage1)
    assert all(r.branch == "cei" for r in tr.records[switch:])
    # every stage-1 intervention is charged
    assert tr.records[switch - 1].cumulative_cost == pytest.approx(sum(r.cost for r in stage1))
    assert len(tr.initial) + switch == len(tr.initial) + len(stage1)


def test_wrong_index_must_name_a_wrong_graph():
    with pytest.raises(ValueError, match="not a wrong graph"):
        run_method(replace(FAST, method="cbo_wrong", wrong_index=0))


def test_module_error_aborts_only_that_replicate(monkeypatch):
    import ceo.acquisition as acq
    from ceo.errors import ScoreFailure

    real = acq.cei_scores
    calls = {"n": 0}

    def flaky(state, j):
        calls["n"] += 1
        if calls["n"] == 3:
            raise ScoreFailure("boom")
        return real(state, j)

    monkeypatch.setattr(acq, "cei_scores", flaky)
    bad = run_method(replace(FAST, method="cbo_true"))
    good = run_method(replace(FAST, method="cbo_true", replicate=1))
    assert bad.error is not None and "boom" in bad.error
    assert good.error is None and good.records


# the optimum oracle ---------------------------------------------------------------------


def _bench_from(scm, sets, space=None):
    space = space or HypothesisSpace((scm.graph,))
    return Benchmark("test", scm, space, tuple(sets), 0, None)


def test_oracle_linear_chain_closed_form():
    scm = linear_chain_scm()
    z = InterventionSet(("Z",), ((-2.0, 3.0),))
    rec = true_optimum_oracle(_bench_from(scm, [z]), grid_per_dim=501, mc_samples=4000)
    assert rec.targets == ("Z",)
    assert rec.x_star == (-2.0,)
    want = LINEAR_A * -2.0 + LINEAR_B
    assert abs(rec.y_star - want) <= 3 * max(rec.stderr, 1e-12)


def test_oracle_deterministic_scm():
    from ceo.graphs import chain_graph

    scm = Scm(
        chain_graph(),
        {
            "Z": ClosedForm(("X",), "linear", {"weights": {"X": 1.0}}, 0.0),
            "Y": ClosedForm(("Z",), "cos_minus_exp", {"of": "Z", "decay": 20.0}, 0.0),
        },
        {"X": UniformRoot(-1.0, 1.0)},
    )
    z = InterventionSet(("Z",), ((-5.0, 5.0),))
    rec = true_optimum_oracle(_bench_from(scm, [z]), grid_per_dim=500, mc_samples=100)
    grid = np.linspace(-5, 5, 500)
    f = np.cos(grid) - np.exp(-grid / 20)
    assert rec.y_star == pytest.approx(f.min(), abs=1e-12)
    assert rec.x_star[0] == pytest.approx(grid[np.argmin(f)])
    assert rec.stderr == 0.0


def test_effect_oracle_antithetic_is_unbiased():
    scm = linear_chain_scm()
    z = InterventionSet(("Z",), ((-5.0, 5.0),))
    m, se = EffectOracle(scm, 2000, seed=3)(z, [[1.0], [2.0]])
    np.testing.assert_allclose(m, LINEAR_A * np.array([1.0, 2.0]) + LINEAR_B, atol=1e-12)


# properties -------------------------------------------------------------------------------


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-10, 10))
def test_gap_in_unit_interval(best, star, init):
    for d in ("min", "max"):
        assert 0.0 <= gap_value(best, star, init, d) <= 1.0


@given(st.lists(st.sampled_from(["X", "Z", "X+Z"]), min_size=1, max_size=10))
def test_cumulative_cost_is_sum_of_costs(names):
    sets = {
        "X": InterventionSet(("X",), ((-1.0, 1.0),)),
        "Z": InterventionSet(("Z",), ((-1.0, 1.0),)),
        "X+Z": InterventionSet(("X", "Z"), ((-1.0, 1.0), (-1.0, 1.0))),
    }
    total = sum(intervention_cost(sets[n]) for n in names)
    assert total == sum(len(sets[n].targets) for n in names)


# end-to-end baselines (minutes each) ---------------------------------------------------


def _final_distance(bench_name, budget, **kw):
    bench = make_benchmark(bench_name)
    base = RunConfig(benchmark=bench_name, budget=budget, **kw)
    ctx = build_context(base, bench)
    best = np.array([run_method(replace(base, replicate=r), ctx).best_oracle for r in range(12)])
    assert bench.direction == "min"
    return best - bench.optimum.y_star


@pytest.mark.slow
def test_cbo_on_biased_wrong_graph_plateaus():
    # graph 2 (X -> Y <- Z) averages Y over the marginal of X under do(Z), which is biased
    d = _final_distance("synthetic", 40.0, method="cbo_wrong", wrong_index=2)
    assert np.sum(d > 0.05) >= 8


@pytest.mark.slow
def test_cbo_true_on_health_reaches_band():
    d = _final_distance("health", 30.0, method="cbo_true")
    assert np.all(d >= -1e-9)
    # the median replicate ends within 0.05 of the optimum
    assert np.median(d) <= 0.05
