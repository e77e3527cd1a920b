"""Optimization loops, cost accounting, GAP metric and the optimum oracle.

Every replicate shares the fixed observational data of its benchmark and the
per-graph do-moment tables computed from it; replicates differ only in their
initial interventional data and their random streams.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import acquisition as acq
from .benchmarks import Benchmark, OptimumRecord, make_benchmark
from .errors import CeoError, InvalidIntervention
from .graphs import InterventionSet
from .posterior import GraphPosterior, LikelihoodModel, posterior_entropy
from .scm import InterventionRecord, MechanismCache, Samples, Scm
from .surrogate import CausalSurrogate, Grid, PriorTables, SurrogateSettings

log = logging.getLogger(__name__)

METHODS = ("ceo", "cbo_true", "cbo_wrong", "cd_cbo")


def intervention_cost(iset: InterventionSet, x=None, table: Optional[dict] = None) -> float:
    """Number of intervened variables, unless a per-set cost table overrides it."""
    if not iset.targets:
        raise InvalidIntervention("the observational regime has no intervention cost")
    if table and iset.name in table:
        return float(table[iset.name])
    return float(len(iset.targets))


@dataclass(frozen=True)
class RunConfig:
    benchmark: str = "synthetic"
    method: str = "ceo"
    wrong_index: Optional[int] = None
    budget: float = 40.0
    iterations: int = 10_000
    seed: int = 0
    replicate: int = 0
    n_initial: Optional[int] = None
    n_observational: Optional[int] = None
    posterior_uses_observational: bool = True
    cd_threshold: float = 0.9
    cd_stage1_budget: Optional[float] = None
    mc_samples: int = 500
    prior_grid: tuple = (100, 20)
    rebuild_tv: float = 0.01
    samples_per_round: int = 1
    fit_restarts: int = 5
    oracle_mc: int = 10_000
    cost_table: Optional[dict] = None
    record_acquisition: bool = False
    acquisition: acq.AcquisitionSettings = field(default_factory=acq.AcquisitionSettings)
    surrogate: SurrogateSettings = field(default_factory=SurrogateSettings)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if not 0 < self.cd_threshold < 1:
            raise ValueError("the CD-CBO threshold must lie in (0, 1)")
        if self.budget <= 0:
            raise ValueError("budget must be positive")


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    set_name: str
    x: tuple
    y: float
    cost: float
    cumulative_cost: float
    best_observed: float
    oracle_value: float
    best_oracle: float
    probs: tuple
    branch: str
    score: float
    wall_time: float


@dataclass(frozen=True)
class AcquisitionRow:
    iteration: int
    set_name: str
    x: tuple
    score: float
    branch: str
    h_before: float
    h_after: float


@dataclass
class RunTrace:
    config: RunConfig
    records: list = field(default_factory=list)
    initial: list = field(default_factory=list)
    initial_probs: tuple = ()
    init_best_observed: float = float("nan")
    init_best_oracle: float = float("nan")
    graph_index: Optional[int] = None
    stage_switch: Optional[int] = None
    acquisition: list = field(default_factory=list)
    error: Optional[str] = None

    @property
    def cumulative_cost(self) -> float:
        return self.records[-1].cumulative_cost if self.records else 0.0

    @property
    def best_oracle(self) -> float:
        return self.records[-1].best_oracle if self.records else self.init_best_oracle

    @property
    def best_observed(self) -> float:
        return self.records[-1].best_observed if self.records else self.init_best_observed


@dataclass(frozen=True)
class GapResult:
    gaps: tuple
    mean: float
    stderr: float

    @classmethod
    def from_gaps(cls, gaps: Sequence[float]) -> "GapResult":
        g = np.asarray(gaps, dtype=float)
        if np.any((g < 0) | (g > 1)):
            raise ValueError("every gap must lie in [0, 1]")
        se = float(np.std(g, ddof=1) / np.sqrt(len(g))) if len(g) > 1 else 0.0
        return cls(tuple(g.tolist()), float(g.mean()) if len(g) else float("nan"), se)

    @property
    def gap(self) -> float:
        return self.mean


def gap_value(y_best: float, y_star: float, y_init_best: float, direction: str = "min") -> float:
    """clip((y_init - y_best) / (y_init - y*), 0, 1), with a 0/1 rule for a zero denominator."""
    s = 1.0 if direction == "min" else -1.0
    num = s * (y_init_best - y_best)
    den = s * (y_init_best - y_star)
    if den <= 0:
        return 1.0 if s * y_best <= s * y_star else 0.0
    return float(np.clip(num / den, 0.0, 1.0))


def gap_metric(trace: RunTrace, y_star: float, y_init_best: Optional[float] = None, observed: bool = False, direction: str = "min") -> GapResult:
    if not np.isfinite(y_star):
        raise ValueError("y* must be finite")
    if observed:
        init = trace.init_best_observed if y_init_best is None else y_init_best
        best = trace.best_observed
    else:
        init = trace.init_best_oracle if y_init_best is None else y_init_best
        best = trace.best_oracle
    return GapResult.from_gaps([gap_value(best, y_star, init, direction)])


# oracle -----------------------------------------------------------------------


class EffectOracle:
    """E[Y | do(x)] of the true SCM from fixed antithetic exogenous draws."""

    def __init__(self, scm: Scm, mc_samples: int = 10_000, seed: int = 0):
        half = max(1, mc_samples // 2)
        z = scm.draw_exogenous(half, np.random.default_rng([seed, 99]))
        self.scm = scm
        self.exo = np.vstack([z, -z])

    def __call__(self, iset: InterventionSet, x, chunk: int = 20_000_000):
        """Means and standard errors at the rows of ``x``."""
        x = iset.check_values(x)
        n = len(self.exo)
        step = max(1, chunk // n)
        means, ses = [], []
        y = self.scm.target
        for a in range(0, len(x), step):
            v = self.scm.propagate(self.exo, iset, x[a : a + step], only=[y])[y]
            v = np.broadcast_to(v, (len(x[a : a + step]), n))
            means.append(v.mean(axis=1))
            # antithetic pairs are the independent units
            pair = 0.5 * (v[:, : n // 2] + v[:, n // 2 :])
            ses.append(pair.std(axis=1, ddof=1) / np.sqrt(n // 2) if n > 2 else np.zeros(len(v)))
        return np.concatenate(means), np.concatenate(ses)


def true_optimum_oracle(bench: Benchmark, grid_per_dim: int = 500, mc_samples: int = 10_000, seed: int = 0, grid_2d: Optional[int] = None) -> OptimumRecord:
    """Brute-force grid search of E[Y | do] over every exploration set."""
    oracle = EffectOracle(bench.scm, mc_samples, seed)
    s = 1.0 if bench.direction == "min" else -1.0
    best = None
    for iset in bench.exploration_sets:
        per = grid_per_dim if len(iset) == 1 or grid_2d is None else grid_2d
        grid = Grid.regular(iset, per)
        m, se = oracle(iset, grid.points)
        i = int(np.argmin(s * m))
        if best is None or s * m[i] < s * best[0]:
            best = (float(m[i]), iset, grid.points[i], float(se[i]))
    y, iset, x, se = best
    return OptimumRecord(y, iset.targets, tuple(float(v) for v in x), se, grid_per_dim, len(oracle.exo))


# experiment context -------------------------------------------------------------


@dataclass(eq=False)
class Context:
    """Benchmark, fixed observational data, fitted models and prior tables."""

    bench: Benchmark
    obs: Samples
    model: LikelihoodModel
    grids: tuple
    candidates: tuple
    tables: tuple
    oracle: EffectOracle
    obs_loglik: np.ndarray


_CONTEXTS: dict = {}


def context_key(cfg: RunConfig) -> tuple:
    a = cfg.acquisition
    return (cfg.benchmark, cfg.seed, cfg.n_observational, cfg.mc_samples, tuple(cfg.prior_grid), a.candidates_per_dim, cfg.fit_restarts, cfg.oracle_mc)


def build_context(cfg: RunConfig, bench: Optional[Benchmark] = None) -> Context:
    key = context_key(cfg)
    if key in _CONTEXTS:
        return _CONTEXTS[key]
    bench = bench or make_benchmark(cfg.benchmark)
    root = np.random.SeedSequence([cfg.seed, 0xD0])
    obs_ss, table_ss = root.spawn(2)
    n_obs = cfg.n_observational or bench.n_observational
    obs = bench.scm.sample(n_obs, np.random.default_rng(obs_ss))
    model = LikelihoodModel(bench.space, obs, seed=cfg.seed, restarts=cfg.fit_restarts, cache=MechanismCache())
    grids, cands, tables = [], [], []
    for j, (iset, ss) in enumerate(zip(bench.exploration_sets, table_ss.spawn(len(bench.exploration_sets)))):
        grid = Grid.default(iset, cfg.prior_grid, seed=cfg.seed + j)
        grids.append(grid)
        per = cfg.acquisition.candidates_per_dim
        cgrid = Grid.regular(iset, per) if len(iset) <= 2 else Grid.sobol(iset, per * 8, seed=cfg.seed + 100 + j)
        cands.append(cgrid.points)
        tables.append(PriorTables.compute(grid, model.graphs, model.scms, cfg.mc_samples, ss))
    ctx = Context(bench, obs, model, tuple(grids), tuple(cands), tuple(tables), EffectOracle(bench.scm, cfg.oracle_mc, cfg.seed), model.observational())
    _CONTEXTS[key] = ctx
    return ctx


def clear_contexts():
    _CONTEXTS.clear()


# the loop ---------------------------------------------------------------------


def _tv(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(p - q).sum())


class _Runner:
    def __init__(self, cfg: RunConfig, ctx: Context):
        self.cfg = cfg
        self.ctx = ctx
        b = ctx.bench
        self.bench = b
        self.sets = b.exploration_sets
        self.target = b.scm.target
        # Streams depend on the replicate only, so every method of a replicate
        # sees the same initial data and the same sequence of system noise.
        rep = np.random.SeedSequence([cfg.seed, 0x1D, cfg.replicate])
        init_ss, sys_ss, acq_ss, fit_ss = rep.spawn(4)
        self.init_rng = np.random.default_rng(init_ss)
        self.sys_rng = np.random.default_rng(sys_ss)
        self.acq_seed = int(acq_ss.generate_state(1)[0])
        self.fit_rng = np.random.default_rng(fit_ss)
        self.direction = b.direction
        self.sign = 1.0 if b.direction == "min" else -1.0
        acq_settings = cfg.acquisition
        if acq_settings.direction != b.direction:
            acq_settings = replace(acq_settings, direction=b.direction)
        self.acq_settings = acq_settings

    def cost(self, iset, x=None):
        return intervention_cost(iset, x, self.cfg.cost_table)

    def observe(self, iset: InterventionSet, x: np.ndarray, rng) -> list:
        smp = self.bench.scm.sample(self.cfg.samples_per_round, rng, iset, x)
        recs = []
        for row in smp:
            recs.append(InterventionRecord(iset, x, {k: v for k, v in row.items() if k not in iset.targets}))
        return recs

    def oracle_value(self, iset, x) -> float:
        return float(self.ctx.oracle(iset, np.atleast_2d(x))[0][0])

    def priors(self, probs):
        return [t.combine(probs) for t in self.ctx.tables]

    def run(self) -> RunTrace:
        cfg, ctx = self.cfg, self.ctx
        trace = RunTrace(cfg)
        model = ctx.model
        n_init = cfg.n_initial if cfg.n_initial is not None else self.bench.n_initial

        # initial interventional data, shared by every method of a replicate
        init_recs, xs, ys = [], [[] for _ in self.sets], [[] for _ in self.sets]
        init_oracle = []
        for j, iset in enumerate(self.sets):
            for _ in range(n_init):
                x = self.init_rng.uniform(iset.lower, iset.upper)
                for rec in self.observe(iset, x, self.init_rng):
                    init_recs.append(rec)
                    xs[j].append(rec.values)
                    ys[j].append(rec.sample[self.target])
                init_oracle.append(self.oracle_value(iset, x))
        trace.initial = init_recs
        all_y = [y for yy in ys for y in yy]
        trace.init_best_observed = float(self.sign * min(self.sign * np.array(all_y))) if all_y else float("nan")
        trace.init_best_oracle = float(self.sign * min(self.sign * np.array(init_oracle))) if init_oracle else float("nan")

        # graph posterior
        method = cfg.method
        if method in ("cbo_true", "cbo_wrong"):
            gi = self.bench.true_index if method == "cbo_true" else self._wrong_index()
            post = GraphPosterior.uniform(self.bench.space).point_mass(gi)
            trace.graph_index = gi
            learn = False
        else:
            post = GraphPosterior.uniform(self.bench.space)
            if cfg.posterior_uses_observational:
                post = post.add_log_likelihood(ctx.obs_loglik)
            if init_recs:
                post = post.add_log_likelihood(model.records(init_recs))
            learn = True
        trace.initial_probs = tuple(post.probs.tolist())

        stage = "ceo" if method == "ceo" else ("structure" if method == "cd_cbo" else "cbo")
        if method == "cd_cbo" and post.probs.max() > cfg.cd_threshold:
            # already confident: plain CBO on the MAP graph from the start
            stage = "cbo"
            post = post.point_mass(post.map_index)
            trace.graph_index = post.map_index
            trace.stage_switch = 0
            learn = False

        built_probs = post.probs
        surs = []
        for j, (iset, (pm, po)) in enumerate(zip(self.sets, self.priors(built_probs))):
            surs.append(CausalSurrogate.create(iset, pm, po, np.array(xs[j]).reshape(-1, len(iset)), np.array(ys[j]), cfg.surrogate, self.fit_rng))
        stage1_budget = cfg.budget if cfg.cd_stage1_budget is None else cfg.cd_stage1_budget

        cum = 0.0
        best_obs = trace.init_best_observed
        best_orc = trace.init_best_oracle
        h = 0
        while h < cfg.iterations and cum < cfg.budget - 1e-12:
            t0 = time.perf_counter()
            remaining = cfg.budget - cum
            incumbent = best_obs if np.isfinite(best_obs) else None
            state = acq.AcquisitionState(
                tuple(self.sets), tuple(surs), tuple(g.points for g in ctx.grids), ctx.candidates, post,
                model, self.target, self.acq_settings, self.cost, incumbent,
            )
            choice = self._choose(state, stage, h, remaining, trace.acquisition if cfg.record_acquisition else None)
            if choice is None:
                break
            j, ci, score, branch = choice
            iset = self.sets[j]
            x = ctx.candidates[j][ci]
            recs = self.observe(iset, x, self.sys_rng)
            c = self.cost(iset, x)
            cum += c
            yv = [r.sample[self.target] for r in recs]
            best_obs = float(self.sign * min(self.sign * best_obs if np.isfinite(best_obs) else np.inf, min(self.sign * np.array(yv))))
            ov = self.oracle_value(iset, x)
            best_orc = float(self.sign * min(self.sign * best_orc if np.isfinite(best_orc) else np.inf, self.sign * ov))
            if learn:
                post = post.add_log_likelihood(model.records(recs))
            surs[j] = surs[j].with_data(np.tile(x, (len(yv), 1)), yv, refit=True, rng=self.fit_rng)
            if learn and _tv(post.probs, built_probs) > cfg.rebuild_tv:
                built_probs = post.probs
                surs = self._reprior(surs, built_probs)
            if stage == "structure" and (post.probs.max() > cfg.cd_threshold or cum >= stage1_budget - 1e-12):
                stage = "cbo"
                post = post.point_mass(post.map_index)
                trace.graph_index = post.map_index
                trace.stage_switch = h + 1
                built_probs = post.probs
                surs = self._reprior(surs, built_probs)
                learn = False
            trace.records.append(
                TraceRecord(h, iset.name, tuple(float(v) for v in x), float(yv[0]), c, cum, best_obs, ov, best_orc,
                            tuple(post.probs.tolist()), branch, float(score), time.perf_counter() - t0)
            )
            h += 1
        return trace

    def _wrong_index(self) -> int:
        wrong = self.bench.wrong_indices
        if self.cfg.wrong_index is None:
            return wrong[0]
        if self.cfg.wrong_index not in wrong:
            raise ValueError(f"graph {self.cfg.wrong_index} is not a wrong graph; choose from {wrong}")
        return self.cfg.wrong_index

    def _reprior(self, surs, probs):
        return [s.with_prior(pm, po, rng=self.fit_rng) for s, (pm, po) in zip(surs, self.priors(probs))]

    def _choose(self, state: acq.AcquisitionState, stage: str, h: int, remaining: float, sink: Optional[list] = None):
        """Best (set index, candidate index, score, branch); ties by cost, set name, index.

        With a ``sink`` every scored candidate is appended to it as an
        :class:`AcquisitionRow`.
        """
        best = None
        rnd = acq.CesRound(state, [self.acq_seed, h]) if stage == "ceo" else None
        for j, iset in enumerate(self.sets):
            cands = state.candidates[j]
            costs = np.array([self.cost(iset, x) for x in cands])
            ok = np.flatnonzero(costs <= remaining + 1e-12)
            if len(ok) == 0:
                continue
            h_before, h_after = float("nan"), np.full(len(ok), np.nan)
            if stage == "ceo":
                res = rnd.score_set(j, ok)
                scores, branch, h_before, h_after = res.scores, res.branch, res.h_before, res.h_after
            elif stage == "structure":
                res = acq.structure_mi_scores(state, j, [self.acq_seed, h], ok)
                scores, branch, h_before, h_after = res.scores, "structure", res.h_before, res.h_after
            else:
                scores, branch = acq.cei_scores(state, j)[ok], "cei"
            if sink is not None:
                for k, ci in enumerate(ok):
                    sink.append(AcquisitionRow(h, iset.name, tuple(float(v) for v in cands[ci]), float(scores[k]), branch, float(h_before), float(h_after[k])))
            for k, ci in enumerate(ok):
                key = (-scores[k], costs[ci], iset.name, int(ci))
                if best is None or key < best[0]:
                    best = (key, j, int(ci), float(scores[k]), branch)
        if best is None:
            return None
        return best[1:]


def run_method(cfg: RunConfig, ctx: Optional[Context] = None) -> RunTrace:
    ctx = ctx or build_context(cfg)
    try:
        return _Runner(cfg, ctx).run()
    except CeoError as exc:
        log.error("replicate %d of %s aborted: %s", cfg.replicate, cfg.method, exc)
        trace = RunTrace(cfg)
        trace.error = f"{type(exc).__name__}: {exc}"
        return trace


def run_ceo(cfg: RunConfig, ctx: Optional[Context] = None) -> RunTrace:
    return run_method(replace(cfg, method="ceo"), ctx)


def run_cbo(cfg: RunConfig, ctx: Optional[Context] = None) -> RunTrace:
    if cfg.method not in ("cbo_true", "cbo_wrong"):
        cfg = replace(cfg, method="cbo_true")
    return run_method(cfg, ctx)


def run_cd_cbo(cfg: RunConfig, ctx: Optional[Context] = None) -> RunTrace:
    return run_method(replace(cfg, method="cd_cbo"), ctx)
