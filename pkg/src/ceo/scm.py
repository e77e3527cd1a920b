"""Structural causal models: closed-form simulators and GP-fitted estimates.

Sampling is split in two steps. :meth:`Scm.draw_exogenous` draws one standard
normal per node and sample, and :meth:`Scm.propagate` maps those draws through
the mechanisms deterministically. Keeping the draws explicit gives common
random numbers across interventions, which the optimum oracle and the
do-moment estimates rely on.

Propagation works on arrays that broadcast to ``(m, n)``: ``m`` intervention
values times ``n`` exogenous draws. Nodes untouched by the intervention keep
shape ``(1, n)`` and are computed once.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.special import expit, ndtr

from . import gp as gplib
from .errors import InvalidData, InvalidGraph, InvalidIntervention
from .graphs import EMPTY_SET, Dag, InterventionSet, mutilate

# registered mechanism functions ------------------------------------------------
#
# Each takes the current node values (name -> array) plus keyword parameters and
# returns the noiseless mechanism output.


def _weighted(values, weights: Mapping[str, float] | None) -> np.ndarray | float:
    out = 0.0
    for name, w in (weights or {}).items():
        out = out + float(w) * values[name]
    return out


def f_linear(values, intercept=0.0, weights=None):
    return intercept + _weighted(values, weights)


def f_expit_linear(values, intercept=0.0, weights=None):
    return expit(intercept + _weighted(values, weights))


def f_tanh_linear(values, offset=0.0, scale=1.0, intercept=0.0, weights=None):
    return offset + scale * np.tanh(intercept + _weighted(values, weights))


def f_exp_neg(values, of, scale=1.0):
    return np.exp(-scale * values[of])


def f_cos_minus_exp(values, of, decay=20.0):
    z = values[of]
    return np.cos(z) - np.exp(-z / decay)


def f_product(values, factors, offset=0.0, weights=None):
    p = 1.0
    for name in factors:
        p = p * values[name]
    return offset + p + _weighted(values, weights)


def f_epi_outcome(values, t="T", l="L", r="R", offset=0.5, weights=None):
    """0.5 + cos(4t) + sin(2r - l) plus linear terms."""
    return (
        offset
        + np.cos(4.0 * values[t])
        + np.sin(-values[l] + 2.0 * values[r])
        + _weighted(values, weights)
    )


FUNCTIONS: dict[str, Callable] = {
    "linear": f_linear,
    "expit_linear": f_expit_linear,
    "tanh_linear": f_tanh_linear,
    "exp_neg": f_exp_neg,
    "cos_minus_exp": f_cos_minus_exp,
    "product": f_product,
    "epi_outcome": f_epi_outcome,
}


# mechanisms and root distributions ---------------------------------------------


@dataclass(frozen=True)
class ClosedForm:
    """Registered function of the parents plus N(0, noise_sd^2)."""

    parents: tuple[str, ...]
    function: str
    params: Mapping = field(default_factory=dict)
    noise_sd: float = 0.0
    kind = "closed_form"

    def __post_init__(self):
        if self.function not in FUNCTIONS:
            raise InvalidGraph(f"unknown mechanism function {self.function!r}; known: {sorted(FUNCTIONS)}")
        if self.noise_sd < 0:
            raise InvalidGraph("noise scale must be non-negative")

    def mean(self, values: Mapping[str, np.ndarray]) -> np.ndarray:
        return FUNCTIONS[self.function]({p: values[p] for p in self.parents}, **self.params)


@dataclass(frozen=True, eq=False)
class GpMechanism:
    """Mechanism estimated by GP regression of the node on its parents."""

    parents: tuple[str, ...]
    gp: gplib.GaussianProcess
    kind = "gp_fitted"

    @property
    def noise_sd(self) -> float:
        return float(np.sqrt(self.gp.noise_variance))

    def mean(self, values: Mapping[str, np.ndarray]) -> np.ndarray:
        cols = np.broadcast_arrays(*[np.asarray(values[p], dtype=float) for p in self.parents])
        shape = cols[0].shape
        x = np.stack([c.reshape(-1) for c in cols], axis=1)
        out = gplib.predict_mean(self.gp, x)
        return out.reshape(shape)

    def predictive(self, parent_values: np.ndarray):
        """GP predictive mean and variance (without noise) at parent rows."""
        return self.gp.predict(np.atleast_2d(parent_values))


@dataclass(frozen=True)
class UniformRoot:
    low: float
    high: float

    def transform(self, z: np.ndarray) -> np.ndarray:
        return self.low + (self.high - self.low) * ndtr(z)

    def logpdf(self, v: np.ndarray) -> np.ndarray:
        inside = (v >= self.low) & (v <= self.high)
        return np.where(inside, -np.log(self.high - self.low), -np.inf)


@dataclass(frozen=True)
class NormalRoot:
    mean: float
    sd: float

    def transform(self, z: np.ndarray) -> np.ndarray:
        return self.mean + self.sd * z

    def logpdf(self, v: np.ndarray) -> np.ndarray:
        r = (np.asarray(v) - self.mean) / self.sd
        return -0.5 * r**2 - np.log(self.sd) - 0.5 * np.log(2 * np.pi)


@dataclass(frozen=True, eq=False)
class EmpiricalRoot:
    """Bootstrap resampling of observed values.

    ``gaussian`` is the fitted univariate Gaussian used to score the node.
    """

    values: np.ndarray
    gaussian: NormalRoot

    @classmethod
    def fit(cls, values) -> "EmpiricalRoot":
        v = np.sort(np.asarray(values, dtype=float))
        sd = max(float(np.std(v)), 1e-6)
        return cls(v, NormalRoot(float(np.mean(v)), sd))

    def transform(self, z: np.ndarray) -> np.ndarray:
        idx = np.minimum((ndtr(z) * len(self.values)).astype(int), len(self.values) - 1)
        return self.values[idx]

    def logpdf(self, v: np.ndarray) -> np.ndarray:
        return self.gaussian.logpdf(v)


# samples and datasets ----------------------------------------------------------


class Samples:
    """Column-oriented batch of samples; row ``i`` is one sample."""

    def __init__(self, columns: Mapping[str, np.ndarray]):
        self.columns = {k: np.asarray(v, dtype=float).reshape(-1) for k, v in columns.items()}
        lens = {len(v) for v in self.columns.values()}
        if len(lens) > 1:
            raise InvalidData(f"columns have different lengths {sorted(lens)}")
        self._n = lens.pop() if lens else 0

    def __len__(self):
        return self._n

    def __getitem__(self, i) -> dict:
        if isinstance(i, str):
            return self.columns[i]
        return {k: float(v[i]) for k, v in self.columns.items()}

    def __iter__(self):
        for i in range(self._n):
            yield self[i]

    def column(self, v: str) -> np.ndarray:
        if v not in self.columns:
            raise InvalidData(f"no values for node {v}")
        return self.columns[v]

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        return np.stack([self.column(v) for v in names], axis=1) if names else np.empty((self._n, 0))


@dataclass(frozen=True)
class InterventionRecord:
    """One interventional experiment: set, values and the resulting sample."""

    iset: InterventionSet
    values: tuple[float, ...]
    sample: Mapping[str, float]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in np.ravel(self.values)))
        self.iset.check_values(np.array(self.values))

    def intervened(self) -> dict:
        return dict(zip(self.iset.targets, self.values))


@dataclass
class Dataset:
    observational: Samples
    interventional: list = field(default_factory=list)

    def with_record(self, rec: InterventionRecord) -> "Dataset":
        return Dataset(self.observational, [*self.interventional, rec])

    def to_csv(self, nodes: Sequence[str]) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([*nodes, "regime", "intervention"])
        for row in self.observational:
            w.writerow([repr(row[v]) for v in nodes] + ["observational", ""])
        for rec in self.interventional:
            vals = ";".join(f"{t}={v!r}" for t, v in rec.intervened().items())
            w.writerow([repr(rec.sample.get(v, float("nan"))) for v in nodes] + [rec.iset.name, vals])
        return buf.getvalue()


# the model ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Scm:
    """A DAG with one mechanism per non-root node and a distribution per root."""

    graph: Dag
    mechanisms: Mapping[str, object]
    roots: Mapping[str, object]

    def __post_init__(self):
        for v in self.graph.nodes:
            pa = self.graph.parents(v)
            if pa:
                if v not in self.mechanisms or v in self.roots:
                    raise InvalidGraph(f"non-root node {v} needs exactly one mechanism")
                if tuple(self.mechanisms[v].parents) != pa:
                    raise InvalidGraph(
                        f"mechanism for {v} takes {self.mechanisms[v].parents}, graph parents are {pa}"
                    )
            elif v not in self.roots or v in self.mechanisms:
                raise InvalidGraph(f"root node {v} needs exactly one root distribution")

    @property
    def target(self) -> str:
        return self.graph.target

    def noise_sd(self, v: str) -> float:
        return float(self.mechanisms[v].noise_sd) if v in self.mechanisms else 0.0

    def draw_exogenous(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Standard normal draws, shape (n, |nodes|) in node declaration order."""
        if n < 1:
            raise ValueError("n must be >= 1")
        return rng.standard_normal((n, len(self.graph.nodes)))

    def propagate(
        self,
        exogenous: np.ndarray,
        iset: InterventionSet = EMPTY_SET,
        values=None,
        only: Optional[Iterable[str]] = None,
        paired: bool = False,
    ) -> dict:
        """Deterministically map exogenous draws to node values.

        ``values`` is either one row of intervention values or an (m, |set|)
        array; results broadcast to (m, n). With ``paired`` the i-th exogenous
        row goes with the i-th intervention row instead and results have
        shape (m, 1). ``only`` restricts computation to the given nodes and
        their ancestors in the mutilated graph.
        """
        g = mutilate(self.graph, iset)
        x = None
        if iset.targets:
            x = iset.check_values(values)
        exo = np.asarray(exogenous, dtype=float)
        needed = set(g.nodes)
        if only is not None:
            needed = set()
            for v in only:
                needed |= g.ancestors(v) | {v}
        out = {}
        col = {v: i for i, v in enumerate(self.graph.nodes)}
        for v in g.topological_order:
            if v not in needed:
                continue
            if v in iset.targets:
                out[v] = x[:, iset.targets.index(v)][:, None]
                continue
            z = exo[:, col[v]][:, None] if paired else exo[:, col[v]][None, :]
            if v in self.roots:
                out[v] = self.roots[v].transform(z)
            else:
                mech = self.mechanisms[v]
                out[v] = mech.mean(out) + mech.noise_sd * z
        return out

    def sample(self, n: int, rng: np.random.Generator, iset: InterventionSet = EMPTY_SET, values=None) -> Samples:
        """``n`` samples under do(iset = values), one intervention value row."""
        if iset.targets:
            v = iset.check_values(values)
            if len(v) != 1:
                raise InvalidIntervention("sample() takes a single row of intervention values")
        exo = self.draw_exogenous(n, rng)
        vals = self.propagate(exo, iset, values)
        return Samples({k: np.broadcast_to(a, (1, n))[0] for k, a in vals.items()})


def ancestor_sample(
    scm: Scm,
    intervention: Optional[tuple] = None,
    n: int = 1,
    rng: Optional[np.random.Generator] = None,
) -> Samples:
    """Draw ``n`` samples in topological order through the mutilated graph.

    ``intervention`` is ``None`` (observational) or ``(InterventionSet, values)``.
    """
    rng = np.random.default_rng() if rng is None else rng
    if intervention is None:
        return scm.sample(n, rng)
    iset, values = intervention
    return scm.sample(n, rng, iset, values)


# fitting -----------------------------------------------------------------------


class MechanismCache:
    """Fitted GP mechanisms keyed by (node, parents).

    Mechanism fits depend only on the observational data and the parent set, so
    graphs sharing a (node, parents) pair share one fit.
    """

    def __init__(self):
        self._store: dict = {}

    def get(self, key, build):
        if key not in self._store:
            self._store[key] = build()
        return self._store[key]

    def __len__(self):
        return len(self._store)


def _fit_seed(seed: int, node: str, parents: tuple) -> np.random.Generator:
    import zlib

    tag = zlib.crc32(("|".join([node, *parents])).encode())
    return np.random.default_rng([seed, tag])


def fit_mechanism(obs: Samples, node: str, parents: tuple, seed: int = 0, restarts: int = 5) -> GpMechanism:
    x = obs.matrix(parents)
    y = obs.column(node)
    gp = gplib.fit_hyperparameters(x, y, restarts=restarts, rng=_fit_seed(seed, node, parents))
    return GpMechanism(tuple(parents), gp)


def fit_scm(
    obs: Samples,
    g: Dag,
    seed: int = 0,
    restarts: int = 5,
    cache: Optional[MechanismCache] = None,
) -> Scm:
    """GP-fitted SCM for graph ``g`` from observational samples.

    Every non-root node gets a GP of the node on its parents; roots get a
    bootstrap distribution over their observed values.
    """
    if obs is None or len(obs) < 2:
        raise InvalidData("fitting an SCM needs at least two observational samples")
    for v in g.nodes:
        obs.column(v)
    cache = MechanismCache() if cache is None else cache
    mechanisms, roots = {}, {}
    for v in g.nodes:
        pa = g.parents(v)
        if pa:
            mechanisms[v] = cache.get(
                ("gp", v, pa, seed, restarts), lambda v=v, pa=pa: fit_mechanism(obs, v, pa, seed, restarts)
            )
        else:
            roots[v] = cache.get(("root", v), lambda v=v: EmpiricalRoot.fit(obs.column(v)))
    return Scm(g, mechanisms, roots)


def make_benchmark(name: str):
    """Ground-truth SCM, hypotheses, exploration sets, domains and optimum record.

    Returns a :class:`ceo.benchmarks.Benchmark`, which also unpacks as that
    five-tuple.
    """
    from .benchmarks import make_benchmark as _make

    return _make(name)
