"""Posterior over an enumerated graph hypothesis space.

Each graph is scored by GP marginal likelihoods of its mechanisms on the
observational data and by GP predictive likelihoods of interventional records.
Mechanism hyperparameters are fitted once on the observational data and then
frozen, so updates are additive in log space and order-invariant.

Root nodes are scored with a univariate Gaussian fitted to their observational
values. Root sets differ across some hypotheses, so this term matters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from . import gp as gplib
from .errors import FitFailed, InvalidData
from .graphs import Dag, HypothesisSpace, InterventionSet
from .scm import EmpiricalRoot, GpMechanism, InterventionRecord, MechanismCache, Samples, Scm, fit_scm

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class GraphPosterior:
    """Normalized weights over a hypothesis space, stored as log weights."""

    space: HypothesisSpace
    log_prior: np.ndarray
    log_weights: np.ndarray

    @classmethod
    def uniform(cls, space: HypothesisSpace) -> "GraphPosterior":
        lp = np.full(len(space), -np.log(len(space)))
        return cls(space, lp, lp.copy())

    def __post_init__(self):
        if len(self.log_weights) != len(self.space) or len(self.log_prior) != len(self.space):
            raise ValueError("one log weight per graph is required")

    @property
    def probs(self) -> np.ndarray:
        return normalize(self.log_weights)

    def add_log_likelihood(self, ll: np.ndarray) -> "GraphPosterior":
        ll = np.asarray(ll, dtype=float)
        if ll.shape != (len(self.space),):
            raise ValueError(f"expected {len(self.space)} log-likelihoods, got {ll.shape}")
        lw = self.log_weights + ll
        # keep the stored weights normalized so magnitudes stay bounded
        return GraphPosterior(self.space, self.log_prior, lw - logsumexp(lw))

    def point_mass(self, index: int) -> "GraphPosterior":
        lw = np.full(len(self.space), -np.inf)
        lw[index] = 0.0
        return GraphPosterior(self.space, lw.copy(), lw)

    @property
    def map_index(self) -> int:
        return int(np.argmax(self.log_weights))


def normalize(log_weights: np.ndarray) -> np.ndarray:
    """Probabilities from log weights along the last axis (max-subtracted)."""
    lw = np.asarray(log_weights, dtype=float)
    m = np.max(lw, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    w = np.exp(lw - m)
    return w / w.sum(axis=-1, keepdims=True)


def entropy_of_log_weights(log_weights: np.ndarray) -> np.ndarray:
    """Shannon entropy in nats of normalized weights, along the last axis."""
    p = normalize(log_weights)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return np.maximum(-terms.sum(axis=-1), 0.0)


def posterior_entropy(post: GraphPosterior) -> float:
    return float(entropy_of_log_weights(post.log_weights))


def log_normal(v, mean, var):
    return -0.5 * (_LOG_2PI + np.log(var) + (v - mean) ** 2 / var)


class LikelihoodModel:
    """Fitted mechanisms for every graph of a space, plus scoring helpers.

    Terms are computed per distinct (node, parents) pair and summed per graph,
    so graphs sharing a mechanism share the work.
    """

    def __init__(
        self,
        space: HypothesisSpace | Sequence[Dag],
        obs: Samples,
        seed: int = 0,
        restarts: int = 5,
        cache: Optional[MechanismCache] = None,
    ):
        if obs is None or len(obs) == 0:
            raise InvalidData("the graph posterior needs observational data")
        self.space = space
        self.graphs = tuple(space)
        self.nodes = self.graphs[0].nodes
        self.obs = obs
        self.cache = MechanismCache() if cache is None else cache
        self.scms: list[Scm] = []
        for i, g in enumerate(self.graphs):
            try:
                self.scms.append(fit_scm(obs, g, seed=seed, restarts=restarts, cache=self.cache))
            except FitFailed as exc:
                raise FitFailed(str(exc), graph_index=i) from exc
        # distinct (node, parents) terms and the graphs using each
        self.terms: dict = {}
        for i, g in enumerate(self.graphs):
            for v in g.nodes:
                key = (v, g.parents(v))
                self.terms.setdefault(key, []).append(i)
        self._term_lml: dict = {}

    def mechanism(self, key):
        v, pa = key
        scm = self.scms[self.terms[key][0]]
        return scm.mechanisms[v] if pa else scm.roots[v]

    def _term_obs(self, key) -> float:
        if key not in self._term_lml:
            v, pa = key
            m = self.mechanism(key)
            if pa:
                val = gplib.log_marginal_likelihood(m.gp)
            else:
                val = float(np.sum(m.logpdf(self.obs.column(v))))
            self._term_lml[key] = val
        return self._term_lml[key]

    def observational(self) -> np.ndarray:
        """Observational log-likelihood of every graph."""
        out = np.zeros(len(self.graphs))
        for key, graphs in self.terms.items():
            out[graphs] += self._term_obs(key)
        return out

    def _columns(self, iset, x, values, skip=()):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = len(x)
        clamp = {t: x[:, j] for j, t in enumerate(iset.targets)}
        cols = {}
        for v in self.nodes:
            if v in clamp:
                cols[v] = clamp[v]
            elif v in values:
                cols[v] = np.broadcast_to(np.asarray(values[v], dtype=float).reshape(-1), (n,))
            elif v not in skip:
                raise InvalidData(f"record is missing a value for node {v}")
        return n, clamp, cols

    def batch(
        self,
        iset: InterventionSet,
        x: np.ndarray,
        values: Mapping[str, np.ndarray],
        exclude: Sequence[str] = (),
    ) -> np.ndarray:
        """Interventional log-likelihoods, shape (n, |space|).

        ``x`` holds n rows of intervention values; ``values`` maps every
        non-intervened node to n observed values. Nodes in ``exclude`` are
        left out of the sum and need no values.
        """
        n, clamp, cols = self._columns(iset, x, values, skip=exclude)
        out = np.zeros((n, len(self.graphs)))
        for key, graphs in self.terms.items():
            v, pa = key
            if v in clamp or v in exclude:
                continue
            m = self.mechanism(key)
            if pa:
                mean, var = m.gp.predict(np.stack([cols[p] for p in pa], axis=1))
                term = log_normal(cols[v], mean, var + m.gp.noise_variance)
            else:
                term = m.logpdf(cols[v])
            out[:, graphs] += term[:, None]
        return out

    def predictive(self, node: str, iset: InterventionSet, x: np.ndarray, values: Mapping[str, np.ndarray]):
        """Per-graph predictive mean and variance (noise included) of a non-root node.

        Both have shape (n, |space|). Graphs where ``node`` is a root use its
        fitted Gaussian.
        """
        n, clamp, cols = self._columns(iset, x, values, skip=(node,))
        mean = np.zeros((n, len(self.graphs)))
        var = np.zeros((n, len(self.graphs)))
        for key, graphs in self.terms.items():
            v, pa = key
            if v != node:
                continue
            m = self.mechanism(key)
            if pa:
                mu, s2 = m.gp.predict(np.stack([cols[p] for p in pa], axis=1))
                s2 = s2 + m.gp.noise_variance
            else:
                mu = np.full(n, m.gaussian.mean)
                s2 = np.full(n, m.gaussian.sd**2)
            mean[:, graphs] = mu[:, None]
            var[:, graphs] = s2[:, None]
        return mean, var

    def record(self, rec: InterventionRecord) -> np.ndarray:
        vals = {k: np.array([v]) for k, v in rec.sample.items()}
        return self.batch(rec.iset, np.array([rec.values]), vals)[0]

    def records(self, recs: Iterable[InterventionRecord]) -> np.ndarray:
        total = np.zeros(len(self.graphs))
        for r in recs:
            total += self.record(r)
        return total

    def initial_posterior(self, use_observational: bool = True) -> GraphPosterior:
        post = GraphPosterior.uniform(self.space)
        if use_observational:
            post = post.add_log_likelihood(self.observational())
        return post


def observational_log_likelihood(g: Dag, d_obs: Samples, seed: int = 0, cache: Optional[MechanismCache] = None) -> float:
    """GP marginal likelihoods of the non-root nodes plus Gaussian root terms."""
    model = LikelihoodModel((g,), d_obs, seed=seed, cache=cache)
    return float(model.observational()[0])


def interventional_log_likelihood(
    g: Dag,
    record: InterventionRecord,
    d_obs: Samples,
    seed: int = 0,
    cache: Optional[MechanismCache] = None,
) -> float:
    """Sum over non-intervened nodes of log N(v; m, Sigma + noise), parents clamped where intervened."""
    model = LikelihoodModel((g,), d_obs, seed=seed, cache=cache)
    return float(model.record(record)[0])


def update(post: GraphPosterior, records: Sequence[InterventionRecord], model: LikelihoodModel) -> GraphPosterior:
    """Add the interventional log-likelihood of ``records`` and renormalize."""
    if not records:
        return post
    return post.add_log_likelihood(model.records(records))
