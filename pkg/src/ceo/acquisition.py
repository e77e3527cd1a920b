"""Acquisition functions: causal entropy search, causal EI and structure MI.

Causal entropy search scores a candidate intervention by the expected drop in
the entropy of the optimum value y* (or of y* jointly with the graph) after
one fantasy observation, divided by the intervention cost.

One scoring round works on an immutable :class:`AcquisitionState`:

* joint Thompson draws of every surrogate over its grid plus its candidates
  give samples of each per-set optimum y*_I;
* a softmax on the surrogate posterior means gives mixture weights, and K
  mixture draws (always using the same uniforms) give samples of y*;
* a fantasy at candidate c updates the draws of its own set exactly with a
  rank-one Matheron step, so no resampling is needed per fantasy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import norm

from . import gp as gplib
from .errors import ScoreFailure
from .graphs import InterventionSet
from .posterior import GraphPosterior, LikelihoodModel, entropy_of_log_weights, log_normal, posterior_entropy
from .surrogate import CausalSurrogate

# kernel density estimates and entropies -------------------------------------------

BANDWIDTH_FLOOR = 1e-3


def silverman_bandwidth(samples, floor: float = BANDWIDTH_FLOOR) -> float:
    """Robust Silverman rule 0.9 * min(sd, IQR/1.34) * n^(-1/5), floored."""
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n < 2:
        return floor
    sd = np.std(x, ddof=1)
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return max(0.9 * spread * n ** (-0.2), floor)


@dataclass(frozen=True, eq=False)
class Kde:
    """Gaussian kernel density estimate."""

    samples: np.ndarray
    bandwidth: float

    @classmethod
    def fit(cls, samples, floor: float = BANDWIDTH_FLOOR) -> "Kde":
        s = np.asarray(samples, dtype=float).reshape(-1)
        if s.size == 0:
            raise ValueError("a KDE needs at least one sample")
        return cls(s, silverman_bandwidth(s, floor))

    def pdf(self, x, chunk: int = 2048) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        out = np.empty(x.size)
        h = self.bandwidth
        for s in range(0, x.size, chunk):
            z = (x[s : s + chunk, None] - self.samples[None, :]) / h
            out[s : s + chunk] = np.exp(-0.5 * z**2).sum(axis=1)
        return out / (self.samples.size * h * np.sqrt(2 * np.pi))

    def default_range(self, n_bandwidths: float = 5.0) -> tuple[float, float]:
        return (
            float(self.samples.min() - n_bandwidths * self.bandwidth),
            float(self.samples.max() + n_bandwidths * self.bandwidth),
        )


def kde_entropy(kde: Kde, lo: Optional[float] = None, hi: Optional[float] = None, resolution: int = 512) -> float:
    """-integral of p log p by the composite trapezoid rule.

    The default range is the sample range widened by five bandwidths.
    """
    if resolution < 50:
        raise ValueError("resolution must be at least 50")
    dlo, dhi = kde.default_range()
    lo = dlo if lo is None else lo
    hi = dhi if hi is None else hi
    t = np.linspace(lo, hi, resolution)
    p = kde.pdf(t)
    return float(-trapezoid(p * np.log(np.maximum(p, 1e-300)), t))


def _silverman_rows(x: np.ndarray, floor: float = BANDWIDTH_FLOOR) -> np.ndarray:
    n = x.shape[1]
    if n < 2:
        return np.full(len(x), floor)
    sd = np.std(x, axis=1, ddof=1)
    q75, q25 = np.percentile(x, [75, 25], axis=1)
    iqr = (q75 - q25) / 1.34
    spread = np.where(q75 > q25, np.minimum(sd, iqr), sd)
    return np.maximum(0.9 * spread * n ** (-0.2), floor)


def _binned_rows(x: np.ndarray, h: np.ndarray, n_bins: int) -> np.ndarray:
    """Entropies of rows that share one bin count; smoothing is done by FFT."""
    m, n = x.shape
    lo = x.min(axis=1) - 5 * h
    hi = x.max(axis=1) + 5 * h
    delta = (hi - lo) / (n_bins - 1)
    pos = (x - lo[:, None]) / delta[:, None]
    i0 = np.clip(np.floor(pos).astype(np.int64), 0, n_bins - 2)
    frac = pos - i0
    flat = i0 + (np.arange(m) * n_bins)[:, None]
    size = m * n_bins
    counts = np.bincount(flat.ravel(), (1 - frac).ravel(), size) + np.bincount((flat + 1).ravel(), frac.ravel(), size)
    counts = counts.reshape(m, n_bins)
    # zero padding to twice the length keeps the circular convolution linear
    f = np.fft.rfftfreq(2 * n_bins)
    sigma = (h / delta)[:, None]
    dens = np.fft.irfft(np.fft.rfft(counts, 2 * n_bins) * np.exp(-2 * (np.pi * sigma * f) ** 2), 2 * n_bins)[:, :n_bins]
    dens = np.maximum(dens, 0.0) / (n * delta[:, None])
    return -trapezoid(dens * np.log(np.maximum(dens, 1e-300)), dx=delta[:, None], axis=1)


def entropies(samples: np.ndarray, max_points: int = 8192, chunk: int = 4_000_000) -> np.ndarray:
    """Fast KDE entropies along the last axis of a stacked sample array.

    Each row is linearly binned on a grid whose spacing is at most an eighth
    of its Silverman bandwidth (bin counts are powers of two between 512 and
    ``max_points``), smoothed with the Gaussian kernel and integrated with the
    trapezoid rule. A row's result does not depend on the other rows.
    """
    s = np.asarray(samples, dtype=float)
    flat = s.reshape(-1, s.shape[-1])
    h = _silverman_rows(flat)
    ratio = (np.ptp(flat, axis=1) + 10 * h) / h
    n_bins = np.clip(2 ** np.ceil(np.log2(8 * ratio + 1)), 512, max_points).astype(int)
    out = np.empty(len(flat))
    for nb in np.unique(n_bins):
        rows = np.flatnonzero(n_bins == nb)
        step = max(1, chunk // (2 * nb))
        for a in range(0, len(rows), step):
            r = rows[a : a + step]
            out[r] = _binned_rows(flat[r], h[r], int(nb))
    return out.reshape(s.shape[:-1])


def binned_entropy(samples, bandwidth: Optional[float] = None, max_points: int = 8192) -> float:
    """Fast KDE entropy of one sample set; see :func:`entropies`."""
    x = np.asarray(samples, dtype=float).reshape(1, -1)
    if bandwidth is None:
        return float(entropies(x, max_points)[0])
    h = np.array([float(bandwidth)])
    ratio = (np.ptp(x) + 10 * h[0]) / h[0]
    nb = int(np.clip(2 ** np.ceil(np.log2(8 * ratio + 1)), 512, max_points))
    return float(_binned_rows(x, h, nb)[0])


# Thompson sampling, UCB weights and the optimum mixture ---------------------------


def _sign(direction: str) -> float:
    if direction not in ("min", "max"):
        raise ValueError("direction must be 'min' or 'max'")
    return 1.0 if direction == "min" else -1.0


def thompson_optima(sur: CausalSurrogate, J: int, grid, rng: np.random.Generator, direction: str = "min"):
    """Extremum location and value of J joint posterior draws over ``grid``.

    Returns ``(x_star (J, d), y_star (J,))``; ties go to the first grid index.
    """
    if J < 1:
        raise ValueError("J must be >= 1")
    g = np.asarray(grid, dtype=float).reshape(-1, len(sur.iset))
    if len(g) == 0:
        raise ValueError("the grid must be non-empty")
    draws = gplib.sample_joint(sur.gp, g, J, rng)
    s = _sign(direction)
    idx = np.argmin(s * draws, axis=1)
    return g[idx], draws[np.arange(J), idx]


def ucb_from_stats(mu_star, sd_star, beta: float = 0.1, direction: str = "min") -> np.ndarray:
    """Softmax weights exp(-(mu* - beta sd*)) for minimization (signs flip for max)."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    s = _sign(direction)
    a = -(s * np.asarray(mu_star, dtype=float) - beta * np.asarray(sd_star, dtype=float))
    a = a - np.max(a, axis=-1, keepdims=True)
    w = np.exp(a)
    return w / w.sum(axis=-1, keepdims=True)


def extremum_stats(mean: np.ndarray, var: np.ndarray, direction: str = "min"):
    """Extremum of the posterior mean over a grid and the std there (last axis)."""
    s = _sign(direction)
    idx = np.argmin(s * mean, axis=-1)
    mu = np.take_along_axis(mean, idx[..., None], axis=-1)[..., 0]
    sd = np.sqrt(np.maximum(np.take_along_axis(var, idx[..., None], axis=-1)[..., 0], 0.0))
    return mu, sd


def ucb_weights(surrogates: Sequence[CausalSurrogate], grids: Sequence[np.ndarray], beta: float = 0.1, direction: str = "min") -> np.ndarray:
    mus, sds = [], []
    for sur, g in zip(surrogates, grids):
        m, v = sur.posterior(g)
        mu, sd = extremum_stats(m, v, direction)
        mus.append(mu)
        sds.append(sd)
    return ucb_from_stats(np.array(mus), np.array(sds), beta, direction)


@dataclass(frozen=True, eq=False)
class OptMixture:
    """Mixture over intervention sets of the per-set optimum distributions."""

    weights: np.ndarray
    components: tuple  # per set: (Kde over y*_I, x*_I samples)

    def __post_init__(self):
        w = np.asarray(self.weights)
        if np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
            raise ValueError("mixture weights must be non-negative and sum to one")


def mixture_uniforms(K: int, rng: np.random.Generator):
    """Uniforms choosing the set and integers choosing the draw, for K mixture samples."""
    return rng.random(K), rng.integers(0, 2**31 - 1, size=K)


def mixture_indices(weights: np.ndarray, u_set: np.ndarray) -> np.ndarray:
    """Set index for each uniform, by inverse CDF of the weights (last axis)."""
    cdf = np.cumsum(weights, axis=-1)
    cdf[..., -1] = 1.0
    if cdf.ndim == 1:
        return np.searchsorted(cdf, u_set, side="right")
    # batched: count the CDF values not exceeding each uniform
    return (u_set[..., None, :] >= cdf[..., :, None]).sum(axis=-2)


def build_opt_mixture(per_set, weights, K: int, rng: np.random.Generator):
    """Draw K (y*, x*) pairs from the weighted mixture of per-set Thompson samples.

    ``per_set`` is a sequence of ``(x_star (J, d), y_star (J,))``. Returns the
    mixture, the y* draws, the x* draws and the set index of each draw.
    """
    weights = np.asarray(weights, dtype=float)
    u_set, u_idx = mixture_uniforms(K, rng)
    sets = mixture_indices(weights, u_set)
    ys = np.empty(K)
    xs = []
    for k in range(K):
        xstar, ystar = per_set[sets[k]]
        j = u_idx[k] % len(ystar)
        ys[k] = ystar[j]
        xs.append(np.asarray(xstar)[j])
    comps = tuple((Kde.fit(y), np.asarray(x)) for x, y in per_set)
    return OptMixture(weights, comps), ys, xs, sets


def joint_entropy(post: GraphPosterior, y_samples, kde: Optional[Kde], pseudo_loglik) -> float:
    """Entropy of (y*, G): H(y*) plus the mean graph entropy after each pseudo-record.

    ``pseudo_loglik`` is a (K, |space|) array with the log-likelihood of the
    pseudo-record built from each (y*, x*) sample, or a callable returning it.
    """
    ll = pseudo_loglik() if callable(pseudo_loglik) else np.asarray(pseudo_loglik, dtype=float)
    h_y = kde_entropy(kde) if kde is not None else binned_entropy(y_samples)
    h_g = entropy_of_log_weights(post.log_weights[None, :] + ll).mean()
    return float(h_y + h_g)


# acquisition state and scoring rounds ---------------------------------------------


@dataclass(frozen=True)
class AcquisitionSettings:
    J: int = 200
    K: int = 400
    L: int = 5
    candidates_per_dim: int = 50
    resolution: int = 512
    eps_graph: float = 0.01
    beta: float = 0.1
    crn: bool = True
    direction: str = "min"
    chunk: int = 2_000_000


def default_cost(iset: InterventionSet, x=None) -> float:
    return float(len(iset.targets))


@dataclass(frozen=True, eq=False)
class AcquisitionState:
    """Immutable snapshot of everything a scoring round reads."""

    sets: tuple
    surrogates: tuple
    grids: tuple
    candidates: tuple
    post: GraphPosterior
    model: Optional[LikelihoodModel]
    target: str
    settings: AcquisitionSettings = field(default_factory=AcquisitionSettings)
    cost: Callable = default_cost
    incumbent: Optional[float] = None

    def set_index(self, iset: InterventionSet) -> int:
        for i, s in enumerate(self.sets):
            if s.targets == iset.targets:
                return i
        raise KeyError(iset.name)


@dataclass
class ScoreResult:
    """Scores of the candidates of one set with per-candidate diagnostics."""

    scores: np.ndarray
    h_before: float
    h_after: np.ndarray
    branch: str


def _unique_rows(grid: np.ndarray, cands: np.ndarray):
    pts = np.vstack([grid, cands])
    uq, inv = np.unique(pts, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    return uq, inv[: len(grid)], inv[len(grid) :]


def _fantasy_streams(seed, cand_idx, L: int, J: int, n_nodes: int, crn: bool, offset: int = 0):
    """Per-candidate noise: y standard normals, Matheron noise, graph uniforms, exogenous draws.

    With common random numbers every candidate of every set sees the same
    draws, which depend only on the round seed. Otherwise each set draws
    fresh noise for each candidate from its own stream.
    """
    n = len(cand_idx)
    if crn:
        r = np.random.default_rng([*seed, 1_000_002])
        one = (r.standard_normal(L), r.standard_normal((L, J)), r.random(L), r.standard_normal((L, n_nodes)))
        return tuple(np.broadcast_to(a, (n,) + a.shape) for a in one)
    xi = np.empty((n, L))
    eps = np.empty((n, L, J))
    gu = np.empty((n, L))
    exo = np.empty((n, L, n_nodes))
    rng = np.random.default_rng([*seed, 1_000_003 + offset])
    for row in range(n):
        xi[row] = rng.standard_normal(L)
        eps[row] = rng.standard_normal((L, J))
        gu[row] = rng.random(L)
        exo[row] = rng.standard_normal((L, n_nodes))
    return xi, eps, gu, exo


def _pad_stack(arrays, fill):
    n = max(len(a) for a in arrays)
    out = np.full((len(arrays), n) + arrays[0].shape[1:], fill, dtype=float)
    for i, a in enumerate(arrays):
        out[i, : len(a)] = a
    return out


def sample_graph_indices(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.minimum(np.searchsorted(np.cumsum(probs), u, side="right"), len(probs) - 1)


def fantasy_values(model: LikelihoodModel, iset: InterventionSet, x: np.ndarray, graph_idx: np.ndarray, exo: np.ndarray) -> dict:
    """One sample per row from the fitted SCM of the row's graph, under do(iset = x row)."""
    n = len(x)
    out = {v: np.empty(n) for v in model.nodes if v not in iset.targets}
    for g in np.unique(graph_idx):
        rows = np.flatnonzero(graph_idx == g)
        vals = model.scms[g].propagate(exo[rows], iset, x[rows], paired=True)
        for v in out:
            out[v][rows] = np.broadcast_to(vals[v], (len(rows), 1))[:, 0]
    return out


class CesRound:
    """Precomputed Thompson draws, mixture and pseudo-record tables for one round."""

    def __init__(self, state: AcquisitionState, seed):
        self.state = state
        self.seed = tuple(np.atleast_1d(seed).tolist())
        st = state.settings
        self.sign = _sign(st.direction)
        rng = np.random.default_rng([*self.seed, 7])
        self.per_set = []
        for sur, grid, cands in zip(state.surrogates, state.grids, state.candidates):
            q, gi, ci = _unique_rows(grid, cands)
            mean, cov = sur.posterior(q, full_cov=True)
            scale = sur.gp.kernel.signal_variance + float(np.max(sur.prior_offset.values, initial=0.0))
            chol = gplib.factor_psd(cov, scale)
            draws = mean + rng.standard_normal((st.J, len(q))) @ chol.T
            fg = draws[:, gi]
            idx = np.argmin(self.sign * fg, axis=1)
            gvar = np.maximum(np.diag(cov)[gi], 0.0)
            self.per_set.append(
                dict(
                    q=q, gi=gi, ci=ci, mean=mean, cov=cov, draws=draws, fg=fg,
                    ystar=fg[np.arange(st.J), idx], xidx=idx, gmean=mean[gi], gvar=gvar,
                    s2=sur.noise_variance,
                )
            )
        mu, sd = zip(*(extremum_stats(p["gmean"], p["gvar"], st.direction) for p in self.per_set))
        self.mu_star = np.array(mu)
        self.sd_star = np.array(sd)
        self.weights = ucb_from_stats(self.mu_star, self.sd_star, st.beta, st.direction)
        self.u_set, u_idx = mixture_uniforms(st.K, rng)
        self.j_idx = u_idx % st.J
        self.mix_set = mixture_indices(self.weights, self.u_set)
        self.ystar_all = np.stack([p["ystar"] for p in self.per_set])  # (n_sets, J)
        self.xidx_all = np.stack([p["xidx"] for p in self.per_set])
        y_now = self.ystar_all[self.mix_set, self.j_idx]
        self.graph_entropy = posterior_entropy(state.post)
        self.branch = "ystar" if self.graph_entropy < st.eps_graph or state.model is None else "joint"
        self.h_y_now = binned_entropy(y_now)
        self.h_now = self.h_y_now
        if self.branch == "joint":
            self._pseudo_tables(rng)
            ll = self._pseudo_loglik(self.mix_set, self.xidx_all[self.mix_set, self.j_idx], y_now)
            self.h_now += float(entropy_of_log_weights(state.post.log_weights + ll).mean())

    # pseudo-records for optimum samples -------------------------------------------
    def _pseudo_tables(self, rng):
        st = self.state
        model = st.model
        probs = st.post.probs
        self.nony, self.ymean, self.yvar = [], [], []
        for iset, grid in zip(st.sets, st.grids):
            n = len(grid)
            gidx = sample_graph_indices(probs, rng.random(n))
            exo = rng.standard_normal((n, len(model.nodes)))
            vals = fantasy_values(model, iset, grid, gidx, exo)
            vals.pop(st.target, None)
            self.nony.append(model.batch(iset, grid, vals, exclude=(st.target,)))
            m, v = model.predictive(st.target, iset, grid, vals)
            self.ymean.append(m)
            self.yvar.append(v)
        # pad to a common grid size so (set, grid index) pairs can be gathered at once
        self.nony = _pad_stack(self.nony, 0.0)
        self.ymean = _pad_stack(self.ymean, 0.0)
        self.yvar = _pad_stack(self.yvar, 1.0)

    def _pseudo_loglik(self, set_idx, grid_idx, y):
        """(…, K, G) log-likelihoods of the pseudo-records (x*, v*, y*)."""
        base = self.nony[set_idx, grid_idx]
        m = self.ymean[set_idx, grid_idx]
        v = self.yvar[set_idx, grid_idx]
        return base + log_normal(y[..., None], m, v)

    # candidate scoring --------------------------------------------------------------
    def score_set(self, set_index: int, cand_idx: Optional[np.ndarray] = None) -> ScoreResult:
        st = self.state
        s = st.settings
        P = self.per_set[set_index]
        iset = st.sets[set_index]
        cands = st.candidates[set_index]
        cand_idx = np.arange(len(cands)) if cand_idx is None else np.asarray(cand_idx, dtype=int)
        n_c, L, J = len(cand_idx), s.L, s.J
        n_nodes = len(st.model.nodes) if st.model is not None else 1
        xi, eps, gu, exo = _fantasy_streams(self.seed, cand_idx, L, J, n_nodes, s.crn, set_index)

        cq = P["ci"][cand_idx]
        cov = P["cov"]
        gi = P["gi"]
        s2 = P["s2"]
        denom = np.maximum(np.diag(cov)[cq], 0.0) + s2  # (n_c,)
        kgc = cov[np.ix_(gi, cq)]  # (n_grid, n_c)
        A = kgc / denom  # Matheron gain per grid point
        y_f = P["mean"][cq][:, None] + np.sqrt(denom)[:, None] * xi  # fantasy observations (n_c, L)
        fc = P["draws"][:, cq].T  # (n_c, J)
        resid = y_f[:, :, None] - fc[:, None, :] - np.sqrt(s2) * eps  # (n_c, L, J)

        # updated per-set optimum samples for each (candidate, fantasy)
        n_grid = len(gi)
        new_y = np.empty((n_c, L, J))
        new_x = np.empty((n_c, L, J), dtype=int)
        fg = self.sign * P["fg"]
        step = max(1, s.chunk // (L * J * n_grid))
        for a in range(0, n_c, step):
            b = min(n_c, a + step)
            upd = (self.sign * resid[a:b, :, :, None]) * A.T[a:b, None, None, :]
            upd += fg[None, None, :, :]
            idx = np.argmin(upd, axis=-1)
            new_x[a:b] = idx
            new_y[a:b] = self.sign * np.take_along_axis(upd, idx[..., None], axis=-1)[..., 0]

        # updated mixture weights
        gmean = P["gmean"][None, None, :] + A.T[:, None, :] * (y_f - P["mean"][cq][:, None])[:, :, None]
        gvar = np.maximum(P["gvar"][None, :] - kgc.T**2 / denom[:, None], 0.0)
        mu_i, sd_i = extremum_stats(gmean, np.broadcast_to(gvar[:, None, :], gmean.shape), s.direction)
        mus = np.broadcast_to(self.mu_star, (n_c, L, len(st.sets))).copy()
        sds = np.broadcast_to(self.sd_star, (n_c, L, len(st.sets))).copy()
        mus[..., set_index] = mu_i
        sds[..., set_index] = sd_i
        w = ucb_from_stats(mus, sds, s.beta, s.direction)  # (n_c, L, n_sets)
        mix = mixture_indices(w, self.u_set)  # (n_c, L, K)
        mine = mix == set_index
        y_mix = np.where(mine, np.take(new_y, self.j_idx, axis=-1), self.ystar_all[mix, self.j_idx])
        h_after = entropies(y_mix)

        if self.branch == "joint":
            x_mix = np.where(mine, np.take(new_x, self.j_idx, axis=-1), self.xidx_all[mix, self.j_idx])
            model = st.model
            probs = st.post.probs
            xr = np.repeat(cands[cand_idx], L, axis=0)
            gidx = sample_graph_indices(probs, gu.reshape(-1))
            vals = fantasy_values(model, iset, xr, gidx, exo.reshape(n_c * L, n_nodes))
            vals.pop(st.target, None)
            ll_f = model.batch(iset, xr, vals, exclude=(st.target,))
            ym, yv = model.predictive(st.target, iset, xr, vals)
            ll_f = ll_f + log_normal(y_f.reshape(-1)[:, None], ym, yv)
            lw = (st.post.log_weights[None, :] + ll_f).reshape(n_c, L, 1, -1)
            hg = np.empty((n_c, L))
            for c in range(n_c):
                ll_p = self._pseudo_loglik(mix[c], x_mix[c], y_mix[c])  # (L, K, G)
                hg[c] = entropy_of_log_weights(lw[c] + ll_p).mean(axis=-1)
            h_after = h_after + hg

        costs = np.array([st.cost(iset, x) for x in cands[cand_idx]], dtype=float)
        scores = (self.h_now - h_after.mean(axis=1)) / costs
        if not np.all(np.isfinite(scores)):
            bad = int(np.flatnonzero(~np.isfinite(scores))[0])
            raise ScoreFailure(
                f"non-finite CES score for {iset.name} at {cands[cand_idx][bad]}",
                {"h_before": self.h_now, "h_after": h_after[bad].tolist(), "cost": costs[bad], "branch": self.branch},
            )
        return ScoreResult(scores, self.h_now, h_after.mean(axis=1), self.branch)


def ces_score(iset: InterventionSet, x, state: AcquisitionState, L: Optional[int] = None, rng=None, seed=None, round_: Optional[CesRound] = None):
    """CES score of one candidate.

    ``x`` must be one of the state's candidates for ``iset``; scoring goes
    through the same batched machinery the engine uses. ``seed`` (or an
    integer drawn from ``rng``) fixes the round's random streams.
    """
    if L is not None and L != state.settings.L:
        from dataclasses import replace

        state = replace(state, settings=replace(state.settings, L=L))
        round_ = None
    if round_ is None:
        if seed is None:
            seed = int((rng or np.random.default_rng()).integers(2**31 - 1))
        round_ = CesRound(state, seed)
    si = state.set_index(iset)
    ci = _candidate_index(state.candidates[si], x)
    res = round_.score_set(si, np.array([ci]))
    return AcquisitionScore(iset, np.asarray(x, dtype=float).reshape(-1), float(res.scores[0]), res.branch, res.h_before, float(res.h_after[0]))


def _candidate_index(cands: np.ndarray, x) -> int:
    x = np.asarray(x, dtype=float).reshape(-1)
    d = np.abs(cands - x[None, :]).max(axis=1)
    i = int(np.argmin(d))
    if d[i] > 1e-9:
        raise ValueError(f"{x} is not a candidate point of this set")
    return i


@dataclass(frozen=True)
class AcquisitionScore:
    set: InterventionSet
    x: np.ndarray
    score: float
    branch: str = ""
    h_before: float = float("nan")
    h_after: float = float("nan")


# baselines ------------------------------------------------------------------------


def expected_improvement(mean, var, incumbent: float, direction: str = "min") -> np.ndarray:
    """Closed-form EI of a Gaussian over the incumbent."""
    s = _sign(direction)
    mean = np.asarray(mean, dtype=float)
    sd = np.sqrt(np.maximum(np.asarray(var, dtype=float), 0.0))
    imp = s * (incumbent - mean)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sd > 0, imp / np.where(sd > 0, sd, 1.0), 0.0)
    ei = np.where(sd > 0, imp * norm.cdf(z) + sd * norm.pdf(z), np.maximum(imp, 0.0))
    return np.maximum(ei, 0.0)


def cei_scores(state: AcquisitionState, set_index: int) -> np.ndarray:
    if state.incumbent is None:
        raise ValueError("causal EI needs at least one observed outcome")
    iset = state.sets[set_index]
    cands = state.candidates[set_index]
    mean, var = state.surrogates[set_index].posterior(cands)
    ei = expected_improvement(mean, var, state.incumbent, state.settings.direction)
    costs = np.array([state.cost(iset, x) for x in cands], dtype=float)
    return ei / costs


def cei_score(iset: InterventionSet, x, state: AcquisitionState) -> AcquisitionScore:
    if state.incumbent is None:
        raise ValueError("causal EI needs at least one observed outcome")
    si = state.set_index(iset)
    x = np.asarray(x, dtype=float).reshape(1, -1)
    mean, var = state.surrogates[si].posterior(x)
    ei = expected_improvement(mean, var, state.incumbent, state.settings.direction)[0]
    return AcquisitionScore(iset, x[0], float(ei / state.cost(iset, x[0])), "cei")


def structure_mi_scores(state: AcquisitionState, set_index: int, seed, cand_idx=None) -> ScoreResult:
    """Expected drop in graph entropy from one fantasy record per unit cost."""
    s = state.settings
    model = state.model
    iset = state.sets[set_index]
    cands = state.candidates[set_index]
    cand_idx = np.arange(len(cands)) if cand_idx is None else np.asarray(cand_idx, dtype=int)
    h_now = posterior_entropy(state.post)
    n_c, L = len(cand_idx), s.L
    if h_now == 0.0:
        return ScoreResult(np.zeros(n_c), 0.0, np.zeros(n_c), "structure")
    n_nodes = len(model.nodes)
    _, _, gu, exo = _fantasy_streams(tuple(np.atleast_1d(seed).tolist()), cand_idx, L, 1, n_nodes, s.crn, set_index)
    xr = np.repeat(cands[cand_idx], L, axis=0)
    gidx = sample_graph_indices(state.post.probs, gu.reshape(-1))
    vals = fantasy_values(model, iset, xr, gidx, exo.reshape(n_c * L, n_nodes))
    ll = model.batch(iset, xr, vals)
    h_after = entropy_of_log_weights(state.post.log_weights[None, :] + ll).reshape(n_c, L).mean(axis=1)
    costs = np.array([state.cost(iset, x) for x in cands[cand_idx]], dtype=float)
    return ScoreResult((h_now - h_after) / costs, h_now, h_after, "structure")


def structure_mi_score(iset: InterventionSet, x, state: AcquisitionState, L: Optional[int] = None, rng=None, seed=None) -> AcquisitionScore:
    if L is not None and L != state.settings.L:
        from dataclasses import replace

        state = replace(state, settings=replace(state.settings, L=L))
    if seed is None:
        seed = int((rng or np.random.default_rng()).integers(2**31 - 1))
    si = state.set_index(iset)
    ci = _candidate_index(state.candidates[si], x)
    res = structure_mi_scores(state, si, seed, np.array([ci]))
    return AcquisitionScore(iset, np.asarray(x, dtype=float).reshape(-1), float(res.scores[0]), "structure", res.h_before, float(res.h_after[0]))
