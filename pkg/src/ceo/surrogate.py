"""Causal-effect surrogates with graph-marginalized do-calculus priors.

For an intervention set the prior mean is the posterior-weighted average of the
per-graph Monte Carlo estimates of E[Y | do(x)], and the prior variance offset
adds the within-graph and between-graph variances. Both are tabulated on a
per-set grid and interpolated, since each table entry costs a Monte Carlo run.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.spatial import cKDTree
from scipy.stats import qmc

from . import gp as gplib
from .errors import InternalError
from .graphs import Dag, InterventionSet
from .posterior import GraphPosterior
from .scm import Scm


@dataclass(frozen=True)
class DoMomentEstimate:
    """Monte Carlo mean and variance of Y under do(x), one entry per x row."""

    mean: np.ndarray
    variance: np.ndarray
    mc_samples: int

    def __post_init__(self):
        if np.any(self.variance < 0) or not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.variance))):
            raise InternalError("do-moment estimates must be finite with non-negative variance")


def estimate_do_moments(
    g: Dag,
    scm: Scm,
    iset: InterventionSet,
    x,
    mc_samples: int,
    rng: np.random.Generator,
    chunk: int = 200_000,
) -> DoMomentEstimate:
    """Ancestor-sample Y through ``scm`` mutilated by do(iset = x).

    The same exogenous draws are used for every row of ``x``. With
    ``mc_samples == 1`` the variance is reported as 0.
    """
    if scm.graph.edges != g.edges:
        raise InternalError("the fitted SCM does not belong to graph g")
    x = iset.check_values(x)
    exo = scm.draw_exogenous(mc_samples, rng)
    y = scm.target
    means, vars_ = [], []
    step = max(1, chunk // mc_samples)
    for s in range(0, len(x), step):
        vals = scm.propagate(exo, iset, x[s : s + step], only=[y])
        if y not in vals:
            raise InternalError(f"target {y} was not reached in the sampling order")
        ys = np.broadcast_to(vals[y], (len(x[s : s + step]), mc_samples))
        means.append(ys.mean(axis=1))
        vars_.append(ys.var(axis=1, ddof=1) if mc_samples > 1 else np.zeros(len(ys)))
    return DoMomentEstimate(np.concatenate(means), np.maximum(np.concatenate(vars_), 0.0), mc_samples)


def combine_moments(probs: np.ndarray, means: np.ndarray, variances: np.ndarray):
    """Graph-marginalized prior mean and variance offset.

    ``means`` and ``variances`` have shape (G, P). The offset is the weighted
    within-graph variance plus the weighted second moment minus the squared
    mean, clamped at zero.
    """
    p = np.asarray(probs, dtype=float)[:, None]
    m = np.sum(p * means, axis=0)
    within = np.sum(p * variances, axis=0)
    between = np.sum(p * means**2, axis=0) - m**2
    return m, within + np.maximum(between, 0.0)


# grids ------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Grid:
    """Points of an intervention domain; regular for one or two dimensions."""

    iset: InterventionSet
    points: np.ndarray
    axes: Optional[tuple] = None

    @classmethod
    def regular(cls, iset: InterventionSet, per_dim: int) -> "Grid":
        axes = tuple(np.linspace(lo, hi, per_dim) for lo, hi in iset.domain)
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
        return cls(iset, pts, axes)

    @classmethod
    def sobol(cls, iset: InterventionSet, n: int, seed: int = 0) -> "Grid":
        u = qmc.Sobol(len(iset), scramble=True, seed=seed).random(n)
        return cls(iset, qmc.scale(u, iset.lower, iset.upper))

    @classmethod
    def default(cls, iset: InterventionSet, per_dim=(100, 20), sobol_points: int = 400, seed: int = 0) -> "Grid":
        d = len(iset)
        if d == 1:
            return cls.regular(iset, per_dim[0])
        if d == 2:
            return cls.regular(iset, per_dim[1])
        return cls.sobol(iset, sobol_points, seed)

    def __len__(self):
        return len(self.points)


class GridFunction:
    """Interpolates values tabulated on a :class:`Grid`.

    Regular grids use linear interpolation (clamped at the edges); scattered
    grids use the nearest tabulated point.
    """

    def __init__(self, grid: Grid, values: np.ndarray):
        self.grid = grid
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != (len(grid),):
            raise ValueError("one value per grid point is required")
        if grid.axes is not None and len(grid.axes) > 1:
            shape = tuple(len(a) for a in grid.axes)
            self._rgi = RegularGridInterpolator(grid.axes, self.values.reshape(shape), bounds_error=False, fill_value=None)
        elif grid.axes is None:
            self._tree = cKDTree((grid.points - grid.iset.lower) / (grid.iset.upper - grid.iset.lower))

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        x = x.reshape(-1, self.grid.points.shape[1])
        axes = self.grid.axes
        if axes is not None and len(axes) == 1:
            return np.interp(x[:, 0], axes[0], self.values)
        if axes is not None:
            lo = np.array([a[0] for a in axes])
            hi = np.array([a[-1] for a in axes])
            return self._rgi(np.clip(x, lo, hi))
        _, idx = self._tree.query((x - self.grid.iset.lower) / (self.grid.iset.upper - self.grid.iset.lower))
        return self.values[idx]


@dataclass(frozen=True, eq=False)
class PriorTables:
    """Per-graph do-moment tables for one intervention set, shape (G, P)."""

    grid: Grid
    means: np.ndarray
    variances: np.ndarray

    @classmethod
    def compute(
        cls,
        grid: Grid,
        graphs: Sequence[Dag],
        scms: Sequence[Scm],
        mc_samples: int,
        seed_seq: np.random.SeedSequence,
    ) -> "PriorTables":
        children = seed_seq.spawn(len(graphs))
        means, variances = [], []
        for g, scm, ss in zip(graphs, scms, children):
            est = estimate_do_moments(g, scm, grid.iset, grid.points, mc_samples, np.random.default_rng(ss))
            means.append(est.mean)
            variances.append(est.variance)
        return cls(grid, np.array(means), np.array(variances))

    def combine(self, probs: np.ndarray) -> tuple[GridFunction, GridFunction]:
        m, v = combine_moments(probs, self.means, self.variances)
        return GridFunction(self.grid, m), GridFunction(self.grid, v)


def build_prior(
    iset: InterventionSet,
    post: GraphPosterior,
    scms: Sequence[Scm],
    x,
    mc_samples: int = 500,
    rng: Optional[np.random.Generator] = None,
):
    """Prior mean and variance offset at the rows of ``x``."""
    rng = np.random.default_rng(0) if rng is None else rng
    x = iset.check_values(x)
    ests = [estimate_do_moments(g, s, iset, x, mc_samples, rng) for g, s in zip(post.space, scms)]
    return combine_moments(post.probs, np.array([e.mean for e in ests]), np.array([e.variance for e in ests]))


# the surrogate ----------------------------------------------------------------


@dataclass(frozen=True)
class SurrogateSettings:
    """Hyperparameter policy for the causal-effect GP."""

    min_points_to_fit: int = 3
    restarts: int = 3
    default_lengthscale_frac: float = 0.2
    lengthscale_frac_bounds: tuple = (0.05, 2.0)
    noise_floor: float = 1e-6
    offset_mode: str = "rank_one"


@dataclass(frozen=True, eq=False)
class CausalSurrogate:
    iset: InterventionSet
    prior_mean: GridFunction
    prior_offset: GridFunction
    gp: gplib.GaussianProcess
    settings: SurrogateSettings = field(default_factory=SurrogateSettings)

    @classmethod
    def create(
        cls,
        iset: InterventionSet,
        prior_mean: GridFunction,
        prior_offset: GridFunction,
        x=None,
        y=None,
        settings: Optional[SurrogateSettings] = None,
        rng: Optional[np.random.Generator] = None,
    ) -> "CausalSurrogate":
        settings = settings or SurrogateSettings()
        d = len(iset)
        x = np.empty((0, d)) if x is None else np.asarray(x, dtype=float).reshape(-1, d)
        y = np.empty(0) if y is None else np.asarray(y, dtype=float).reshape(-1)
        width = iset.upper - iset.lower
        if len(y) >= settings.min_points_to_fit:
            lo, hi = settings.lengthscale_frac_bounds
            gp = gplib.fit_hyperparameters(
                x,
                y,
                restarts=settings.restarts,
                rng=np.random.default_rng(0) if rng is None else rng,
                mean_fn=prior_mean,
                variance_offset=prior_offset,
                offset_mode=settings.offset_mode,
                lengthscale_bounds=(lo * width.min(), hi * width.max()),
                noise_bounds=(settings.noise_floor, gplib.VARIANCE_BOUNDS[1]),
                init=np.log(
                    np.concatenate(
                        [
                            settings.default_lengthscale_frac * width,
                            [1.0, max(float(np.mean(prior_offset.values)), settings.noise_floor)],
                        ]
                    )
                ),
            )
        else:
            noise = max(float(np.mean(prior_offset.values)), settings.noise_floor)
            gp = gplib.GaussianProcess.build(
                gplib.RbfKernel(settings.default_lengthscale_frac * width, 1.0),
                noise,
                x,
                y,
                mean_fn=prior_mean,
                variance_offset=prior_offset,
                offset_mode=settings.offset_mode,
            )
        return cls(iset, prior_mean, prior_offset, gp, settings)

    @property
    def x(self) -> np.ndarray:
        return self.gp.inputs

    @property
    def y(self) -> np.ndarray:
        return self.gp.outputs

    @property
    def noise_variance(self) -> float:
        return self.gp.noise_variance

    def posterior(self, q, full_cov: bool = False):
        q = np.asarray(q, dtype=float).reshape(-1, len(self.iset))
        return self.gp.predict(q, full_cov=full_cov)

    def with_data(self, x, y, refit: bool = True, rng=None) -> "CausalSurrogate":
        """Surrogate with extra training pairs; refits hyperparameters if allowed."""
        xs = np.vstack([self.x, np.asarray(x, dtype=float).reshape(-1, len(self.iset))])
        ys = np.concatenate([self.y, np.asarray(y, dtype=float).reshape(-1)])
        if refit:
            return CausalSurrogate.create(self.iset, self.prior_mean, self.prior_offset, xs, ys, self.settings, rng)
        return CausalSurrogate(self.iset, self.prior_mean, self.prior_offset, self.gp.rebuild(inputs=xs, outputs=ys), self.settings)

    def with_prior(self, prior_mean: GridFunction, prior_offset: GridFunction, rng=None) -> "CausalSurrogate":
        return CausalSurrogate.create(self.iset, prior_mean, prior_offset, self.x, self.y, self.settings, rng)


def surrogate_posterior(sur: CausalSurrogate, query) -> list[gplib.PosteriorGaussian]:
    q = np.asarray(query, dtype=float).reshape(-1, len(sur.iset))
    sur.iset.check_values(q)
    mean, var = sur.posterior(q)
    return [gplib.PosteriorGaussian(float(m), float(v)) for m, v in zip(mean, var)]


def dump_csv(sur: CausalSurrogate, grid: Grid) -> str:
    """Grid x, prior mean, prior offset, posterior mean and variance as CSV."""
    mean, var = sur.posterior(grid.points)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*sur.iset.targets, "prior_mean", "prior_offset", "post_mean", "post_var"])
    pm = sur.prior_mean(grid.points)
    po = sur.prior_offset(grid.points)
    for i, x in enumerate(grid.points):
        w.writerow([*(repr(float(v)) for v in x), repr(float(pm[i])), repr(float(po[i])), repr(float(mean[i])), repr(float(var[i]))])
    return buf.getvalue()
