"""Exact Gaussian-process regression with an RBF ARD kernel.

A fitted :class:`GaussianProcess` is an immutable value. Adding data or
changing hyperparameters returns a new instance with a fresh Cholesky factor.

Two optional handles let callers inject structure without this module knowing
where it comes from: ``mean_fn`` maps an (n, d) array to a prior mean vector and
``variance_offset`` maps it to a non-negative extra prior variance. The offset
enters the covariance either as a rank-one term ``s(x) s(x')`` with
``s = sqrt(offset)`` (the default) or only on the diagonal.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from .errors import FitFailed, InvalidData, InvalidQuery, NumericalFailure

log = logging.getLogger(__name__)

LENGTHSCALE_BOUNDS = (1e-3, 1e3)
VARIANCE_BOUNDS = (1e-6, 1e3)
JITTER_START = 1e-8
JITTER_MAX = 1e-2
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class RbfKernel:
    """k(a, b) = s * exp(-0.5 * sum_d (a_d - b_d)^2 / l_d^2)."""

    lengthscales: np.ndarray
    signal_variance: float = 1.0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float)).copy()
        ls.setflags(write=False)
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        if not (np.all(np.isfinite(ls)) and np.all(ls > 0)):
            raise ValueError(f"lengthscales must be positive and finite, got {ls}")
        if not (np.isfinite(self.signal_variance) and self.signal_variance > 0):
            raise ValueError(f"signal variance must be positive, got {self.signal_variance}")

    @property
    def dim(self) -> int:
        return self.lengthscales.size

    def sqdist(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return cdist(a / self.lengthscales, b / self.lengthscales, "sqeuclidean")

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if a is b:
            # cdist of an array with itself is exactly symmetric
            d = self.sqdist(a, a)
        else:
            d = self.sqdist(a, b)
        return self.signal_variance * np.exp(-0.5 * d)

    def diag(self, a: np.ndarray) -> np.ndarray:
        return np.full(len(a), self.signal_variance)


@dataclass(frozen=True)
class PosteriorGaussian:
    mean: float
    variance: float

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError("variance must be non-negative")

    @property
    def std(self) -> float:
        return float(np.sqrt(self.variance))


@dataclass(frozen=True)
class ConstantMean:
    """Picklable constant prior mean."""

    value: float = 0.0

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.full(len(x), self.value)


def _as_inputs(x, dim: Optional[int] = None) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 1:
        a = a.reshape(-1, 1) if dim in (None, 1) else a.reshape(-1, dim)
    if a.ndim != 2:
        raise InvalidQuery(f"inputs must be a 2-d array, got shape {a.shape}")
    return a


def _clamp_variance(var: np.ndarray) -> np.ndarray:
    low = var.min(initial=0.0)
    if low < -1e-8:
        log.warning("clamped predictive variance %.3g to zero", low)
    return np.maximum(var, 0.0)


@dataclass(frozen=True, eq=False)
class GaussianProcess:
    kernel: RbfKernel
    noise_variance: float
    inputs: np.ndarray
    outputs: np.ndarray
    mean_fn: Optional[Callable] = None
    variance_offset: Optional[Callable] = None
    offset_mode: str = "rank_one"
    jitter: float = 0.0
    cholesky: np.ndarray = field(default=None, repr=False)
    alpha: np.ndarray = field(default=None, repr=False)

    @classmethod
    def build(
        cls,
        kernel: RbfKernel,
        noise_variance: float,
        inputs=None,
        outputs=None,
        mean_fn: Optional[Callable] = None,
        variance_offset: Optional[Callable] = None,
        offset_mode: str = "rank_one",
    ) -> "GaussianProcess":
        """Validate data and factor K + (noise + jitter) I."""
        d = kernel.dim
        x = np.empty((0, d)) if inputs is None else _as_inputs(inputs, d)
        y = np.empty(0) if outputs is None else np.asarray(outputs, dtype=float).reshape(-1)
        if x.shape[1] != d:
            raise InvalidData(f"inputs have {x.shape[1]} columns, kernel expects {d}")
        if len(x) != len(y):
            raise InvalidData(f"{len(x)} inputs but {len(y)} outputs")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise InvalidData("training data must be finite")
        if not (np.isfinite(noise_variance) and noise_variance >= 0):
            raise InvalidData(f"noise variance must be non-negative, got {noise_variance}")
        if offset_mode not in ("rank_one", "diagonal"):
            raise ValueError(f"unknown offset mode {offset_mode!r}")
        x = x.copy()
        y = y.copy()
        x.setflags(write=False)
        y.setflags(write=False)
        gp = cls(kernel, float(noise_variance), x, y, mean_fn, variance_offset, offset_mode)
        if len(x):
            k = gp.prior_cov(x)
            chol, jitter = _jittered_cholesky(k, noise_variance, kernel.signal_variance)
            alpha = cho_solve((chol, True), y - gp.prior_mean(x))
            object.__setattr__(gp, "cholesky", chol)
            object.__setattr__(gp, "alpha", alpha)
            object.__setattr__(gp, "jitter", jitter)
        return gp

    # prior ------------------------------------------------------------
    @property
    def n(self) -> int:
        return len(self.outputs)

    @property
    def dim(self) -> int:
        return self.kernel.dim

    def prior_mean(self, x: np.ndarray) -> np.ndarray:
        if self.mean_fn is None:
            return np.zeros(len(x))
        return np.asarray(self.mean_fn(x), dtype=float).reshape(-1)

    def _offset_sd(self, x: np.ndarray) -> np.ndarray:
        v = np.asarray(self.variance_offset(x), dtype=float).reshape(-1)
        return np.sqrt(np.maximum(v, 0.0))

    def prior_cov(self, a: np.ndarray, b: Optional[np.ndarray] = None) -> np.ndarray:
        """Prior covariance k(a, b) plus the variance offset, if any."""
        same = b is None
        k = self.kernel(a, a) if same else self.kernel(a, b)
        if self.variance_offset is not None:
            sa = self._offset_sd(a)
            if self.offset_mode == "rank_one":
                sb = sa if same else self._offset_sd(b)
                k = k + np.outer(sa, sb)
            elif same:
                k = k + np.diag(sa**2)
        return k

    def prior_var(self, x: np.ndarray) -> np.ndarray:
        v = self.kernel.diag(x)
        if self.variance_offset is not None:
            v = v + self._offset_sd(x) ** 2
        return v

    # posterior --------------------------------------------------------
    def _check_query(self, q) -> np.ndarray:
        q = _as_inputs(q, self.dim)
        if q.shape[1] != self.dim:
            raise InvalidQuery(f"query has {q.shape[1]} columns, model expects {self.dim}")
        return q

    def _cross(self, q: np.ndarray) -> np.ndarray:
        if self.variance_offset is not None and self.offset_mode == "diagonal":
            # the diagonal offset only links a point with itself
            return self.kernel(q, self.inputs)
        return self.prior_cov(q, self.inputs)

    def predict(self, q, full_cov: bool = False):
        """Posterior mean and variance (or full covariance) at query rows."""
        q = self._check_query(q)
        mean = self.prior_mean(q)
        if self.n == 0:
            if full_cov:
                return mean, self.prior_cov(q)
            return mean, self.prior_var(q)
        ks = self._cross(q)
        mean = mean + ks @ self.alpha
        v = solve_triangular(self.cholesky, ks.T, lower=True)
        if full_cov:
            cov = self.prior_cov(q) - v.T @ v
            return mean, 0.5 * (cov + cov.T)
        var = self.prior_var(q) - np.einsum("ij,ij->j", v, v)
        return mean, _clamp_variance(var)

    def condition(self, x, y) -> "GaussianProcess":
        """New GP with the extra training pairs appended; hyperparameters unchanged."""
        x = _as_inputs(x, self.dim)
        y = np.asarray(y, dtype=float).reshape(-1)
        return self.rebuild(
            inputs=np.vstack([self.inputs, x]), outputs=np.concatenate([self.outputs, y])
        )

    def rebuild(self, **changes) -> "GaussianProcess":
        args = dict(
            kernel=self.kernel,
            noise_variance=self.noise_variance,
            inputs=self.inputs,
            outputs=self.outputs,
            mean_fn=self.mean_fn,
            variance_offset=self.variance_offset,
            offset_mode=self.offset_mode,
        )
        args.update(changes)
        return GaussianProcess.build(**args)

    def with_hyperparameters(self, theta: np.ndarray) -> "GaussianProcess":
        kernel, noise = unpack(theta, self.dim)
        return self.rebuild(kernel=kernel, noise_variance=noise)

    @property
    def theta(self) -> np.ndarray:
        return pack(self.kernel, self.noise_variance)


def _jittered_cholesky(k: np.ndarray, noise: float, signal_variance: float):
    n = len(k)
    # Noise at least as large as the first jitter step already regularises K.
    if noise >= JITTER_START * signal_variance:
        try:
            return np.linalg.cholesky(k + noise * np.eye(n)), 0.0
        except np.linalg.LinAlgError:
            pass
    jitter = JITTER_START * signal_variance
    while jitter <= JITTER_MAX * signal_variance * (1 + 1e-9):
        try:
            chol = np.linalg.cholesky(k + (noise + jitter) * np.eye(n))
            return chol, jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalFailure(
        f"covariance matrix of size {n} not positive definite after jitter {JITTER_MAX * signal_variance:.3g}"
    )


def pack(kernel: RbfKernel, noise: float) -> np.ndarray:
    """Log-space hyperparameter vector: lengthscales, signal variance, noise."""
    return np.log(np.concatenate([kernel.lengthscales, [kernel.signal_variance, noise]]))


def unpack(theta: np.ndarray, dim: int):
    e = np.exp(np.asarray(theta, dtype=float))
    return RbfKernel(e[:dim], e[dim]), float(e[dim + 1])


def log_marginal_likelihood(gp: GaussianProcess) -> float:
    """log N(y; m(X), K + noise I) for the stored data (zero for no data)."""
    if gp.n == 0:
        return 0.0
    r = gp.outputs - gp.prior_mean(gp.inputs)
    return float(
        -0.5 * r @ gp.alpha - np.log(np.diag(gp.cholesky)).sum() - 0.5 * gp.n * _LOG_2PI
    )


def lml_and_grad(gp: GaussianProcess) -> tuple[float, np.ndarray]:
    """Log marginal likelihood and its gradient with respect to ``pack`` coordinates.

    The jitter is treated as a constant.
    """
    x = gp.inputs
    n, d = x.shape
    lml = log_marginal_likelihood(gp)
    kinv = cho_solve((gp.cholesky, True), np.eye(n))
    w = np.outer(gp.alpha, gp.alpha) - kinv
    kern = gp.kernel(x, x)
    grad = np.empty(d + 2)
    for j in range(d):
        dj = cdist(x[:, j : j + 1], x[:, j : j + 1], "sqeuclidean") / gp.kernel.lengthscales[j] ** 2
        grad[j] = 0.5 * np.sum(w * kern * dj)
    grad[d] = 0.5 * np.sum(w * kern)
    grad[d + 1] = 0.5 * gp.noise_variance * np.trace(w)
    return lml, grad


def _default_bounds(dim: int, lengthscale_bounds, variance_bounds, noise_bounds):
    lb = np.log(lengthscale_bounds)
    vb = np.log(variance_bounds)
    nb = np.log(noise_bounds)
    return [tuple(lb)] * dim + [tuple(vb), tuple(nb)]


def fit_hyperparameters(
    inputs,
    outputs,
    restarts: int = 5,
    rng: Optional[np.random.Generator] = None,
    mean_fn: Optional[Callable] = None,
    variance_offset: Optional[Callable] = None,
    offset_mode: str = "rank_one",
    lengthscale_bounds=LENGTHSCALE_BOUNDS,
    variance_bounds=VARIANCE_BOUNDS,
    noise_bounds=VARIANCE_BOUNDS,
    fixed_noise: Optional[float] = None,
    init: Optional[np.ndarray] = None,
    center: bool = True,
) -> GaussianProcess:
    """Type-II maximum likelihood by multistart L-BFGS-B in log space.

    The first start is a data-driven heuristic (or ``init``); the others are
    drawn log-uniformly around it. Returns the GP at the best optimum found.
    Without an explicit ``mean_fn`` the prior mean is the sample mean of the
    outputs when ``center`` is set, zero otherwise.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    y = np.asarray(outputs, dtype=float).reshape(-1)
    x = _as_inputs(inputs)
    if len(y) < 1:
        raise InvalidData("at least one training point is required")
    if len(x) != len(y):
        raise InvalidData(f"{len(x)} inputs but {len(y)} outputs")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InvalidData("training data must be finite")
    rng = np.random.default_rng(0) if rng is None else rng
    if mean_fn is None and center:
        mean_fn = ConstantMean(float(np.mean(y)))
    dim = x.shape[1]
    bounds = _default_bounds(dim, lengthscale_bounds, variance_bounds, noise_bounds)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    free = np.ones(dim + 2, dtype=bool)
    if fixed_noise is not None:
        free[-1] = False

    resid = y - (np.zeros(len(y)) if mean_fn is None else np.asarray(mean_fn(x), dtype=float))
    spread = np.ptp(x, axis=0) if len(x) > 1 else np.ones(dim)
    spread = np.where(spread > 0, spread, 1.0)
    yvar = max(float(np.var(resid)) if len(y) > 1 else float(resid[0] ** 2), 1e-2)
    if init is None:
        start = np.log(np.concatenate([0.3 * spread, [yvar, 0.1 * yvar]]))
    else:
        start = np.asarray(init, dtype=float).copy()
    if fixed_noise is not None:
        start[-1] = np.log(max(fixed_noise, 1e-300))
    start = np.clip(start, lo, hi)

    template = GaussianProcess.build(
        RbfKernel(np.ones(dim)), 1.0, x, y, mean_fn, variance_offset, offset_mode
    )

    def objective(z):
        theta = start.copy()
        theta[free] = z
        try:
            gp = template.with_hyperparameters(theta)
            val, grad = lml_and_grad(gp)
        except NumericalFailure:
            return 1e25, np.zeros(free.sum())
        if not np.isfinite(val):
            return 1e25, np.zeros(free.sum())
        return -val, -grad[free]

    best, best_val = None, np.inf
    for r in range(restarts):
        if r == 0:
            z0 = start[free]
        else:
            z0 = np.clip(start + rng.uniform(-2.0, 2.0, size=start.size), lo, hi)[free]
        try:
            res = minimize(
                objective,
                z0,
                jac=True,
                method="L-BFGS-B",
                bounds=[b for b, f in zip(bounds, free) if f],
            )
        except (ValueError, FloatingPointError, np.linalg.LinAlgError):
            continue
        if np.isfinite(res.fun) and res.fun < best_val and res.fun < 1e24:
            best_val = res.fun
            best = res.x
    if best is None:
        raise FitFailed(f"all {restarts} hyperparameter restarts failed")
    theta = start.copy()
    theta[free] = best
    return template.with_hyperparameters(theta)


def predict(gp: GaussianProcess, query) -> list[PosteriorGaussian]:
    mean, var = gp.predict(query)
    return [PosteriorGaussian(float(m), float(v)) for m, v in zip(mean, var)]


def sample_joint(gp: GaussianProcess, query, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` joint posterior draws over the query rows, shape (count, |query|)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    q = gp._check_query(query)
    if len(q) < 1:
        raise InvalidQuery("at least one query point is required")
    # duplicated rows share one draw so they agree exactly
    uq, inverse = np.unique(q, axis=0, return_inverse=True)
    mean, cov = gp.predict(uq, full_cov=True)
    draws = mean + rng.standard_normal((count, len(uq))) @ factor_psd(cov, gp.kernel.signal_variance).T
    return draws[:, inverse.reshape(-1)]


def factor_psd(cov: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Lower factor L with L L^T ~= cov, robust to rank deficiency.

    Tries jittered Cholesky first and falls back to a clipped eigendecomposition,
    which handles duplicated query points exactly.
    """
    n = len(cov)
    jitter = JITTER_START * scale
    while jitter <= JITTER_MAX * scale * (1 + 1e-9):
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(n))
        except np.linalg.LinAlgError:
            jitter *= 10.0
    w, v = np.linalg.eigh(cov)
    if not np.all(np.isfinite(w)):
        raise NumericalFailure("posterior covariance could not be factored")
    return v * np.sqrt(np.maximum(w, 0.0))


def predict_mean(gp: GaussianProcess, query, chunk: int = 20000) -> np.ndarray:
    """Posterior mean only, evaluated in chunks to bound memory."""
    q = gp._check_query(query)
    if gp.n == 0:
        return gp.prior_mean(q)
    out = np.empty(len(q))
    for s in range(0, len(q), chunk):
        part = q[s : s + chunk]
        out[s : s + chunk] = gp.prior_mean(part) + gp._cross(part) @ gp.alpha
    return out
