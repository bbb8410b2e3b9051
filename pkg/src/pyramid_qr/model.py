"""Simultaneous linear quantile regression with pivotal quantile pyramids.

Quantiles, centering location and centering scale are all affine in the
covariates and are obtained by interpolating their values at the pivots.
The conditional density at ``x`` is the centering density rescaled on each
of the ``T + 1`` segments cut by the conditional quantiles, so that segment
``t`` carries exactly probability ``tau_t - tau_{t-1}``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, log_ndtr

from . import _kernels as K
from .centering import GPD, CenteringDistribution, Normal, Uniform, transformed_prior_logdensity
from .geometry import HullVertexSet, PivotFrame, barycentric, compute_hull
from .pyramid import PyramidTree, QuantileGrid, as_grid, build_oblique_tree, default_concentration


@dataclass(frozen=True)
class Hyperpriors:
    """Priors on the centering parameters of every pivot.

    ``mu_var`` is a variance; the scale prior is Gamma(shape, rate); the GPD
    shape has a Normal prior truncated to ``(xi_lower, xi_upper)``.
    """

    mu_mean: float = 0.0
    mu_var: float = 20.0
    sigma_shape: float = 0.001
    sigma_rate: float = 0.001
    xi_mean: float = 0.0
    xi_sd: float = 1.0
    xi_lower: float = -0.5
    xi_upper: float = 1.0

    def __post_init__(self):
        a, b = self.sigma_shape, self.sigma_rate
        lo = (self.xi_lower - self.xi_mean) / self.xi_sd
        hi = (self.xi_upper - self.xi_mean) / self.xi_sd
        consts = (
            -0.5 * math.log(2 * math.pi * self.mu_var),
            a * math.log(b) - float(gammaln(a)),
            -math.log(self.xi_sd) - 0.5 * math.log(2 * math.pi) - float(Normal().log_mass(lo, hi)),
        )
        object.__setattr__(self, "_consts", consts)
        packed = np.array([
            self.mu_mean, self.mu_var, consts[0], a, b, consts[1],
            self.xi_mean, self.xi_sd, self.xi_lower, self.xi_upper, consts[2],
        ])
        packed.setflags(write=False)
        object.__setattr__(self, "packed", packed)

    def log_pivot(self, mu: float, sigma: float, xi: float, gpd: bool) -> float:
        """Scalar log prior of one pivot's centering parameters."""
        if not sigma > 0:
            return -math.inf
        c_mu, c_sigma, c_xi = self._consts
        out = c_sigma + (self.sigma_shape - 1) * math.log(sigma) - self.sigma_rate * sigma
        if gpd:
            if not self.xi_lower < xi < self.xi_upper:
                return -math.inf
            z = (xi - self.xi_mean) / self.xi_sd
            return out + c_xi - 0.5 * z * z
        d = mu - self.mu_mean
        return out + c_mu - 0.5 * d * d / self.mu_var

    def log_mu(self, mu) -> float:
        mu = np.asarray(mu, dtype=float)
        d = mu - self.mu_mean
        return float(np.sum(-0.5 * d * d / self.mu_var - 0.5 * math.log(2 * math.pi * self.mu_var)))

    def log_sigma(self, sigma) -> float:
        sigma = np.asarray(sigma, dtype=float)
        if np.any(sigma <= 0):
            return -np.inf
        a, b = self.sigma_shape, self.sigma_rate
        return float(np.sum(a * math.log(b) - gammaln(a) + (a - 1) * np.log(sigma) - b * sigma))

    def log_xi(self, xi) -> float:
        xi = np.asarray(xi, dtype=float)
        if np.any((xi <= self.xi_lower) | (xi >= self.xi_upper)):
            return -np.inf
        s = self.xi_sd
        lo, hi = (self.xi_lower - self.xi_mean) / s, (self.xi_upper - self.xi_mean) / s
        log_z = float(Normal().log_mass(lo, hi))
        z = (xi - self.xi_mean) / s
        return float(np.sum(-0.5 * z * z - math.log(s) - 0.5 * math.log(2 * math.pi) - log_z))


@dataclass
class RegressionState:
    """Pivot quantiles ``Q`` (K, T) and per-pivot centering parameters."""

    Q: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    xi: np.ndarray | None = None

    def __post_init__(self):
        self.Q = np.array(self.Q, dtype=float, ndmin=2)
        self.mu = np.array(self.mu, dtype=float, ndmin=1)
        self.sigma = np.array(self.sigma, dtype=float, ndmin=1)
        if self.xi is not None:
            self.xi = np.array(self.xi, dtype=float, ndmin=1)
        K = self.Q.shape[0]
        if self.mu.shape != (K,) or self.sigma.shape != (K,):
            raise ValueError("mu and sigma need one entry per pivot")

    @property
    def n_pivots(self) -> int:
        return self.Q.shape[0]

    @property
    def xi_or_zero(self) -> np.ndarray:
        return np.zeros_like(self.mu) if self.xi is None else self.xi

    def copy(self) -> "RegressionState":
        return RegressionState(
            self.Q.copy(), self.mu.copy(), self.sigma.copy(), None if self.xi is None else self.xi.copy()
        )


@dataclass(eq=False)
class Dataset:
    """Responses, raw covariates and the hull / pivot frame derived from them."""

    y: np.ndarray
    X: np.ndarray
    hull: HullVertexSet

    @classmethod
    def from_arrays(cls, y, X=None, frame: PivotFrame | None = None, hull: HullVertexSet | None = None):
        y = np.asarray(y, dtype=float).reshape(-1)
        if X is None:
            X = np.zeros((len(y), 0))
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if len(X) != len(y):
            raise ValueError("y and X have different numbers of rows")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise ValueError("responses and covariates must be finite")
        if hull is None and X.shape[1] == 0:
            hull = HullVertexSet(PivotFrame.identity(0), np.zeros((1, 0)), np.ones(1, dtype=bool), "none")
        if hull is None:
            if len(y) == 0:
                raise ValueError("an empty dataset needs an explicit hull")
            hull = compute_hull(X, frame)
        return cls(y, X, hull)

    @property
    def frame(self) -> PivotFrame:
        return self.hull.frame

    @property
    def N(self) -> int:
        return len(self.y)

    @property
    def P(self) -> int:
        return self.X.shape[1]

    @property
    def Z(self) -> np.ndarray:
        """Covariates in pivot coordinates."""
        return self.frame.to_pivot(self.X)


class LinearBasis:
    """Pivots at the origin and unit vectors of the pivot frame."""

    def __init__(self, hull: HullVertexSet):
        self.hull = hull
        self.frame = hull.frame
        self.P = hull.frame.dim
        self.n_pivots = self.P + 1
        self.vertex_weights = np.ascontiguousarray(hull.weights)
        self.extra_weights = np.ascontiguousarray(hull.extra_weights)

    def weights(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.P == 0:
            return np.ones((len(np.atleast_1d(X)) if X.ndim else 1, 1))
        return barycentric(self.frame.to_pivot(X.reshape(-1, self.P)))

    @property
    def coefficient_names(self) -> list[str]:
        return [f"beta{p}" for p in range(self.n_pivots)]

    def coefficients(self, Q) -> np.ndarray:
        if self.P == 0:
            return np.asarray(Q, dtype=float)
        return self.frame.raw_coefficients(Q)


class SplineBasis:
    """One pyramid per knot; piecewise-linear interpolation between knots."""

    def __init__(self, knots):
        knots = np.asarray(knots, dtype=float)
        if knots.ndim != 1 or len(knots) < 2 or np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be a strictly increasing sequence of length >= 2")
        self.knots = knots
        self.n_pivots = len(knots)
        self.vertex_weights = np.eye(len(knots))
        self.extra_weights = np.zeros((0, len(knots)))

    def weights(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        k = self.knots
        if np.any((x < k[0]) | (x > k[-1])):
            raise ValueError(f"x outside the knot span [{k[0]}, {k[-1]}]")
        j = np.clip(np.searchsorted(k, x, side="right") - 1, 0, len(k) - 2)
        w = (x - k[j]) / (k[j + 1] - k[j])
        W = np.zeros((len(x), len(k)))
        rows = np.arange(len(x))
        W[rows, j] = 1.0 - w
        W[rows, j + 1] = w
        return W

    @property
    def coefficient_names(self) -> list[str]:
        return [f"knot{k}" for k in range(self.n_pivots)]

    def coefficients(self, Q) -> np.ndarray:
        return np.asarray(Q, dtype=float)


def equally_spaced_knots(x, count: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if count < 2:
        raise ValueError("need at least two knots")
    return np.linspace(x.min(), x.max(), count)


@dataclass
class SplineModel:
    """Knot locations with one quantile vector per knot."""

    knots: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        self.basis = SplineBasis(self.knots)
        self.Q = np.asarray(self.Q, dtype=float)
        if self.Q.shape[0] != len(self.knots):
            raise ValueError("need one quantile vector per knot")


def spline_quantiles(model: SplineModel, x) -> np.ndarray:
    """Interpolated quantile vectors at scalar(s) ``x``; shape (T,) or (n, T)."""
    out = model.basis.weights(x) @ model.Q
    return out[0] if np.ndim(x) == 0 else out


@dataclass(eq=False)
class PQRModel:
    """Everything needed to evaluate the posterior of a regression state."""

    grid: QuantileGrid
    tree: PyramidTree
    family: str
    basis: LinearBasis | SplineBasis
    y: np.ndarray
    W: np.ndarray
    hyper: Hyperpriors = field(default_factory=Hyperpriors)
    threshold: float | None = None
    X: np.ndarray | None = None

    def __post_init__(self):
        if self.family not in K.FAMILY_CODES:
            raise ValueError(f"unknown centering family {self.family!r}")
        if self.family == "gpd" and self.threshold is None:
            raise ValueError("GPD centering needs a threshold")
        self.code = K.FAMILY_CODES[self.family]
        self.log_masses = np.log(self.grid.masses)
        self.W = np.ascontiguousarray(self.W, dtype=float)
        self.y = np.ascontiguousarray(self.y, dtype=float)

    @classmethod
    def linear(cls, data: Dataset, taus, centering: str = "normal", hyper: Hyperpriors | None = None,
               threshold: float | None = None, concentration=default_concentration) -> "PQRModel":
        grid = as_grid(taus)
        basis = LinearBasis(data.hull)
        return cls(grid, build_oblique_tree(grid, concentration), centering, basis, data.y,
                   basis.weights(data.X), hyper or Hyperpriors(), threshold, data.X)

    @classmethod
    def spline(cls, x, y, knots, taus, centering: str = "normal", hyper: Hyperpriors | None = None,
               threshold: float | None = None, concentration=default_concentration) -> "PQRModel":
        grid = as_grid(taus)
        basis = SplineBasis(knots)
        x = np.asarray(x, dtype=float).reshape(-1)
        return cls(grid, build_oblique_tree(grid, concentration), centering, basis,
                   np.asarray(y, dtype=float), basis.weights(x), hyper or Hyperpriors(), threshold,
                   x[:, None])

    @property
    def n_pivots(self) -> int:
        return self.basis.n_pivots

    @property
    def T(self) -> int:
        return len(self.grid)

    @property
    def N(self) -> int:
        return len(self.y)

    # -- posterior pieces ------------------------------------------------------

    def feasible(self, state: RegressionState) -> bool:
        return bool(K.vertices_feasible(self.basis.vertex_weights, state.Q, state.mu, state.sigma,
                                        state.xi_or_zero, self.code))

    def loglik(self, state: RegressionState) -> float:
        return float(K.loglik(self.W, self.y, state.Q, state.mu, state.sigma, state.xi_or_zero,
                              self.log_masses, self.code))

    def log_prior_pivot(self, state: RegressionState, k: int) -> float:
        xi = 0.0 if state.xi is None else state.xi[k]
        return float(K.pyramid_logprior(state.Q[k], state.mu[k], state.sigma[k], xi, self.code,
                                        *self.tree.arrays))

    def log_hyper(self, state: RegressionState) -> float:
        out = self.hyper.log_sigma(state.sigma)
        if self.family == "gpd":
            out += self.hyper.log_xi(state.xi_or_zero)
        else:
            out += self.hyper.log_mu(state.mu)
        return out

    def log_posterior(self, state: RegressionState) -> float:
        """Unnormalised log posterior; ``-inf`` for any constraint violation."""
        if self.family == "gpd" and not np.all(state.mu == self.threshold):
            return -np.inf
        if not self.feasible(state):
            return -np.inf
        lh = self.log_hyper(state)
        if lh == -np.inf:
            return -np.inf
        ll = self.loglik(state)
        if ll == -np.inf:
            return -np.inf
        return ll + lh + sum(self.log_prior_pivot(state, k) for k in range(self.n_pivots))

    # -- reference (numpy) evaluation ------------------------------------------

    def centering_at(self, state: RegressionState, x) -> CenteringDistribution | None:
        w = self.basis.weights(x)[0]
        return _centering(self.family, w @ state.mu, w @ state.sigma, w @ state.xi_or_zero)

    def quantiles_at(self, state: RegressionState, x) -> np.ndarray:
        return self.basis.weights(x)[0] @ state.Q

    def loglik_single(self, state: RegressionState, x, y: float) -> float:
        return _segment_logdensity(self.grid, self.quantiles_at(state, x), self.centering_at(state, x), y)

    def conditional_cdf(self, state: RegressionState, x, y: float) -> float:
        return _segment_cdf(self.grid, self.quantiles_at(state, x), self.centering_at(state, x), y)

    def pivot_prior(self, state: RegressionState, k: int) -> float:
        xi = 0.0 if state.xi is None else state.xi[k]
        dist = _centering(self.family, state.mu[k], state.sigma[k], xi)
        if dist is None:
            return -np.inf
        return transformed_prior_logdensity(self.tree, dist, state.Q[k])


def _centering(family, mu, sigma, xi):
    if not sigma > 0:
        return None
    if family == "normal":
        return Normal(mu, sigma)
    if family == "gpd":
        return GPD(mu, sigma, xi)
    return Uniform(mu, sigma)


def _segment(grid: QuantileGrid, q, y):
    T = len(q)
    seg = int(np.sum(q < y))
    lo = -np.inf if seg == 0 else q[seg - 1]
    hi = np.inf if seg == T else q[seg]
    return seg, lo, hi


def _valid_quantiles(q, dist) -> bool:
    if dist is None or not np.all(np.diff(q) > 0):
        return False
    lo, hi = dist.support
    return bool(q[0] > lo and q[-1] < hi)


def _segment_logdensity(grid: QuantileGrid, q, dist, y) -> float:
    if not _valid_quantiles(q, dist):
        return -np.inf
    seg, lo, hi = _segment(grid, q, y)
    lf = float(dist.logpdf(y))
    lm = float(dist.log_mass(lo, hi))
    if lf == -np.inf or lm == -np.inf:
        return -np.inf
    return float(math.log(grid.masses[seg]) + lf - lm)


def _segment_cdf(grid: QuantileGrid, q, dist, y) -> float:
    if not _valid_quantiles(q, dist):
        raise ValueError("conditional quantiles are not valid at this point")
    seg, lo, hi = _segment(grid, q, y)
    below = 0.0 if seg == 0 else grid.levels[seg - 1]
    frac = math.exp(float(dist.log_mass(lo, y)) - float(dist.log_mass(lo, hi)))
    return below + grid.masses[seg] * frac


# -- free-function API ---------------------------------------------------------------

def conditional_quantiles(state: RegressionState, x) -> np.ndarray:
    """Quantile planes at a point given in pivot coordinates."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    w = barycentric(x)[0] if state.n_pivots > 1 else np.ones(1)
    return w @ state.Q


def centering_plane(state: RegressionState, x) -> tuple[float, float]:
    """Interpolated centering (location, scale) at a point in pivot coordinates."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    w = barycentric(x)[0] if state.n_pivots > 1 else np.ones(1)
    return float(w @ state.mu), float(w @ state.sigma)


def coefficients(state: RegressionState, t: int, frame: PivotFrame | None = None) -> np.ndarray:
    """``(beta_0, ..., beta_P)`` at level index ``t`` in raw covariate units."""
    if frame is None:
        frame = PivotFrame.identity(state.n_pivots - 1)
    if frame.dim == 0:
        return state.Q[:, t].copy()
    return frame.raw_coefficients(state.Q)[:, t]


def loglik_single(state: RegressionState, x, y: float, grid, family: str = "normal") -> float:
    """Log conditional density of ``y`` at pivot-coordinate point ``x``."""
    grid = as_grid(grid)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    w = barycentric(x)[0] if state.n_pivots > 1 else np.ones(1)
    dist = _centering(family, w @ state.mu, w @ state.sigma, w @ state.xi_or_zero)
    return _segment_logdensity(grid, w @ state.Q, dist, y)


def log_posterior(state: RegressionState, model: PQRModel) -> float:
    return model.log_posterior(state)


__all__ = [
    "Hyperpriors", "RegressionState", "Dataset", "LinearBasis", "SplineBasis", "SplineModel",
    "PQRModel", "conditional_quantiles", "centering_plane", "coefficients", "loglik_single",
    "log_posterior", "spline_quantiles", "equally_spaced_knots", "log_ndtr",
]
