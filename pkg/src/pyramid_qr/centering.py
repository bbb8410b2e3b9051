"""Centering distributions and the centred pyramid prior.

A unit pyramid ``Q_unif`` is moved onto the response scale by a quantile
function ``Q*``; the prior median of every random quantile is then the
corresponding quantile of the centering distribution.
"""
from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

from .pyramid import PyramidTree

GPD_XI_EPS = 1e-8
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _check_prob(tau):
    tau = np.asarray(tau, dtype=float)
    if np.any(~((tau > 0.0) & (tau < 1.0))):
        raise ValueError("probability levels must lie strictly inside (0, 1)")
    return tau


def _log_diff_exp(la, lb):
    """log(exp(lb) - exp(la)) for la <= lb; -inf where equal."""
    with np.errstate(divide="ignore", invalid="ignore"):
        out = lb + np.log(-np.expm1(la - lb))
    return np.where(np.isneginf(lb) | (la >= lb), -np.inf, out)


class CenteringDistribution(ABC):
    """Quantile / cdf / density triple used to centre the pyramid."""

    kind: str = ""

    @property
    @abstractmethod
    def support(self) -> tuple[float, float]: ...

    @abstractmethod
    def _quantile(self, tau): ...

    @abstractmethod
    def cdf(self, y): ...

    @abstractmethod
    def logpdf(self, y): ...

    @abstractmethod
    def log_mass(self, a, b):
        """log P(a < Y <= b), stable in both tails."""

    def quantile(self, tau):
        return self._quantile(_check_prob(tau))

    def density(self, y):
        return np.exp(self.logpdf(y))

    def params(self) -> dict:
        return {}


@dataclass(frozen=True)
class Uniform(CenteringDistribution):
    loc: float = 0.0
    scale: float = 1.0
    kind = "uniform"

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    @property
    def support(self):
        return (self.loc, self.loc + self.scale)

    def _quantile(self, tau):
        return self.loc + self.scale * tau

    def cdf(self, y):
        return np.clip((np.asarray(y, dtype=float) - self.loc) / self.scale, 0.0, 1.0)

    def logpdf(self, y):
        y = np.asarray(y, dtype=float)
        lo, hi = self.support
        return np.where((y >= lo) & (y <= hi), -math.log(self.scale), -np.inf)

    def log_mass(self, a, b):
        with np.errstate(divide="ignore"):
            return np.log(np.maximum(self.cdf(b) - self.cdf(a), 0.0))

    def params(self):
        return {"mu": self.loc, "sigma": self.scale}


@dataclass(frozen=True)
class Normal(CenteringDistribution):
    mu: float = 0.0
    sigma: float = 1.0
    kind = "normal"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def support(self):
        return (-np.inf, np.inf)

    def _z(self, y):
        return (np.asarray(y, dtype=float) - self.mu) / self.sigma

    def _quantile(self, tau):
        return self.mu + self.sigma * ndtri(tau)

    def cdf(self, y):
        return ndtr(self._z(y))

    def logpdf(self, y):
        z = self._z(y)
        return -0.5 * z * z - math.log(self.sigma) - _LOG_SQRT_2PI

    def log_mass(self, a, b):
        za, zb = np.broadcast_arrays(self._z(a), self._z(b))
        # Work in the lower tail so that both log-cdfs keep full precision.
        flip = za > 0
        lo = np.where(flip, -zb, za)
        hi = np.where(flip, -za, zb)
        out = _log_diff_exp(log_ndtr(lo), log_ndtr(hi))
        # Narrow intervals: the cdf difference cancels, integrate directly.
        with np.errstate(invalid="ignore", divide="ignore"):
            h = zb - za
            narrow = (h > 0) & (h < 1e-3)
            mid = 0.5 * (za + zb)
            series = -0.5 * mid**2 - _LOG_SQRT_2PI + np.log(h) + np.log1p((mid**2 - 1.0) * h**2 / 24.0)
        return np.where(narrow, series, out)

    def params(self):
        return {"mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True)
class GPD(CenteringDistribution):
    """Generalized Pareto with threshold ``mu``, scale ``sigma`` and shape ``xi``."""

    mu: float = 0.0
    sigma: float = 1.0
    xi: float = 0.0
    kind = "gpd"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def support(self):
        if self.xi < 0:
            return (self.mu, self.mu - self.sigma / self.xi)
        return (self.mu, np.inf)

    def _quantile(self, tau):
        log_sf = np.log1p(-tau)
        if abs(self.xi) < GPD_XI_EPS:
            return self.mu - self.sigma * log_sf
        return self.mu + self.sigma * np.expm1(-self.xi * log_sf) / self.xi

    def log_sf(self, y):
        """log P(Y > y); 0 below the threshold, -inf past the upper endpoint."""
        z = np.maximum((np.asarray(y, dtype=float) - self.mu) / self.sigma, 0.0)
        if abs(self.xi) < GPD_XI_EPS:
            return -z
        arg = self.xi * z
        with np.errstate(divide="ignore", invalid="ignore"):
            out = -np.log1p(arg) / self.xi
        return np.where(arg <= -1.0, -np.inf, out)

    def cdf(self, y):
        return -np.expm1(self.log_sf(y))

    def logpdf(self, y):
        y = np.asarray(y, dtype=float)
        z = (y - self.mu) / self.sigma
        lo, hi = self.support
        inside = (y >= lo) & (y < hi)
        zc = np.where(inside, z, 0.0)
        if abs(self.xi) < GPD_XI_EPS:
            out = -zc
        else:
            out = -(1.0 / self.xi + 1.0) * np.log1p(self.xi * zc)
        return np.where(inside, out - math.log(self.sigma), -np.inf)

    def log_mass(self, a, b):
        return _log_diff_exp(self.log_sf(b), self.log_sf(a))

    def params(self):
        return {"mu": self.mu, "sigma": self.sigma, "xi": self.xi}


CENTERINGS = {"normal": Normal, "gpd": GPD, "uniform": Uniform}


def make_centering(kind: str, mu: float = 0.0, sigma: float = 1.0, xi: float = 0.0):
    if kind == "normal":
        return Normal(mu, sigma)
    if kind == "gpd":
        return GPD(mu, sigma, xi)
    if kind == "uniform":
        return Uniform(mu, sigma)
    raise ValueError(f"unknown centering distribution {kind!r}")


def quantile(dist: CenteringDistribution, tau):
    return dist.quantile(tau)


def cdf(dist: CenteringDistribution, y):
    return dist.cdf(y)


def density(dist: CenteringDistribution, y):
    return dist.density(y)


def transform_unit(dist: CenteringDistribution, q) -> np.ndarray:
    """Push a unit quantile vector through the centering quantile function."""
    return dist.quantile(np.asarray(q, dtype=float))


def transformed_prior_logdensity(tree: PyramidTree, dist: CenteringDistribution, Q) -> float:
    """Log-density of pivot quantiles under the pyramid centred on ``dist``.

    Each node contributes ``g(V) * f(Q_t) / (F(Q_R) - F(Q_L))`` where ``V`` is
    the centering-cdf split of ``Q_t`` between its ancestors.  The cdf
    differences are taken in log space, so the result stays finite in the
    far tails.
    """
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (len(tree),):
        raise ValueError(f"expected {len(tree)} quantiles, got shape {Q.shape}")
    if not np.all(np.diff(Q) > 0):
        return -np.inf
    logf = dist.logpdf(Q)
    if not np.all(np.isfinite(logf)):
        return -np.inf
    node, left, right, alpha, beta, lbeta = tree.arrays
    padded = np.concatenate([[-np.inf], Q, [np.inf]])
    ql, qt, qr = padded[left], padded[node], padded[right]
    total = dist.log_mass(ql, qr)
    log_v = dist.log_mass(ql, qt) - total
    log_1mv = dist.log_mass(qt, qr) - total
    if not (np.all(np.isfinite(log_v)) and np.all(np.isfinite(log_1mv))):
        return -np.inf
    g = (alpha - 1.0) * log_v + (beta - 1.0) * log_1mv - lbeta
    return float(np.sum(g + logf[node - 1] - total))


def gpd_moment_fit(excess) -> tuple[float, float]:
    """Method-of-moments (sigma, xi) for threshold exceedances."""
    excess = np.asarray(excess, dtype=float)
    m = float(np.mean(excess))
    v = float(np.var(excess))
    if not (m > 0 and v > 0):
        return max(m, 1.0), 0.0
    r = m * m / v
    return 0.5 * m * (r + 1.0), 0.5 * (1.0 - r)


__all__ = [
    "CenteringDistribution", "Normal", "GPD", "Uniform", "make_centering", "quantile",
    "cdf", "density", "transform_unit", "transformed_prior_logdensity", "gpd_moment_fit",
]
