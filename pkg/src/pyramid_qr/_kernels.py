"""Compiled scalar kernels for the posterior hot path.

These mirror the vectorised numpy code in :mod:`centering` and :mod:`model`
and are cross-checked against it in the test-suite.  Family codes:
0 = normal, 1 = generalized Pareto, 2 = uniform.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

NORMAL = 0
GPD = 1
UNIFORM = 2

FAMILY_CODES = {"normal": NORMAL, "gpd": GPD, "uniform": UNIFORM}

_INV_SQRT2 = 0.7071067811865476
_LOG_SQRT_2PI = 0.9189385332046727
_XI_EPS = 1e-8
_INF = np.inf


@njit(cache=True)
def log_ndtr(z):
    if z > 0.0:
        return math.log1p(-0.5 * math.erfc(z * _INV_SQRT2))
    if z > -30.0:
        return math.log(0.5 * math.erfc(-z * _INV_SQRT2))
    if z == -_INF:
        return -_INF
    # Asymptotic Mills-ratio expansion; relative error below 1e-14 here.
    r = 1.0 / (z * z)
    s = 1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r * (1.0 - 9.0 * r))))
    return -0.5 * z * z - math.log(-z) - _LOG_SQRT_2PI + math.log(s)


@njit(cache=True)
def _log_diff_exp(la, lb):
    # log(exp(lb) - exp(la)) for la <= lb
    if lb == -_INF or la >= lb:
        return -_INF
    return lb + math.log(-math.expm1(la - lb))


@njit(cache=True)
def support(family, mu, sigma, xi):
    if family == NORMAL:
        return -_INF, _INF
    if family == GPD:
        if xi < 0.0:
            return mu, mu - sigma / xi
        return mu, _INF
    return mu, mu + sigma


@njit(cache=True)
def _gpd_log_sf(y, mu, sigma, xi):
    z = (y - mu) / sigma
    if z <= 0.0:
        return 0.0
    if z == _INF:
        return -_INF
    if abs(xi) < _XI_EPS:
        return -z
    arg = xi * z
    if arg <= -1.0:
        return -_INF
    return -math.log1p(arg) / xi


@njit(cache=True)
def log_mass(family, a, b, mu, sigma, xi):
    """log P(a < Y <= b) under the centering distribution."""
    if family == NORMAL:
        za = (a - mu) / sigma
        zb = (b - mu) / sigma
        h = zb - za
        if 0.0 < h < 1e-3 and math.isfinite(h):
            # Midpoint rule with its leading correction; relative error O(h^4).
            mid = 0.5 * (za + zb)
            return (-0.5 * mid * mid - _LOG_SQRT_2PI + math.log(h)
                    + math.log1p((mid * mid - 1.0) * h * h / 24.0))
        if za > 0.0:
            za, zb = -zb, -za
        if za > -30.0:
            # Both cdf values are representable; one log instead of three.
            d = math.erfc(-zb * _INV_SQRT2) - math.erfc(-za * _INV_SQRT2)
            if d > 1e-3 * math.erfc(-zb * _INV_SQRT2):
                return math.log(0.5 * d)
        return _log_diff_exp(log_ndtr(za), log_ndtr(zb))
    if family == GPD:
        return _log_diff_exp(_gpd_log_sf(b, mu, sigma, xi), _gpd_log_sf(a, mu, sigma, xi))
    lo = max(a, mu)
    hi = min(b, mu + sigma)
    if hi <= lo:
        return -_INF
    return math.log((hi - lo) / sigma)


@njit(cache=True)
def logpdf(family, y, mu, sigma, xi):
    if family == NORMAL:
        z = (y - mu) / sigma
        return -0.5 * z * z - math.log(sigma) - _LOG_SQRT_2PI
    if family == GPD:
        z = (y - mu) / sigma
        if z < 0.0:
            return -_INF
        if abs(xi) < _XI_EPS:
            return -z - math.log(sigma)
        arg = xi * z
        if arg <= -1.0:
            return -_INF
        return -(1.0 / xi + 1.0) * math.log1p(arg) - math.log(sigma)
    if y < mu or y > mu + sigma:
        return -_INF
    return -math.log(sigma)


@njit(cache=True)
def loglik(W, y, Q, mu, sigma, xi, log_masses, family):
    """Sum of piecewise-centering log-densities over observations.

    ``W`` holds the interpolation weights of each observation on the pivots;
    quantiles, location, scale and shape at an observation are ``W @ Q``,
    ``W @ mu`` and so on.
    """
    N, K = W.shape
    T = Q.shape[1]
    q = np.empty(T)
    total = 0.0
    for i in range(N):
        m = 0.0
        s = 0.0
        x = 0.0
        for k in range(K):
            w = W[i, k]
            m += w * mu[k]
            s += w * sigma[k]
            x += w * xi[k]
        if not s > 0.0:
            return -_INF
        yi = y[i]
        seg = 0
        for t in range(T):
            v = 0.0
            for k in range(K):
                v += W[i, k] * Q[k, t]
            q[t] = v
            if t > 0 and not v > q[t - 1]:
                return -_INF
            if v < yi:
                seg = t + 1
        if family != NORMAL:
            lo, hi = support(family, m, s, x)
            if not (q[0] > lo and q[T - 1] < hi):
                return -_INF
        a = -_INF if seg == 0 else q[seg - 1]
        b = _INF if seg == T else q[seg]
        lf = logpdf(family, yi, m, s, x)
        if lf == -_INF:
            return -_INF
        lm = log_mass(family, a, b, m, s, x)
        if lm == -_INF:
            return -_INF
        total += log_masses[seg] + lf - lm
    return total


@njit(cache=True)
def pyramid_logprior(qk, mu, sigma, xi, family, node, left, right, alpha, beta, lbeta):
    """Centred pyramid log-density of one pivot's quantile vector."""
    T = qk.shape[0]
    padded = np.empty(T + 2)
    padded[0] = -_INF
    padded[T + 1] = _INF
    for t in range(T):
        padded[t + 1] = qk[t]
        if t > 0 and not qk[t] > qk[t - 1]:
            return -_INF
    total = 0.0
    for j in range(node.shape[0]):
        ql = padded[left[j]]
        qt = padded[node[j]]
        qr = padded[right[j]]
        lf = logpdf(family, qt, mu, sigma, xi)
        if lf == -_INF:
            return -_INF
        lt = log_mass(family, ql, qr, mu, sigma, xi)
        lv = log_mass(family, ql, qt, mu, sigma, xi) - lt
        l1v = log_mass(family, qt, qr, mu, sigma, xi) - lt
        if not (math.isfinite(lv) and math.isfinite(l1v)):
            return -_INF
        total += (alpha[j] - 1.0) * lv + (beta[j] - 1.0) * l1v - lbeta[j] + lf - lt
    return total


@njit(cache=True)
def vertices_feasible(L, Q, mu, sigma, xi, family):
    """Positive scale, ordered quantiles and support at every hull vertex."""
    E, K = L.shape
    T = Q.shape[1]
    for e in range(E):
        m = 0.0
        s = 0.0
        x = 0.0
        for k in range(K):
            w = L[e, k]
            m += w * mu[k]
            s += w * sigma[k]
            x += w * xi[k]
        if not s > 0.0:
            return False
        prev = -_INF
        first = 0.0
        for t in range(T):
            v = 0.0
            for k in range(K):
                v += L[e, k] * Q[k, t]
            if not v > prev:
                return False
            if t == 0:
                first = v
            prev = v
        if family != NORMAL:
            lo, hi = support(family, m, s, x)
            if not (first > lo and prev < hi):
                return False
    return True


@njit(cache=True)
def coordinate_bounds(L, Q, k, t):
    """Exact interval for ``Q[k, t]`` keeping every constraint vertex ordered.

    ``L`` holds barycentric weights of the non-pivot vertices.  The pivot's
    own ordering window is intersected in.
    """
    E, K = L.shape
    T = Q.shape[1]
    lo = Q[k, t - 1] if t > 0 else -_INF
    hi = Q[k, t + 1] if t < T - 1 else _INF
    for e in range(E):
        lam = L[e, k]
        if lam == 0.0:
            continue
        rest = 0.0
        below = 0.0
        above = 0.0
        for j in range(K):
            w = L[e, j]
            if j != k:
                rest += w * Q[j, t]
            if t > 0:
                below += w * Q[j, t - 1]
            if t < T - 1:
                above += w * Q[j, t + 1]
        a = (below - rest) / lam if t > 0 else -_INF * lam
        b = (above - rest) / lam if t < T - 1 else _INF * lam
        if lam < 0.0:
            a, b = b, a
        if a > lo:
            lo = a
        if b < hi:
            hi = b
    return lo, hi


@njit(cache=True)
def strict_interval(lo, hi):
    """Shrink a finite interval by 1e-12 of its length to avoid exact ties."""
    if math.isfinite(lo) and math.isfinite(hi):
        d = 1e-12 * (hi - lo)
        return lo + d, hi - d
    return lo, hi


@njit(cache=True)
def log_hyper(mu, sigma, xi, gpd, h):
    """Pivot hyperprior; ``h`` packs the constants built by ``Hyperpriors``.

    Layout: mu_mean, mu_var, c_mu, sigma_shape, sigma_rate, c_sigma,
    xi_mean, xi_sd, xi_lower, xi_upper, c_xi.
    """
    if not sigma > 0.0:
        return -_INF
    out = h[5] + (h[3] - 1.0) * math.log(sigma) - h[4] * sigma
    if gpd:
        if not (h[8] < xi < h[9]):
            return -_INF
        z = (xi - h[6]) / h[7]
        return out + h[10] - 0.5 * z * z
    d = mu - h[0]
    return out + h[2] - 0.5 * d * d / h[1]


@njit(cache=True)
def _state_loglik(W, y, Q, mu, sigma, xi, log_masses, family, L):
    if not vertices_feasible(L, Q, mu, sigma, xi, family):
        return -_INF
    if y.shape[0] == 0:
        return 0.0
    return loglik(W, y, Q, mu, sigma, xi, log_masses, family)


@njit(cache=True)
def _try_centering(k, new_mu, new_sigma, new_xi, log_jac, u, ll, Q, mu, sigma, xi, prior,
                   W, y, log_masses, family, L, node, left, right, alpha, beta, lbeta, h, gpd):
    h_new = log_hyper(new_mu, new_sigma, new_xi, gpd, h)
    if h_new == -_INF:
        return False, ll
    h_old = log_hyper(mu[k], sigma[k], xi[k], gpd, h)
    om, os, ox = mu[k], sigma[k], xi[k]
    mu[k] = new_mu
    sigma[k] = new_sigma
    xi[k] = new_xi
    ll_new = _state_loglik(W, y, Q, mu, sigma, xi, log_masses, family, L)
    pr = -_INF
    if ll_new > -_INF:
        pr = pyramid_logprior(Q[k], new_mu, new_sigma, new_xi, family, node, left, right, alpha, beta, lbeta)
    if pr > -_INF:
        log_r = ll_new + pr + h_new - ll - prior[k] - h_old + log_jac
        if log_r >= 0.0 or math.log(u) < log_r:
            prior[k] = pr
            return True, ll_new
    mu[k] = om
    sigma[k] = os
    xi[k] = ox
    return False, ll


@njit(cache=True)
def coordinate_sweep(Q, mu, sigma, xi, prior, ll, W, y, log_masses, family, L, Lx,
                     node, left, right, alpha, beta, lbeta, h, gpd, update_centering,
                     log_q, log_c, Uq, Zc, Uc, acc_q, acc_c):
    """One systematic scan; see ``sampler._Chain`` for the reference version.

    Per pivot: every quantile level in turn (windowed uniform proposal inside
    the non-crossing interval), then location, log-scale and shape.  The
    random numbers are supplied so the scan is reproducible from numpy's
    generator.  Returns the updated log-likelihood.
    """
    Kp, T = Q.shape
    for k in range(Kp):
        for t in range(T):
            w = math.exp(log_q[k, t])
            lo, hi = coordinate_bounds(Lx, Q, k, t)
            lo, hi = strict_interval(lo, hi)
            cur = Q[k, t]
            a = max(lo, cur - w)
            b = min(hi, cur + w)
            prop = a + (b - a) * Uq[k, t, 0]
            if not (lo < prop < hi) or prop == cur:
                continue
            a2 = max(lo, prop - w)
            b2 = min(hi, prop + w)
            Q[k, t] = prop
            ll_new = _state_loglik(W, y, Q, mu, sigma, xi, log_masses, family, L)
            pr = -_INF
            if ll_new > -_INF:
                pr = pyramid_logprior(Q[k], mu[k], sigma[k], xi[k], family, node, left, right,
                                      alpha, beta, lbeta)
            if pr > -_INF:
                log_r = ll_new + pr - ll - prior[k] + math.log((b - a) / (b2 - a2))
                if log_r >= 0.0 or math.log(Uq[k, t, 1]) < log_r:
                    ll = ll_new
                    prior[k] = pr
                    acc_q[k, t] += 1.0
                    continue
            Q[k, t] = cur
        if not update_centering:
            continue
        if not gpd:
            ok, ll = _try_centering(k, mu[k] + math.exp(log_c[k, 0]) * Zc[k, 0], sigma[k], xi[k], 0.0,
                                    Uc[k, 0], ll, Q, mu, sigma, xi, prior, W, y, log_masses, family, L,
                                    node, left, right, alpha, beta, lbeta, h, gpd)
            acc_c[k, 0] += ok
        step = math.exp(log_c[k, 1]) * Zc[k, 1]
        ok, ll = _try_centering(k, mu[k], sigma[k] * math.exp(step), xi[k], step,
                                Uc[k, 1], ll, Q, mu, sigma, xi, prior, W, y, log_masses, family, L,
                                node, left, right, alpha, beta, lbeta, h, gpd)
        acc_c[k, 1] += ok
        if gpd:
            ok, ll = _try_centering(k, mu[k], sigma[k], xi[k] + math.exp(log_c[k, 2]) * Zc[k, 2], 0.0,
                                    Uc[k, 2], ll, Q, mu, sigma, xi, prior, W, y, log_masses, family, L,
                                    node, left, right, alpha, beta, lbeta, h, gpd)
            acc_c[k, 2] += ok
    return ll
