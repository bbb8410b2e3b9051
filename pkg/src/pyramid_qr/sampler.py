"""Metropolis-within-Gibbs sampling of pivot quantiles and centering parameters.

Quantile coordinates are updated one at a time with a uniform proposal on the
exact interval that keeps every hull vertex ordered (intersected with a local
window so that the outermost levels, which are unbounded on one side, still
get a proper proposal).  Centering location and log-scale use Gaussian random
walks.  Proposal scales adapt during burn-in only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .centering import gpd_moment_fit
from .model import PQRModel, RegressionState, _centering


class InitializationError(RuntimeError):
    """No feasible starting state could be constructed."""


@dataclass(frozen=True)
class McmcConfig:
    iterations: int = 110_000
    burn_in: int = 10_000
    thin: int = 1
    seed: int = 0
    mode: str = "auto"  # "auto", "coordinate" or "reparam"
    mu_scale: float | None = None
    sigma_scale: float = 0.1
    xi_scale: float = 0.05
    quantile_scale: float | None = None
    adapt_window: int = 50
    target_acceptance: float = 0.35
    update_centering: bool = True

    def __post_init__(self):
        if self.iterations < 1 or not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if self.mode not in ("auto", "coordinate", "reparam"):
            raise ValueError(f"unknown sampler mode {self.mode!r}")
        for name in ("mu_scale", "sigma_scale", "xi_scale", "quantile_scale"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")
        if self.adapt_window < 1:
            raise ValueError("adapt_window must be at least 1")

    @property
    def n_stored(self) -> int:
        return len(range(self.burn_in, self.iterations, self.thin))

    def resolved_mode(self, n_covariates: int) -> str:
        if self.mode != "auto":
            return self.mode
        return "reparam" if n_covariates <= 1 else "coordinate"


@dataclass(eq=False)
class PosteriorSamples:
    """Stored states after burn-in and thinning.

    ``coefficients`` has shape (S, K, T): intercept and raw slopes for the
    linear model, knot quantiles for the spline model.
    """

    taus: np.ndarray
    Q: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    xi: np.ndarray | None
    logpost: np.ndarray
    coefficients: np.ndarray
    coefficient_names: list[str]
    acceptance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.logpost)

    def state(self, s: int) -> RegressionState:
        return RegressionState(self.Q[s], self.mu[s], self.sigma[s], None if self.xi is None else self.xi[s])


# -- initialisation ------------------------------------------------------------------

def _pivot_distance(model: PQRModel, k: int) -> np.ndarray:
    """Distance of every observation to pivot ``k`` in pivot coordinates."""
    basis = model.basis
    if hasattr(basis, "knots"):
        return np.abs(model.X[:, 0] - basis.knots[k])
    if basis.P == 0:
        return np.zeros(model.N)
    Z = basis.frame.to_pivot(model.X)
    corner = np.zeros(basis.P)
    if k > 0:
        corner[k - 1] = 1.0
    return np.linalg.norm(Z - corner, axis=1)


def _local_sample(model: PQRModel, k: int, frac: float = 0.3) -> np.ndarray:
    """Responses of the nearest ``frac`` of observations, or all of them."""
    y = model.y
    n = max(int(math.ceil(frac * model.N)), 2)
    if n >= model.N:
        return y
    near = y[np.argsort(_pivot_distance(model, k), kind="stable")[:n]]
    return near if np.std(near) > 0 else y


def _centering_quantiles(family, mu, sigma, xi, taus):
    return _centering(family, mu, sigma, xi).quantile(taus)


def initialize_state(model: PQRModel) -> RegressionState:
    """Moment-matched centering per pivot, quantiles at the centering quantiles.

    The per-pivot parameters are shrunk toward the pooled values until the
    log posterior is finite; with full shrinkage every pivot carries the same
    quantile vector, which is feasible whenever the pooled fit is.
    """
    taus = model.grid.array
    Kp = model.n_pivots
    gpd = model.family == "gpd"
    y = model.y

    def moments(sample):
        if gpd:
            excess = sample - model.threshold
            excess = excess[excess > 0]
            if len(excess) < 2:
                return model.threshold, 1.0, 0.0
            s, x = gpd_moment_fit(excess)
            return model.threshold, s, float(np.clip(x, model.hyper.xi_lower + 0.05, model.hyper.xi_upper - 0.05))
        if model.family == "uniform":
            lo, hi = sample.min(), sample.max()
            pad = 0.05 * (hi - lo) + 1e-6
            return lo - pad, hi - lo + 2 * pad, 0.0
        sd = float(np.std(sample))
        return float(np.mean(sample)), sd if sd > 0 else 1.0, 0.0

    if model.N == 0:
        g = (model.threshold if gpd else model.hyper.mu_mean, 1.0, 0.0)
        local = [g] * Kp
    else:
        g = moments(y)
        local = [moments(_local_sample(model, k)) for k in range(Kp)]
        if model.family == "uniform":
            local = [g] * Kp
    g = np.array(g)
    L = np.array(local)
    for a in (0.0, 0.25, 0.5, 0.75, 1.0):
        P = (1 - a) * L + a * g
        mu, sigma, xi = P[:, 0], P[:, 1], P[:, 2]
        if gpd:
            mu = np.full(Kp, model.threshold)
        Q = np.array([_centering_quantiles(model.family, mu[k], sigma[k], xi[k], taus) for k in range(Kp)])
        state = RegressionState(Q, mu, sigma, xi.copy() if gpd else None)
        if np.isfinite(model.log_posterior(state)):
            return state
    raise InitializationError(
        f"no feasible starting state: pooled centering (mu={g[0]:.4g}, sigma={g[1]:.4g}, xi={g[2]:.4g}) "
        f"gives log posterior {model.log_posterior(state)}"
    )


# -- reparametrisation -------------------------------------------------------------------

def reparam_forward(q, c: float) -> np.ndarray:
    """``(log(q_2 - q_1), ..., log(q_T - q_{T-1}), log(q_1 + q_T + c))``."""
    q = np.asarray(q, dtype=float)
    d = np.diff(q)
    s = q[0] + q[-1] + c
    if np.any(d <= 0) or not s > 0:
        raise ValueError("need strictly increasing quantiles with q_1 + q_T + c > 0")
    return np.append(np.log(d), math.log(s))


def reparam_inverse(theta, c: float) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    d = np.exp(theta[:-1])
    s = math.exp(theta[-1]) - c
    q1 = 0.5 * (s - d.sum())
    return q1 + np.concatenate([[0.0], np.cumsum(d)])


def reparam_offset(y, Q=None, mu=None, sigma=None) -> float:
    """``2 |min y|``, enlarged so the representable region is wide enough.

    The map only covers states with ``q_1 + q_T > -c``.  ``c`` is raised so
    that the starting state lies inside and, given centering parameters,
    so that every quantile within 10 scales of each centre is representable.
    """
    c = 2.0 * float(np.abs(np.min(y))) if len(y) else 0.0
    if mu is not None and sigma is not None:
        c = max(c, 2.0 * float(np.max(np.abs(mu) + 10.0 * np.asarray(sigma))))
    if Q is not None:
        Q = np.asarray(Q, dtype=float)
        need = -np.min(Q[:, 0] + Q[:, -1])
        if not c > need:
            c = 2.0 * max(need, 0.0) + 1.0
    return c


# -- chain ------------------------------------------------------------------------------

class _Chain:
    """Mutable chain state with cached log-posterior pieces.

    The update methods are the plain-Python reference for the compiled scan
    in ``_kernels.coordinate_sweep``; both consume the same random numbers.
    """

    def __init__(self, model: PQRModel, state: RegressionState, config: McmcConfig):
        self.m = model
        self.cfg = config
        self.Q = np.ascontiguousarray(state.Q, dtype=float).copy()
        self.mu = state.mu.copy()
        self.sigma = state.sigma.copy()
        self.gpd = model.family == "gpd"
        self.xi = state.xi_or_zero.copy()
        self.tree_arrays = model.tree.arrays
        self.L = np.ascontiguousarray(model.basis.vertex_weights)
        self.Lx = np.ascontiguousarray(model.basis.extra_weights)
        self.ll = self.loglik(self.Q, self.mu, self.sigma, self.xi)
        self.prior = np.array([self.prior_k(k, self.Q[k], self.mu[k], self.sigma[k], self.xi[k])
                               for k in range(model.n_pivots)])
        lp = self.logpost()
        if not np.isfinite(lp):
            raise InitializationError(f"initial state has log posterior {lp}")

    # posterior pieces
    def loglik(self, Q, mu, sigma, xi):
        m = self.m
        if not K.vertices_feasible(self.L, Q, mu, sigma, xi, m.code):
            return -np.inf
        if m.N == 0:
            return 0.0
        return K.loglik(m.W, m.y, Q, mu, sigma, xi, m.log_masses, m.code)

    def prior_k(self, k, qk, mu, sigma, xi):
        return K.pyramid_logprior(qk, mu, sigma, xi, self.m.code, *self.tree_arrays)

    def hyper_k(self, mu, sigma, xi):
        return self.m.hyper.log_pivot(mu, sigma, xi, self.gpd)

    def logpost(self):
        hyper = sum(self.hyper_k(self.mu[k], self.sigma[k], self.xi[k]) for k in range(self.m.n_pivots))
        return self.ll + float(self.prior.sum()) + hyper

    @staticmethod
    def accept(log_ratio, u):
        return log_ratio >= 0 or math.log(u) < log_ratio

    # updates
    def update_quantile(self, k, t, w, u_prop, u_acc):
        Q = self.Q
        lo, hi = K.coordinate_bounds(self.Lx, Q, k, t)
        if math.isfinite(lo) and math.isfinite(hi):
            d = 1e-12 * (hi - lo)
            lo, hi = lo + d, hi - d
        cur = Q[k, t]
        a, b = max(lo, cur - w), min(hi, cur + w)
        prop = a + (b - a) * u_prop
        if not (lo < prop < hi) or prop == cur:
            return False
        # reverse move window; the uniform densities differ when clipped
        a2, b2 = max(lo, prop - w), min(hi, prop + w)
        Q[k, t] = prop
        ll = self.loglik(Q, self.mu, self.sigma, self.xi)
        pr = self.prior_k(k, Q[k], self.mu[k], self.sigma[k], self.xi[k]) if ll > -np.inf else -np.inf
        if pr > -np.inf:
            log_r = ll + pr - self.ll - self.prior[k] + math.log((b - a) / (b2 - a2))
            if self.accept(log_r, u_acc):
                self.ll, self.prior[k] = ll, pr
                return True
        Q[k, t] = cur
        return False

    def _try_centering(self, k, mu, sigma, xi, log_jac, u):
        old = self.mu[k], self.sigma[k], self.xi[k]
        h_new = self.hyper_k(mu, sigma, xi)
        if h_new == -np.inf:
            return False
        h_old = self.hyper_k(*old)
        self.mu[k], self.sigma[k], self.xi[k] = mu, sigma, xi
        ll = self.loglik(self.Q, self.mu, self.sigma, self.xi)
        pr = self.prior_k(k, self.Q[k], mu, sigma, xi) if ll > -np.inf else -np.inf
        if pr > -np.inf:
            log_r = ll + pr + h_new - self.ll - self.prior[k] - h_old + log_jac
            if self.accept(log_r, u):
                self.ll, self.prior[k] = ll, pr
                return True
        self.mu[k], self.sigma[k], self.xi[k] = old
        return False

    def update_centering(self, k, log_c, z, u, acc_c):
        if not self.gpd:
            acc_c[k, 0] += self._try_centering(
                k, self.mu[k] + math.exp(log_c[k, 0]) * z[0], self.sigma[k], self.xi[k], 0.0, u[0])
        # random walk on log sigma; the Jacobian is sigma'/sigma
        step = math.exp(log_c[k, 1]) * z[1]
        acc_c[k, 1] += self._try_centering(
            k, self.mu[k], self.sigma[k] * math.exp(step), self.xi[k], step, u[1])
        if self.gpd:
            acc_c[k, 2] += self._try_centering(
                k, self.mu[k], self.sigma[k], self.xi[k] + math.exp(log_c[k, 2]) * z[2], 0.0, u[2])

    def update_theta(self, k, j, s, c, z, u):
        Q = self.Q
        old = Q[k].copy()
        theta = reparam_forward(old, c)
        theta_new = theta.copy()
        theta_new[j] += s * z
        new = reparam_inverse(theta_new, c)
        if not np.all(np.isfinite(new)) or np.any(np.diff(new) <= 0):
            return False
        Q[k] = new
        ll = self.loglik(Q, self.mu, self.sigma, self.xi)
        pr = self.prior_k(k, Q[k], self.mu[k], self.sigma[k], self.xi[k]) if ll > -np.inf else -np.inf
        if pr > -np.inf:
            # log-Jacobian of theta -> q is sum(theta) up to a constant
            log_r = ll + pr - self.ll - self.prior[k] + theta_new[j] - theta[j]
            if self.accept(log_r, u):
                self.ll, self.prior[k] = ll, pr
                return True
        Q[k] = old
        return False

    # full scans
    def sweep_python(self, mode, log_q, log_c, c, draws, acc_q, acc_c):
        Uq, Zq, Zc, Uc = draws
        for k in range(self.m.n_pivots):
            for t in range(self.m.T):
                s = math.exp(log_q[k, t])
                if mode == "reparam":
                    acc_q[k, t] += self.update_theta(k, t, s, c, Zq[k, t], Uq[k, t, 1])
                else:
                    acc_q[k, t] += self.update_quantile(k, t, s, Uq[k, t, 0], Uq[k, t, 1])
            if self.cfg.update_centering:
                self.update_centering(k, log_c, Zc[k], Uc[k], acc_c)

    def sweep_compiled(self, log_q, log_c, draws, acc_q, acc_c):
        Uq, _, Zc, Uc = draws
        m = self.m
        self.ll = K.coordinate_sweep(
            self.Q, self.mu, self.sigma, self.xi, self.prior, self.ll, m.W, m.y, m.log_masses, m.code,
            self.L, self.Lx, *self.tree_arrays, m.hyper.packed, self.gpd, self.cfg.update_centering,
            log_q, log_c, Uq, Zc, Uc, acc_q, acc_c,
        )


def _draws(rng, Kp, T):
    """Random numbers for one scan, always drawn in the same order."""
    return rng.random((Kp, T, 2)), rng.standard_normal((Kp, T)), rng.standard_normal((Kp, 3)), rng.random((Kp, 3))


def _adapt(log_scale, accepted, n, batch, target):
    with np.errstate(invalid="ignore"):
        rate = np.where(n > 0, accepted / np.maximum(n, 1), target)
    log_scale = log_scale + (rate - target) * min(0.5, 1.0 / math.sqrt(batch))
    return np.clip(log_scale, -30.0, 30.0)


def _initial_scales(model: PQRModel, config: McmcConfig, sigma, mode):
    Kp, T = model.n_pivots, model.T
    base = np.maximum(sigma, 1e-8)
    n_eff = max(model.N, 1)
    if config.quantile_scale is not None:
        log_q = np.full((Kp, T), math.log(config.quantile_scale))
    elif mode == "reparam":
        log_q = np.full((Kp, T), math.log(0.5 / math.sqrt(n_eff) + (1.0 if model.N == 0 else 0.0)))
    else:
        log_q = np.log(np.repeat(base[:, None], T, axis=1) * max(0.05, 2.0 / math.sqrt(n_eff)))
    log_c = np.empty((Kp, 3))
    if config.mu_scale is None:
        log_c[:, 0] = np.log(base * max(0.02, 1.0 / math.sqrt(n_eff)))
    else:
        log_c[:, 0] = math.log(config.mu_scale)
    log_c[:, 1] = math.log(config.sigma_scale)
    log_c[:, 2] = math.log(config.xi_scale)
    return log_q, log_c


def _run(model: PQRModel, config: McmcConfig, state: RegressionState | None, mode: str,
         engine: str = "compiled") -> PosteriorSamples:
    if state is None:
        state = initialize_state(model)
    ch = _Chain(model, state, config)
    rng = np.random.default_rng(config.seed)
    Kp, T = model.n_pivots, model.T
    gpd = ch.gpd
    c = reparam_offset(model.y, ch.Q, ch.mu, ch.sigma) if mode == "reparam" else 0.0
    compiled = engine == "compiled" and mode == "coordinate"
    log_q, log_c = _initial_scales(model, config, ch.sigma, mode)

    acc_q, tot_q = np.zeros((Kp, T)), 0
    acc_c, tot_c = np.zeros((Kp, 3)), 0

    S = config.n_stored
    out_Q = np.empty((S, Kp, T))
    out_mu = np.empty((S, Kp))
    out_sigma = np.empty((S, Kp))
    out_xi = np.empty((S, Kp)) if gpd else None
    out_lp = np.empty(S)
    stored = 0
    batch = 0
    # which centering coordinates are actually updated
    c_mask = np.zeros(3, dtype=bool)
    if config.update_centering:
        c_mask[[2, 1] if gpd else [0, 1]] = True

    for it in range(config.iterations):
        draws = _draws(rng, Kp, T)
        if compiled:
            ch.sweep_compiled(log_q, log_c, draws, acc_q, acc_c)
        else:
            ch.sweep_python(mode, log_q, log_c, c, draws, acc_q, acc_c)
        tot_q += 1
        tot_c += 1
        if it < config.burn_in and (it + 1) % config.adapt_window == 0:
            batch += 1
            tgt = config.target_acceptance
            log_q = _adapt(log_q, acc_q, tot_q, batch, tgt)
            log_c[:, c_mask] = _adapt(log_c, acc_c, tot_c, batch, tgt)[:, c_mask]
            acc_q[...] = 0.0
            acc_c[...] = 0.0
            tot_q = tot_c = 0
        if it + 1 == config.burn_in:
            acc_q[...] = 0.0
            acc_c[...] = 0.0
            tot_q = tot_c = 0
        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
            out_Q[stored] = ch.Q
            out_mu[stored] = ch.mu
            out_sigma[stored] = ch.sigma
            if gpd:
                out_xi[stored] = ch.xi
            out_lp[stored] = ch.logpost()
            stored += 1

    n = max(tot_q, 1)
    rates = acc_c / n
    rates[:, ~c_mask] = np.nan
    acceptance = {
        "quantile": acc_q / n,
        "mu": rates[:, 0],
        "sigma": rates[:, 1],
        "xi": rates[:, 2],
        "mode": mode,
    }
    return PosteriorSamples(
        taus=model.grid.array,
        Q=out_Q,
        mu=out_mu,
        sigma=out_sigma,
        xi=out_xi,
        logpost=out_lp,
        coefficients=model.basis.coefficients(out_Q),
        coefficient_names=model.basis.coefficient_names,
        acceptance=acceptance,
    )


def _covariate_dim(model: PQRModel) -> int:
    return getattr(model.basis, "P", 1)


def run_chain(model: PQRModel, config: McmcConfig, state: RegressionState | None = None) -> PosteriorSamples:
    """Run one chain; the quantile update follows ``config.mode``."""
    return _run(model, config, state, config.resolved_mode(_covariate_dim(model)))


def run_chain_coordinate(model: PQRModel, config: McmcConfig, state: RegressionState | None = None):
    return _run(model, config, state, "coordinate")


def run_chain_reparam(model: PQRModel, config: McmcConfig, state: RegressionState | None = None):
    return _run(model, config, state, "reparam")


def concat_samples(parts: list[PosteriorSamples]) -> PosteriorSamples:
    """Pool draws from several chains of the same model."""
    first = parts[0]
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
    return PosteriorSamples(
        first.taus, cat("Q"), cat("mu"), cat("sigma"), None if first.xi is None else cat("xi"),
        cat("logpost"), cat("coefficients"), list(first.coefficient_names),
    )


# -- summaries ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SummaryRow:
    coefficient: str
    tau: float
    mean: float
    median: float
    lower: float
    upper: float


def summarize(samples: PosteriorSamples, level: float = 0.90) -> list[SummaryRow]:
    """Posterior mean, median and equal-tailed ``level`` interval per (coefficient, tau).

    ``level = 0.90`` uses the 0.05 and 0.95 sample quantiles.
    """
    if not 0 < level < 1:
        raise ValueError("credibility level must lie in (0, 1)")
    C = np.asarray(samples.coefficients)
    if C.shape[0] == 0:
        raise ValueError("no posterior samples to summarize")
    lo_q, hi_q = (1 - level) / 2, (1 + level) / 2
    rows = []
    for j, name in enumerate(samples.coefficient_names):
        for t, tau in enumerate(samples.taus):
            x = C[:, j, t]
            lo, med, hi = np.quantile(x, [lo_q, 0.5, hi_q])
            rows.append(SummaryRow(name, float(tau), float(np.mean(x)), float(med), float(lo), float(hi)))
    return rows


def rhat(chains) -> float:
    """Split R-hat for a list of equal-length 1-D traces."""
    chains = [np.asarray(c, dtype=float) for c in chains]
    n = min(len(c) for c in chains) // 2
    if n < 2:
        raise ValueError("chains too short for split R-hat")
    halves = np.array([h for c in chains for h in (c[:n], c[n:2 * n])])
    means = halves.mean(axis=1)
    W = halves.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    if W == 0:
        return 1.0 if B == 0 else np.inf
    var_plus = (n - 1) / n * W + B / n
    return float(math.sqrt(var_plus / W))


__all__ = [
    "McmcConfig", "PosteriorSamples", "InitializationError", "initialize_state", "reparam_forward",
    "reparam_inverse", "reparam_offset", "run_chain", "run_chain_coordinate", "run_chain_reparam",
    "concat_samples", "SummaryRow", "summarize", "rhat",
]
