"""Simulation designs, error metrics and the replicate bench.

Every design draws ``x_ij ~ U(-1, 1)`` and ``u_i ~ U(0, 1)`` and sets
``y_i = beta_0(u_i) + sum_j x_ij beta_j(u_i)``.  Because the right-hand side
is increasing in ``u`` on the covariate box, ``beta_p(tau)`` is exactly the
p-th coefficient of the conditional tau-quantile.
"""
from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .checkloss import checkloss_fit
from .model import Dataset, PQRModel
from .sampler import McmcConfig, run_chain


def _b0_logit(u):
    return np.log(u / (1.0 - u))


def _b0_laplace(u):
    return np.sign(0.5 - u) * np.log(1.0 - 2.0 * np.abs(0.5 - u))


def _kink(u):
    return 2.0 * np.minimum(u - 0.5, 0.0)


DESIGNS = {
    1: (_b0_logit, lambda u: np.full_like(u, 2.0)),
    2: (_b0_laplace, lambda u: 2.0 * u),
    3: (ndtri, _kink),
    4: (
        lambda u: 2.0 * ndtri(u),
        _kink,
        lambda u: 2.0 * u,
        lambda u: np.full_like(u, 2.0),
        lambda u: np.ones_like(u),
        lambda u: np.zeros_like(u),
    ),
}


@dataclass(frozen=True)
class DesignSpec:
    design: int
    N: int
    replicates: int = 1
    taus: tuple[float, ...] = (0.1, 0.5, 0.9)
    seed: int = 0

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise ValueError(f"design must be one of {sorted(DESIGNS)}")
        if self.N < 1 or self.replicates < 1:
            raise ValueError("N and replicates must be at least 1")

    @property
    def P(self) -> int:
        return len(DESIGNS[self.design]) - 1


def true_quantile_curve(design: int, p: int, tau):
    """``beta_p(tau)`` for the given design."""
    u = np.asarray(tau, dtype=float)
    out = DESIGNS[design][p](u)
    return float(out) if out.ndim == 0 else out


def design_response(design: int, u, X) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    X = np.asarray(X, dtype=float).reshape(len(u), -1)
    funcs = DESIGNS[design]
    y = funcs[0](u)
    for j, f in enumerate(funcs[1:]):
        y = y + X[:, j] * f(u)
    return y


def replicate_rng(seed: int, replicate: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(replicate)])


def generate_design(spec: DesignSpec, replicate: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """``(y, X)`` for one replicate; reproducible per (seed, replicate)."""
    rng = replicate_rng(spec.seed, replicate)
    X = rng.uniform(-1.0, 1.0, size=(spec.N, spec.P))
    u = rng.uniform(0.0, 1.0, size=spec.N)
    return design_response(spec.design, u, X), X


def rmse(estimates, truth) -> float:
    """Root mean squared error over replicates (unscaled)."""
    e = np.asarray(estimates, dtype=float)
    if e.size == 0:
        raise ValueError("no estimates")
    return float(np.sqrt(np.mean((e - truth) ** 2)))


def coverage(intervals, truth) -> float:
    """Fraction of ``(lower, upper)`` intervals containing ``truth``."""
    iv = np.asarray(intervals, dtype=float).reshape(-1, 2)
    if len(iv) == 0:
        raise ValueError("no intervals")
    return float(np.mean((iv[:, 0] <= truth) & (truth <= iv[:, 1])))


@dataclass(frozen=True)
class BenchSettings:
    iterations: int = 20_000
    burn_in: int = 5_000
    thin: int = 5
    level: float = 0.95
    mode: str = "auto"


@dataclass
class ReplicateResult:
    replicate: int
    pqr_mean: np.ndarray  # (P+1, T)
    pqr_lower: np.ndarray
    pqr_upper: np.ndarray
    checkloss: np.ndarray  # (P+1, T)
    seconds: float


def run_replicate(spec: DesignSpec, settings: BenchSettings, replicate: int) -> ReplicateResult:
    start = time.perf_counter()
    y, X = generate_design(spec, replicate)
    data = Dataset.from_arrays(y, X)
    model = PQRModel.linear(data, spec.taus)
    cfg = McmcConfig(
        iterations=settings.iterations,
        burn_in=settings.burn_in,
        thin=settings.thin,
        seed=int(np.random.SeedSequence([spec.seed, replicate, 1]).generate_state(1)[0]),
        mode=settings.mode,
    )
    samples = run_chain(model, cfg)
    C = samples.coefficients
    a = (1.0 - settings.level) / 2.0
    lower, upper = np.quantile(C, [a, 1.0 - a], axis=0)
    cl = np.column_stack([checkloss_fit(y, X, tau) for tau in spec.taus])
    return ReplicateResult(replicate, C.mean(axis=0), lower, upper, cl, time.perf_counter() - start)


def _run_one(args):
    return run_replicate(*args)


@dataclass
class BenchReport:
    """RMSE and coverage per (coefficient, tau) for each method."""

    spec: DesignSpec
    settings: BenchSettings
    truth: np.ndarray  # (P+1, T)
    rmse: dict[str, np.ndarray]  # method -> (P+1, T), unscaled
    coverage: np.ndarray  # PQR only, (P+1, T)
    runtime: float
    replicates: list[ReplicateResult] = field(default_factory=list)

    def rmse100(self, method: str = "PQR") -> np.ndarray:
        return 100.0 * self.rmse[method]

    def rmse_table(self) -> str:
        names = [f"beta{p}" for p in range(self.truth.shape[0])]
        lines = ["tau,method," + ",".join(names)]
        for t, tau in enumerate(self.spec.taus):
            for method, values in self.rmse.items():
                cells = ",".join(f"{100.0 * v:.2f}" for v in values[:, t])
                lines.append(f"{tau:g},{method},{cells}")
        return "\n".join(lines) + "\n"

    def coverage_table(self) -> str:
        names = [f"beta{p}" for p in range(self.truth.shape[0])]
        lines = ["tau,method," + ",".join(names)]
        for t, tau in enumerate(self.spec.taus):
            cells = ",".join(f"{v:.2f}" for v in self.coverage[:, t])
            lines.append(f"{tau:g},PQR,{cells}")
        return "\n".join(lines) + "\n"


def run_bench(spec: DesignSpec, settings: BenchSettings = BenchSettings(), workers: int = 1) -> BenchReport:
    """Fit PQR and the check-loss baseline on every replicate."""
    start = time.perf_counter()
    jobs = [(spec, settings, r) for r in range(spec.replicates)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    P1 = spec.P + 1
    truth = np.array([[true_quantile_curve(spec.design, p, tau) for tau in spec.taus] for p in range(P1)])
    est_pqr = np.array([r.pqr_mean for r in results])
    est_cl = np.array([r.checkloss for r in results])
    rm = {
        "PQR": np.sqrt(np.mean((est_pqr - truth) ** 2, axis=0)),
        "check-loss": np.sqrt(np.mean((est_cl - truth) ** 2, axis=0)),
    }
    lo = np.array([r.pqr_lower for r in results])
    hi = np.array([r.pqr_upper for r in results])
    cov = np.mean((lo <= truth) & (truth <= hi), axis=0)
    return BenchReport(spec, settings, truth, rm, cov, time.perf_counter() - start, results)


__all__ = [
    "DESIGNS", "DesignSpec", "true_quantile_curve", "design_response", "generate_design",
    "rmse", "coverage", "BenchSettings", "ReplicateResult", "run_replicate", "BenchReport",
    "run_bench",
]
