"""Command-line front end: ``pyramid-qr {fit,spline-fit,extreme-fit,bench,prior-draw}``."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .centering import make_centering
from .model import Dataset, PQRModel, equally_spaced_knots
from .pyramid import as_grid, build_oblique_tree, sample_unit_pyramid
from .sampler import McmcConfig, concat_samples, rhat, run_chain, summarize
from .simulation import BenchSettings, DesignSpec, run_bench

log = logging.getLogger("pyramid_qr")

GRID_POINTS = 100


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def parse_taus(text: str) -> tuple[float, ...]:
    try:
        taus = tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad tau list {text!r}") from None
    try:
        return as_grid(taus).levels
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _common(p: argparse.ArgumentParser, taus: str):
    p.add_argument("--tau", type=parse_taus, default=parse_taus(taus), help="comma-separated levels")
    p.add_argument("--iters", type=int, default=20_000, help="total MCMC iterations")
    p.add_argument("--burnin", type=int, default=5_000)
    p.add_argument("--thin", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1, help="worker processes for chains or replicates")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--config", type=Path, help="key=value file; command-line flags win")


def _fit_args(p: argparse.ArgumentParser):
    p.add_argument("input", type=Path, help="CSV with a 'y' column")
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--level", type=float, default=0.90, help="credibility of summary intervals")
    p.add_argument("--mode", choices=["auto", "coordinate", "reparam"], default="auto")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pyramid-qr", description="Pyramid quantile regression")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="linear quantile regression")
    _fit_args(p)
    _common(p, "0.1,0.5,0.9")
    p.add_argument("--center", choices=["normal", "uniform"], default="normal")

    p = sub.add_parser("spline-fit", help="piecewise-linear quantile regression on one covariate")
    _fit_args(p)
    _common(p, "0.25,0.5,0.75")
    p.add_argument("--knots", type=int, default=7)
    p.add_argument("--center", choices=["normal", "uniform"], default="normal")

    p = sub.add_parser("extreme-fit", help="GPD-centred fit on threshold exceedances")
    _fit_args(p)
    _common(p, "0.1,0.25,0.5,0.75,0.9")
    p.add_argument("--threshold", type=float, required=True)

    p = sub.add_parser("bench", help="simulation study on designs 1-4")
    _common(p, "0.1,0.5,0.9")
    p.add_argument("--design", type=int, choices=[1, 2, 3, 4], default=1)
    p.add_argument("--replicates", type=int, default=20)
    p.add_argument("--n", type=int, default=100, help="sample size per replicate")

    p = sub.add_parser("prior-draw", help="prior quantile-function draws")
    _common(p, "0.01,0.05,0.1,0.25,0.5,0.75,0.9,0.95,0.99")
    p.add_argument("--center", choices=["normal", "gpd", "uniform"], default="normal")
    p.add_argument("--mu", type=float, default=0.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--xi", type=float, default=0.0)
    p.add_argument("--draws", type=int, default=1000)
    return parser


def read_config(path: Path) -> list[str]:
    """Translate ``key = value`` lines into ``--key value`` arguments."""
    args = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        args += [f"--{key.replace('_', '-')}", value]
    return args


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None) is not None:
        # Config values go first so that explicit flags override them.
        idx = argv.index(args.command) + 1
        args = parser.parse_args(argv[:idx] + read_config(args.config) + argv[idx:])
    return args


def mcmc_config(args, seed=None) -> McmcConfig:
    return McmcConfig(
        iterations=args.iters, burn_in=args.burnin, thin=args.thin,
        seed=args.seed if seed is None else seed, mode=getattr(args, "mode", "auto"),
    )


def _chain_job(job):
    model, cfg = job
    return run_chain(model, cfg)


def run_chains(model, args):
    seeds = [int(s) for s in np.random.SeedSequence(args.seed).generate_state(args.chains)] \
        if args.chains > 1 else [args.seed]
    jobs = [(model, mcmc_config(args, s)) for s in seeds]
    if args.threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            parts = list(pool.map(_chain_job, jobs))
    else:
        parts = [_chain_job(j) for j in jobs]
    return parts


def _band(values, level):
    a = (1.0 - level) / 2.0
    lo, hi = np.quantile(values, [a, 1.0 - a], axis=0)
    return values.mean(axis=0), lo, hi


def quantile_line_blocks(model: PQRModel, samples, names, level):
    """Posterior mean and band of Q_tau(Y|x) along each covariate.

    Other covariates are held at their sample means.
    """
    X = model.X
    if X is None or X.shape[1] == 0:
        W = np.ones((1, 1))
        mean, lo, hi = _band(np.einsum("k,skt->st", W[0], samples.Q)[:, None, :], level)
        return [("", np.array([np.nan]), samples.taus, mean, lo, hi)]
    blocks = []
    center = X.mean(axis=0)
    for j, name in enumerate(names):
        grid = np.linspace(X[:, j].min(), X[:, j].max(), GRID_POINTS)
        pts = np.repeat(center[None, :], GRID_POINTS, axis=0)
        pts[:, j] = grid
        W = model.basis.weights(grid if hasattr(model.basis, "knots") else pts)
        lines = np.einsum("ik,skt->sit", W, samples.Q)
        blocks.append((name, grid, samples.taus, *_band(lines, level)))
    return blocks


def _report(out: Path, lines: list[str]):
    (out / "report.txt").write_text("\n".join(lines) + "\n")


def _fit_common(args, model: PQRModel, data_lines: list[str], names: list[str]):
    start = time.perf_counter()
    parts = run_chains(model, args)
    samples = concat_samples(parts) if len(parts) > 1 else parts[0]
    chain = np.concatenate([np.full(len(p), i) for i, p in enumerate(parts)])
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    io.write_samples(out / "samples.csv", samples, chain)
    io.write_summary(out / "summary.csv", summarize(samples, args.level))
    io.write_quantile_lines(out / "quantile_lines.csv", quantile_line_blocks(model, samples, names, args.level))
    lines = [f"command: {args.command}", f"input: {args.input}", *data_lines,
             f"levels: {','.join(repr(t) for t in model.grid.levels)}",
             f"centering: {model.family}",
             f"iterations: {args.iters} burn-in: {args.burnin} thin: {args.thin} seed: {args.seed} chains: {args.chains}",
             f"stored draws: {len(samples)}"]
    for i, p in enumerate(parts):
        acc = p.acceptance
        lines.append(f"chain {i} ({acc['mode']}): quantile acceptance "
                     f"min {np.nanmin(acc['quantile']):.3f} max {np.nanmax(acc['quantile']):.3f}")
    if len(parts) > 1:
        worst = max(rhat([p.coefficients[:, j, t] for p in parts])
                    for j in range(samples.coefficients.shape[1]) for t in range(model.T))
        lines.append(f"max split R-hat over coefficients: {worst:.4f}")
    lines.append(f"runtime seconds: {time.perf_counter() - start:.1f}")
    _report(out, lines)
    return samples


def cmd_fit(args):
    data, names = io.ingest_csv(args.input)
    model = PQRModel.linear(data, args.tau, args.center)
    info = [f"N: {data.N} P: {data.P}",
            f"hull: {len(data.hull.vertices)} vertices ({data.hull.method})",
            "pivots: " + "; ".join(",".join(io.fmt(v) for v in p) for p in data.frame.pivots)]
    _fit_common(args, model, info, names)


def cmd_spline_fit(args):
    header, table = io.read_table(args.input)
    if "y" not in header or len(header) != 2:
        raise io.DataError(f"{args.input}: spline-fit needs columns 'y' and one covariate")
    j = header.index("y")
    y, x = table[:, j], table[:, 1 - j]
    knots = equally_spaced_knots(x, args.knots)
    model = PQRModel.spline(x, y, knots, args.tau, args.center)
    info = [f"N: {len(y)} knots: {','.join(io.fmt(k) for k in knots)}"]
    _fit_common(args, model, info, [header[1 - j]])


def cmd_extreme_fit(args):
    header, table = io.read_table(args.input)
    if "y" not in header:
        raise io.DataError(f"{args.input}: no column named 'y'")
    j = header.index("y")
    keep = table[:, j] > args.threshold
    if keep.sum() <= table.shape[1] - 1:
        raise io.DataError(f"only {int(keep.sum())} responses exceed the threshold {args.threshold}")
    y = table[keep, j]
    X = np.delete(table[keep], j, axis=1)
    names = [h for i, h in enumerate(header) if i != j]
    data = Dataset.from_arrays(y, X)
    model = PQRModel.linear(data, args.tau, "gpd", threshold=args.threshold)
    info = [f"exceedances: {data.N} of {len(table)} rows (threshold {args.threshold})",
            f"P: {data.P} hull: {len(data.hull.vertices)} vertices ({data.hull.method})"]
    _fit_common(args, model, info, names)


def cmd_bench(args):
    spec = DesignSpec(args.design, args.n, args.replicates, args.tau, args.seed)
    settings = BenchSettings(args.iters, args.burnin, args.thin)
    report = run_bench(spec, settings, workers=args.threads)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench_rmse.csv").write_text(report.rmse_table())
    (out / "bench_coverage.csv").write_text(report.coverage_table())
    _report(out, [f"design {spec.design} N={spec.N} replicates={spec.replicates} seed={spec.seed}",
                  f"iterations {settings.iterations} burn-in {settings.burn_in} thin {settings.thin}",
                  "RMSE x 100", report.rmse_table(), "95% coverage", report.coverage_table(),
                  f"runtime seconds: {report.runtime:.1f}"])
    sys.stdout.write(report.rmse_table())


def cmd_prior_draw(args):
    if args.draws < 1:
        raise CliError("--draws must be at least 1")
    dist = make_centering(args.center, args.mu, args.sigma, args.xi)
    tree = build_oblique_tree(args.tau)
    rng = np.random.default_rng(args.seed)
    unit = sample_unit_pyramid(tree, rng, args.draws)
    values = dist.quantile(unit)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    header = ["draw"] + [f"tau{t!r}" for t in args.tau]
    io._write_rows(out / "prior_draws.csv", header, ([str(i)] + list(v) for i, v in enumerate(values)))
    _report(out, [f"prior draws: {args.draws}", f"centering: {args.center} {dist.params()}",
                  f"levels: {','.join(repr(t) for t in args.tau)}"])


COMMANDS = {
    "fit": cmd_fit,
    "spline-fit": cmd_spline_fit,
    "extreme-fit": cmd_extreme_fit,
    "bench": cmd_bench,
    "prior-draw": cmd_prior_draw,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[args.command](args)
    except (CliError, ValueError, RuntimeError, OSError) as e:
        msg = " ".join(str(e).split())
        sys.stderr.write(f"error: {msg}\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
