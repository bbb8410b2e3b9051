"""CSV ingestion and lossless CSV output of samples and summaries."""
from __future__ import annotations

import csv
import math
import re
from pathlib import Path

import numpy as np

from .geometry import PivotFrame
from .model import Dataset
from .sampler import PosteriorSamples, SummaryRow


class DataError(ValueError):
    """Malformed input file."""


def fmt(x) -> str:
    """Shortest text that parses back to the same double (locale independent)."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".17g")


def read_table(path) -> tuple[list[str], np.ndarray]:
    """Headered numeric CSV; errors name the offending row and column."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(row)} cells, header has {len(header)}")
            values = []
            for name, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: row {lineno}, column {name!r}: {cell.strip()!r} is not a number") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: row {lineno}, column {name!r}: non-finite value {cell.strip()!r}")
                values.append(v)
            rows.append(values)
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))


def ingest_csv(path, frame: PivotFrame | None = None) -> tuple[Dataset, list[str]]:
    """Dataset from a CSV with a ``y`` column; other columns are covariates.

    Returns the dataset and the covariate names in file order.
    """
    header, table = read_table(path)
    if "y" not in header:
        raise DataError(f"{path}: no column named 'y' (found {', '.join(header)})")
    j = header.index("y")
    names = [h for i, h in enumerate(header) if i != j]
    y = table[:, j]
    X = np.delete(table, j, axis=1)
    if len(y) <= X.shape[1]:
        raise DataError(f"{path}: need more rows than covariates (N={len(y)}, P={X.shape[1]})")
    return Dataset.from_arrays(y, X, frame), names


def _write_rows(path, header, rows):
    with Path(path).open("w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(c if isinstance(c, str) else fmt(c) for c in r) + "\n")


# -- posterior samples ---------------------------------------------------------------

def _level_tag(tau) -> str:
    return repr(float(tau))


def sample_columns(samples: PosteriorSamples) -> list[str]:
    Kp, T = samples.Q.shape[1:]
    taus = [_level_tag(t) for t in samples.taus]
    cols = ["chain", "draw", "logpost"]
    cols += [f"Q{k}_tau{t}" for k in range(Kp) for t in taus]
    cols += [f"mu{k}" for k in range(Kp)] + [f"sigma{k}" for k in range(Kp)]
    if samples.xi is not None:
        cols += [f"xi{k}" for k in range(Kp)]
    cols += [f"{name}_tau{t}" for name in samples.coefficient_names for t in taus]
    return cols


def write_samples(path, samples: PosteriorSamples, chain=None) -> None:
    """One row per stored state; ``chain`` labels rows of pooled chains."""
    S = len(samples)
    chain = np.zeros(S, dtype=int) if chain is None else np.asarray(chain)
    blocks = [
        samples.logpost[:, None],
        samples.Q.reshape(S, -1),
        samples.mu,
        samples.sigma,
    ]
    if samples.xi is not None:
        blocks.append(samples.xi)
    blocks.append(samples.coefficients.reshape(S, -1))
    body = np.hstack(blocks)
    rows = ([str(chain[s]), str(s)] + [fmt(v) for v in body[s]] for s in range(S))
    _write_rows(path, sample_columns(samples), rows)


_COL = re.compile(r"^(?P<name>.+)_tau(?P<tau>[-+0-9.eE]+)$")
_Q_COL = re.compile(r"^Q\d+_tau")


def read_samples(path) -> PosteriorSamples:
    header, table = read_table(path)
    col = {h: i for i, h in enumerate(header)}
    q_cols = [h for h in header if _Q_COL.match(h)]
    taus = []
    for h in q_cols:
        t = float(_COL.match(h)["tau"])
        if t not in taus:
            taus.append(t)
    T = len(taus)
    Kp = len(q_cols) // T
    S = len(table)
    Q = table[:, [col[h] for h in q_cols]].reshape(S, Kp, T)
    mu = table[:, [col[f"mu{k}"] for k in range(Kp)]]
    sigma = table[:, [col[f"sigma{k}"] for k in range(Kp)]]
    xi = table[:, [col[f"xi{k}"] for k in range(Kp)]] if "xi0" in col else None
    coef_cols = [h for h in header if "_tau" in h and not _Q_COL.match(h)]
    names = []
    for h in coef_cols:
        name = _COL.match(h)["name"]
        if name not in names:
            names.append(name)
    C = table[:, [col[h] for h in coef_cols]].reshape(S, len(names), T)
    return PosteriorSamples(np.array(taus), Q, mu, sigma, xi, table[:, col["logpost"]], C, names)


# -- summaries and plot data ---------------------------------------------------------------

SUMMARY_HEADER = ["coefficient", "tau", "mean", "median", "lower", "upper"]


def write_summary(path, rows: list[SummaryRow]) -> None:
    _write_rows(path, SUMMARY_HEADER, ([r.coefficient, r.tau, r.mean, r.median, r.lower, r.upper] for r in rows))


def read_summary(path) -> list[SummaryRow]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != SUMMARY_HEADER:
            raise DataError(f"{path}: unexpected summary header {header}")
        return [SummaryRow(r[0], *map(float, r[1:])) for r in reader if r]


def write_quantile_lines(path, blocks) -> None:
    """Long table ``covariate, x, tau, mean, lower, upper``.

    ``blocks`` is a sequence of ``(covariate, x, taus, mean, lower, upper)``
    with the three value arrays shaped (len(x), T).
    """
    rows = []
    for covariate, x, taus, mean, lower, upper in blocks:
        for t, tau in enumerate(taus):
            for i, xv in enumerate(x):
                rows.append([covariate, xv, tau, mean[i, t], lower[i, t], upper[i, t]])
    _write_rows(path, ["covariate", "x", "tau", "mean", "lower", "upper"], rows)


__all__ = [
    "DataError", "fmt", "read_table", "ingest_csv", "sample_columns", "write_samples", "read_samples",
    "write_summary", "read_summary", "write_quantile_lines",
]
