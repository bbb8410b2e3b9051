"""Regular and oblique quantile pyramids on [0, 1].

A pyramid over levels ``tau_1 < ... < tau_T`` is a binary tree.  The root
carries the middle level; each node's quantile is drawn as a Beta-weighted
convex combination of the quantiles at its two nearest ancestors, with the
boundaries ``Q(0) = 0`` and ``Q(1) = 1`` fixed.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import betaln, xlog1py, xlogy


def default_concentration(m: int) -> float:
    """Smaller Beta parameter at pyramid depth ``m`` (root is 1)."""
    return 2.0 * m


@dataclass(frozen=True)
class QuantileGrid:
    """Strictly increasing probability levels inside (0, 1)."""

    levels: tuple[float, ...]

    def __post_init__(self):
        levels = tuple(float(t) for t in self.levels)
        if len(levels) == 0:
            raise ValueError("quantile grid is empty")
        arr = np.asarray(levels)
        if not np.all(np.isfinite(arr)) or arr[0] <= 0.0 or arr[-1] >= 1.0:
            raise ValueError(f"quantile levels must lie in (0, 1): {levels}")
        if np.any(np.diff(arr) <= 0):
            raise ValueError(f"quantile levels must be strictly increasing: {levels}")
        object.__setattr__(self, "levels", levels)

    def __len__(self) -> int:
        return len(self.levels)

    def __iter__(self):
        return iter(self.levels)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.levels)

    @property
    def masses(self) -> np.ndarray:
        """Probability of the T+1 segments cut by the levels."""
        return np.diff(np.concatenate([[0.0], self.array, [1.0]]))


def as_grid(levels) -> QuantileGrid:
    if isinstance(levels, QuantileGrid):
        return levels
    return QuantileGrid(tuple(levels))


@dataclass(frozen=True)
class PyramidNode:
    """One node of the tree.

    ``index`` is the node's position in the grid; ``left``/``right`` are the
    grid positions of its nearest ancestors, with -1 and T standing for the
    boundaries 0 and 1.
    """

    m: int
    index: int
    tau: float
    left: int
    right: int
    tau_left: float
    tau_right: float
    alpha: float = 1.0
    beta: float = 1.0


def expected_split(node: PyramidNode) -> float:
    """Mean of the splitting variable that keeps the pyramid centred on U(0, 1)."""
    return (node.tau - node.tau_left) / (node.tau_right - node.tau_left)


@dataclass(frozen=True)
class PyramidTree:
    grid: QuantileGrid
    nodes: tuple[PyramidNode, ...]
    depth: int
    _arrays: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        nodes = self.nodes
        # Padded indexing: position 0 is the lower boundary, T + 1 the upper one.
        arrays = (
            np.array([n.index + 1 for n in nodes], dtype=np.int64),
            np.array([n.left + 1 for n in nodes], dtype=np.int64),
            np.array([n.right + 1 for n in nodes], dtype=np.int64),
            np.array([n.alpha for n in nodes], dtype=np.float64),
            np.array([n.beta for n in nodes], dtype=np.float64),
        )
        arrays += (betaln(arrays[3], arrays[4]),)
        for a in arrays:
            a.setflags(write=False)
        object.__setattr__(self, "_arrays", arrays)

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def arrays(self):
        """``(node, left, right, alpha, beta, log_beta_fn)`` in generation order."""
        return self._arrays

    @property
    def generation_order(self) -> list[float]:
        return [n.tau for n in self.nodes]


def beta_params(
    m: int, mean: float, concentration: Callable[[int], float] = default_concentration
) -> tuple[float, float]:
    """Beta parameters with the given mean; the smaller one is ``concentration(m)``."""
    if not 0.0 < mean < 1.0:
        raise ValueError("split mean must lie in (0, 1)")
    c = float(concentration(m))
    if mean < 0.5:
        return c, c * (1.0 - mean) / mean
    return c * mean / (1.0 - mean), c


def assign_beta_params(
    tree: PyramidTree, concentration: Callable[[int], float] = default_concentration
) -> PyramidTree:
    """Set Beta parameters so each split has mean :func:`expected_split`.

    The smaller of the two parameters equals ``concentration(m)``.
    """
    nodes = []
    for node in tree.nodes:
        a, b = beta_params(node.m, expected_split(node), concentration)
        nodes.append(replace(node, alpha=a, beta=b))
    return PyramidTree(tree.grid, tuple(nodes), tree.depth)


def build_oblique_tree(
    grid, concentration: Callable[[int], float] = default_concentration
) -> PyramidTree:
    """Build the pyramid over ``grid`` by recursive middle splitting.

    Each sublist contributes its middle level (the smaller of the two middle
    levels when its length is even); nodes are emitted breadth first.
    """
    grid = as_grid(grid)
    levels = grid.levels
    T = len(levels)
    bounds = (0.0,) + levels + (1.0,)
    nodes = []
    queue = deque([(0, T - 1, -1, T, 1)])
    while queue:
        lo, hi, left, right, m = queue.popleft()
        if lo > hi:
            continue
        mid = lo + (hi - lo) // 2
        nodes.append(
            PyramidNode(m, mid, levels[mid], left, right, bounds[left + 1], bounds[right + 1])
        )
        queue.append((lo, mid - 1, left, mid, m + 1))
        queue.append((mid + 1, hi, mid, right, m + 1))
    depth = max(n.m for n in nodes)
    return assign_beta_params(PyramidTree(grid, tuple(nodes), depth), concentration)


def unit_pyramid_from_splits(tree: PyramidTree, splits) -> np.ndarray:
    """Evaluate the pyramid recursion for given split values.

    ``splits`` holds one value per node in generation order, shape ``(T,)``
    or ``(n, T)``.  Returns quantiles aligned with the grid.
    """
    v = np.asarray(splits, dtype=float)
    single = v.ndim == 1
    v = np.atleast_2d(v)
    T = len(tree)
    q = np.zeros((v.shape[0], T + 2))
    q[:, -1] = 1.0
    node, left, right = tree.arrays[:3]
    for j in range(T):
        q[:, node[j]] = q[:, left[j]] * (1.0 - v[:, j]) + q[:, right[j]] * v[:, j]
    out = q[:, 1:-1]
    return out[0] if single else out


def sample_unit_pyramid(tree: PyramidTree, rng: np.random.Generator, size: int | None = None):
    """Draw quantile vectors from the pyramid centred on U(0, 1)."""
    n = 1 if size is None else int(size)
    alpha, beta = tree.arrays[3:5]
    v = rng.beta(alpha, beta, size=(n, len(tree)))
    # Splits at exactly 0 or 1 only come from underflow; redraw them.
    bad = (v <= 0.0) | (v >= 1.0)
    while bad.any():
        rows, cols = np.nonzero(bad)
        v[rows, cols] = rng.beta(alpha[cols], beta[cols])
        bad = (v <= 0.0) | (v >= 1.0)
    q = unit_pyramid_from_splits(tree, v)
    tied = np.any(np.diff(q, axis=1) <= 0, axis=1) | (q[:, 0] <= 0) | (q[:, -1] >= 1)
    if tied.any():
        q[tied] = sample_unit_pyramid(tree, rng, int(tied.sum()))
    return q[0] if size is None else q


def unit_prior_logdensity(tree: PyramidTree, q: Sequence[float]) -> float:
    """Joint log-density of the pyramid quantiles on [0, 1].

    Non-monotone input (any implied split outside (0, 1)) gives ``-inf``.
    """
    q = np.asarray(q, dtype=float)
    if q.shape != (len(tree),):
        raise ValueError(f"expected {len(tree)} quantiles, got shape {q.shape}")
    padded = np.concatenate([[0.0], q, [1.0]])
    if not np.all(np.diff(padded) > 0):
        return -np.inf
    node, left, right, alpha, beta, lbeta = tree.arrays
    width = padded[right] - padded[left]
    v = (padded[node] - padded[left]) / width
    logpdf = xlogy(alpha - 1.0, v) + xlog1py(beta - 1.0, -v) - lbeta
    return float(np.sum(logpdf - np.log(width)))
