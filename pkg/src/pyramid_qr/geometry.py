"""Covariate hull, pivot frame and non-crossing proposal bounds.

Quantile planes are affine in the covariates, so they are ordered on the
whole convex hull of the data as soon as they are ordered at its vertices.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

log = logging.getLogger(__name__)

MAX_BOX_DIM = 10


class DegenerateDataError(ValueError):
    """Covariates do not span a full-dimensional region."""


@dataclass(frozen=True, eq=False)
class PivotFrame:
    """Affine map placing pivot 0 at the origin and pivot p at the p-th unit vector.

    ``origin`` is pivot 0 in raw coordinates and column ``p - 1`` of ``basis``
    is ``pivot_p - pivot_0``.
    """

    origin: np.ndarray
    basis: np.ndarray

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=float).reshape(-1)
        basis = np.asarray(self.basis, dtype=float).reshape(origin.size, origin.size)
        if origin.size and abs(np.linalg.det(basis)) <= 1e-12 * np.abs(basis).max() ** origin.size:
            raise DegenerateDataError("pivot frame is singular")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "_inverse", np.linalg.inv(basis) if origin.size else basis)

    @classmethod
    def identity(cls, dim: int) -> "PivotFrame":
        return cls(np.zeros(dim), np.eye(dim))

    @classmethod
    def from_pivots(cls, pivots) -> "PivotFrame":
        pivots = np.asarray(pivots, dtype=float)
        return cls(pivots[0], (pivots[1:] - pivots[0]).T)

    @property
    def dim(self) -> int:
        return self.origin.size

    @property
    def pivots(self) -> np.ndarray:
        """Raw coordinates of the P + 1 pivots."""
        return np.vstack([self.origin, self.origin + self.basis.T])

    def to_pivot(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        return (X - self.origin) @ self._inverse.T

    def to_raw(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=float).reshape(-1, self.dim)
        return Z @ self.basis.T + self.origin

    def raw_coefficients(self, Q) -> np.ndarray:
        """Intercept and raw-scale slopes of the planes through pivot values ``Q``.

        ``Q`` has shape ``(..., P + 1, T)``; the result has the same shape
        with row 0 the intercept and row p the slope on covariate p.
        """
        Q = np.asarray(Q, dtype=float)
        slopes_pivot = Q[..., 1:, :] - Q[..., :1, :]
        slopes = np.einsum("qp,...qt->...pt", self._inverse, slopes_pivot)
        intercept = Q[..., 0, :] - np.einsum("p,...pt->...t", self.origin, slopes)
        return np.concatenate([intercept[..., None, :], slopes], axis=-2)


def barycentric(Z) -> np.ndarray:
    """Weights on the pivots of points given in pivot coordinates."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    return np.column_stack([1.0 - Z.sum(axis=1), Z])


@dataclass(frozen=True, eq=False)
class HullVertexSet:
    frame: PivotFrame
    vertices: np.ndarray  # pivot coordinates, (E, P)
    is_pivot: np.ndarray  # (E,) bool
    method: str

    @property
    def raw(self) -> np.ndarray:
        return self.frame.to_raw(self.vertices)

    @property
    def extra(self) -> np.ndarray:
        """Non-pivotal vertices, where ordering must be enforced."""
        return self.vertices[~self.is_pivot]

    @property
    def weights(self) -> np.ndarray:
        return barycentric(self.vertices) if self.frame.dim else np.ones((len(self.vertices), 1))

    @property
    def extra_weights(self) -> np.ndarray:
        return self.weights[~self.is_pivot]


# -- convex hull ---------------------------------------------------------------

_ORIENT_EPS = 3.3306690738754716e-16


def orientation(o, a, b) -> int:
    """Sign of the cross product (a - o) x (b - o), exact."""
    ax, ay = a[0] - o[0], a[1] - o[1]
    bx, by = b[0] - o[0], b[1] - o[1]
    lhs, rhs = ax * by, ay * bx
    det = lhs - rhs
    bound = 8 * _ORIENT_EPS * (abs(lhs) + abs(rhs) + abs(ax) + abs(ay) + abs(bx) + abs(by))
    if abs(det) > bound:
        return 1 if det > 0 else -1
    # Floats are dyadic rationals, so this is exact.
    fo = [Fraction(float(v)) for v in o]
    fa = [Fraction(float(v)) for v in a]
    fb = [Fraction(float(v)) for v in b]
    d = (fa[0] - fo[0]) * (fb[1] - fo[1]) - (fa[1] - fo[1]) * (fb[0] - fo[0])
    return (d > 0) - (d < 0)


def hull_2d(points) -> np.ndarray:
    """Indices of the strict hull vertices, counter-clockwise (monotone chain)."""
    pts = np.asarray(points, dtype=float)
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    # drop exact duplicates
    uniq = [order[0]]
    for i in order[1:]:
        if not np.array_equal(pts[i], pts[uniq[-1]]):
            uniq.append(i)
    if len(uniq) < 3:
        return np.array(uniq)

    def chain(idx):
        out = []
        for i in idx:
            while len(out) >= 2 and orientation(pts[out[-2]], pts[out[-1]], pts[i]) <= 0:
                out.pop()
            out.append(i)
        return out

    lower = chain(uniq)
    upper = chain(uniq[::-1])
    return np.array(lower[:-1] + upper[:-1])


def bounding_box(points) -> np.ndarray:
    lo, hi = points.min(axis=0), points.max(axis=0)
    corners = itertools.product(*[(a, b) for a, b in zip(lo, hi)])
    return np.array(list(corners), dtype=float)


def hull_vertices(points) -> tuple[np.ndarray, str]:
    """Raw coordinates of the vertices enclosing ``points`` and the method used."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or len(pts) == 0:
        raise ValueError("need a non-empty (N, P) covariate array")
    N, P = pts.shape
    if P == 0:
        return np.zeros((1, 0)), "none"
    if np.all(pts == pts[0]):
        raise DegenerateDataError("all covariate rows are identical")
    if P == 1:
        return np.array([[pts.min()], [pts.max()]]), "interval"
    if P == 2:
        idx = hull_2d(pts)
        if len(idx) >= 3:
            return pts[idx], "exact-2d"
    elif P == 3:
        from scipy.spatial import ConvexHull, QhullError

        try:
            return pts[ConvexHull(pts).vertices], "qhull"
        except (QhullError, ValueError):
            pass
    if P > MAX_BOX_DIM:
        raise ValueError(f"bounding-box fallback supports at most {MAX_BOX_DIM} covariates")
    box = bounding_box(pts)
    if np.any(pts.max(axis=0) == pts.min(axis=0)):
        raise DegenerateDataError("a covariate is constant; the covariate region is flat")
    box_volume = float(np.prod(pts.max(axis=0) - pts.min(axis=0)))
    hull_volume = float("nan")
    if P <= 6 and N > P + 1:
        from scipy.spatial import ConvexHull, QhullError

        try:
            hull_volume = ConvexHull(pts).volume
        except (QhullError, ValueError):
            pass
    log.warning(
        "using %d bounding-box corners as constraint vertices (P=%d); "
        "hull volume %.4g vs box volume %.4g",
        len(box), P, hull_volume, box_volume,
    )
    return box, "bounding-box"


def _span_residual(V, chosen):
    base = V[chosen[0]]
    D = (V - base).T
    if len(chosen) == 1:
        return np.linalg.norm(D, axis=0)
    B = (V[chosen[1:]] - base).T
    coef, *_ = np.linalg.lstsq(B, D, rcond=None)
    return np.linalg.norm(D - B @ coef, axis=0)


def select_pivots(vertices) -> np.ndarray:
    """Choose P + 1 well separated, affinely independent vertices.

    Greedy farthest-from-span selection seeded at the lexicographic minimum,
    followed by volume-increasing swaps until every vertex has barycentric
    weights in [-1, 1] with respect to the chosen simplex.
    """
    V = np.asarray(vertices, dtype=float)
    E, P = V.shape
    if P == 0:
        return np.array([0])
    scale = np.abs(V - V.mean(axis=0)).max()
    chosen = [int(np.lexsort(V.T[::-1])[0])]
    for _ in range(P):
        r = _span_residual(V, chosen)
        r[chosen] = -1.0
        best = int(np.argmax(r))
        if r[best] <= 1e-9 * scale:
            raise DegenerateDataError("hull vertices are not affinely independent")
        chosen.append(best)
    for _ in range(100 * E):
        lam = barycentric(PivotFrame.from_pivots(V[chosen]).to_pivot(V))
        e, j = np.unravel_index(np.argmax(np.abs(lam)), lam.shape)
        if abs(lam[e, j]) <= 1.0 + 1e-9:
            break
        chosen[j] = int(e)
    return np.array(chosen)


def compute_hull(X, frame: PivotFrame | None = None) -> HullVertexSet:
    """Constraint vertices of the covariate region, in pivot coordinates.

    Without a ``frame`` the pivots are selected among the vertices.
    """
    X = np.asarray(X, dtype=float)
    raw, method = hull_vertices(X)
    if frame is None:
        idx = select_pivots(raw)
        frame = PivotFrame.from_pivots(raw[idx])
        is_pivot = np.zeros(len(raw), dtype=bool)
        is_pivot[idx] = True
    else:
        scale = max(1.0, np.abs(raw).max()) if raw.size else 1.0
        d = np.linalg.norm(raw[:, None, :] - frame.pivots[None, :, :], axis=2)
        is_pivot = (d <= 1e-12 * scale).any(axis=1)
    return HullVertexSet(frame, frame.to_pivot(raw), is_pivot, method)


def hull_from_vertices(frame: PivotFrame, vertices_pivot) -> HullVertexSet:
    """Hull given directly in pivot coordinates (pivots flagged automatically)."""
    Z = np.asarray(vertices_pivot, dtype=float).reshape(-1, frame.dim)
    corners = np.vstack([np.zeros(frame.dim), np.eye(frame.dim)])
    is_pivot = (np.abs(Z[:, None, :] - corners[None]).max(axis=2) <= 1e-12).any(axis=1)
    return HullVertexSet(frame, Z, is_pivot, "given")


# -- proposal bounds -------------------------------------------------------------

def _pivot_values(state):
    return np.asarray(getattr(state, "Q", state), dtype=float)


def vertex_bounds(state, vertex, p: int, t: int) -> tuple[float, float]:
    """Bounds on ``Q[p, t]`` keeping level ``t`` between its neighbours at one vertex.

    ``vertex`` is in pivot coordinates.  A zero weight on pivot ``p`` leaves
    the coordinate unconstrained by this vertex.
    """
    Q = _pivot_values(state)
    T = Q.shape[1]
    lam = barycentric(vertex)[0] if Q.shape[0] > 1 else np.ones(1)
    lp = lam[p]
    if lp == 0.0:
        return -np.inf, np.inf
    qe = lam @ Q
    rest = qe[t] - lp * Q[p, t]
    below = qe[t - 1] if t > 0 else -np.inf
    above = qe[t + 1] if t < T - 1 else np.inf
    a, b = (below - rest) / lp, (above - rest) / lp
    return (a, b) if lp > 0 else (b, a)


def combined_bounds(state, hull: HullVertexSet, p: int, t: int) -> tuple[float, float]:
    """Intersection of all vertex bounds with the pivot's own ordering window.

    Vectorised over vertices; raises if the current state is infeasible.
    """
    Q = _pivot_values(state)
    T = Q.shape[1]
    lo = Q[p, t - 1] if t > 0 else -np.inf
    hi = Q[p, t + 1] if t < T - 1 else np.inf
    L = hull.extra_weights
    lam = L[:, p]
    keep = lam != 0.0
    if keep.any():
        L, lam = L[keep], lam[keep]
        qe = L @ Q
        rest = qe[:, t] - lam * Q[p, t]
        with np.errstate(invalid="ignore"):
            below = (qe[:, t - 1] - rest) / lam if t > 0 else np.full(len(lam), -np.inf) * lam
            above = (qe[:, t + 1] - rest) / lam if t < T - 1 else np.full(len(lam), np.inf) * lam
        lower = np.where(lam > 0, below, above)
        upper = np.where(lam > 0, above, below)
        lo = max(lo, lower.max())
        hi = min(hi, upper.min())
    if not lo < hi:
        raise RuntimeError(
            f"empty proposal interval for pivot {p}, level {t}: [{lo}, {hi}]; "
            "current state crosses at a hull vertex"
        )
    return float(lo), float(hi)


def crosses(Q, weights) -> bool:
    """True when the planes are not strictly increasing at some weighted point."""
    q = np.asarray(weights, dtype=float) @ _pivot_values(Q)
    return bool(np.any(np.diff(q, axis=1) <= 0))
