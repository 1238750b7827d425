"""Uniform dyadic time grids and packed indexing for simplex-shaped storage."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_DEPTH = 24


class GridError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SimplexGrid:
    """Time grid 0 = t_0 < ... < t_{N-1} = T.

    ``dyadic_depth`` is set when the grid is the uniform grid of 2^L + 1 points.
    """

    points: np.ndarray
    dyadic_depth: int | None = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise GridError("a grid needs at least two points")
        if pts[0] != 0.0:
            raise GridError("grids start at t_0 = 0")
        if np.any(np.diff(pts) <= 0):
            raise GridError("grid points must be strictly increasing")
        if self.dyadic_depth is not None and pts.size != 2**self.dyadic_depth + 1:
            raise GridError("dyadic depth does not match the number of points")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def T(self) -> float:
        return float(self.points[-1])

    @property
    def n_points(self) -> int:
        return int(self.points.size)

    @property
    def h(self) -> float:
        """Mesh size (the common step for uniform grids)."""
        return float(np.max(np.diff(self.points)))

    @property
    def is_uniform(self) -> bool:
        return self.dyadic_depth is not None

    def index_of(self, t: float) -> int:
        """Index of a time that must coincide with a grid point (up to rounding)."""
        i = int(np.searchsorted(self.points, t - 1e-12 * max(self.T, 1.0)))
        if i >= self.n_points or abs(self.points[i] - t) > 1e-9 * max(self.T, 1.0):
            raise GridError(f"time {t!r} is not a grid point")
        return i

    def coarsen(self, factor: int = 2) -> "SimplexGrid":
        if self.dyadic_depth is None or factor < 1 or (factor & (factor - 1)):
            raise GridError("coarsening needs a dyadic grid and a power-of-two factor")
        shift = factor.bit_length() - 1
        if shift > self.dyadic_depth - 1:
            raise GridError("cannot coarsen below one interval")
        return SimplexGrid(self.points[::factor], self.dyadic_depth - shift)

    def to_dict(self) -> dict:
        return {"T": self.T, "depth": self.dyadic_depth, "n_points": self.n_points}


def make_uniform(T: float, L: int) -> SimplexGrid:
    if not T > 0:
        raise GridError(f"horizon must be positive, got {T!r}")
    if int(L) != L or not 1 <= L <= MAX_DEPTH:
        raise GridError(f"depth must be an integer in [1, {MAX_DEPTH}], got {L!r}")
    L = int(L)
    n = 2**L
    # i*T/n is exact for dyadic n, so refining reproduces old points bitwise
    pts = np.arange(n + 1, dtype=float) * (T / n)
    pts[-1] = T
    return SimplexGrid(pts, L)


def refine(g: SimplexGrid) -> SimplexGrid:
    if g.dyadic_depth is None:
        raise GridError("only dyadic grids can be refined")
    if g.dyadic_depth >= MAX_DEPTH:
        raise GridError("maximum depth reached")
    old = g.points
    new = np.empty(2 * old.size - 1)
    new[0::2] = old
    new[1::2] = (old[:-1] + old[1:]) / 2
    return SimplexGrid(new, g.dyadic_depth + 1)


# ---------------------------------------------------------------- indexing
# Pairs (i <= j) are packed column by column: flat2(i, j) = j(j+1)/2 + i.
# Triples (i <= j <= k) are packed by k, then j, then i:
#   flat3(i, j, k) = k(k+1)(k+2)/6 + j(j+1)/2 + i.
# Neither formula depends on N, so a prefix of the storage is the storage of a
# smaller grid.


def simplex2_size(N: int) -> int:
    if N < 2:
        raise GridError("need N >= 2")
    return N * (N + 1) // 2


def simplex3_size(N: int) -> int:
    if N < 2:
        raise GridError("need N >= 2")
    return N * (N + 1) * (N + 2) // 6


def _check_order(*idx):
    arrs = [np.asarray(a) for a in idx]
    if np.any(arrs[0] < 0):
        raise GridError("negative index")
    for a, b in zip(arrs[:-1], arrs[1:]):
        if np.any(a > b):
            raise GridError(f"indices must be ordered, got {idx}")
    return arrs


def flat2(i, j):
    i, j = _check_order(i, j)
    return j * (j + 1) // 2 + i


def tuple2(f):
    f = np.asarray(f, dtype=np.int64)
    j = ((np.sqrt(8.0 * f + 1) - 1) // 2).astype(np.int64)
    # guard against rounding in the square root
    j = np.where(j * (j + 1) // 2 > f, j - 1, j)
    j = np.where((j + 1) * (j + 2) // 2 <= f, j + 1, j)
    i = f - j * (j + 1) // 2
    if i.ndim == 0:
        return int(i), int(j)
    return i, j


def flat3(i, j, k):
    i, j, k = _check_order(i, j, k)
    return k * (k + 1) * (k + 2) // 6 + j * (j + 1) // 2 + i


def tuple3(f):
    f = np.asarray(f, dtype=np.int64)
    k = np.floor(np.cbrt(6.0 * f)).astype(np.int64)
    tet = lambda m: m * (m + 1) * (m + 2) // 6  # noqa: E731
    for _ in range(3):
        k = np.where(tet(k) > f, k - 1, k)
        k = np.where(tet(k + 1) <= f, k + 1, k)
    j, i = None, None
    rest = f - tet(k)
    i, j = tuple2(rest)
    if np.ndim(f) == 0:
        return int(i), int(j), int(k)
    return np.asarray(i), np.asarray(j), k


def triple_indices(N: int, strict: bool = False):
    """All ordered triples (i, j, k) in packed order, as three index arrays."""
    f = np.arange(simplex3_size(N))
    i, j, k = tuple3(f)
    if strict:
        keep = (i < j) & (j < k)
        return i[keep], j[keep], k[keep]
    return i, j, k
