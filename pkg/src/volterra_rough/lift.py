"""Driving paths, grid-sampled Volterra levels and their construction.

Tensor components of a level-n value are ordered by time: index 0 belongs to
the earliest integration variable. So z^{2}[i, j] pairs dx^i at the inner
(earlier) time with dx^j at the outer one.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gamma as gamma_fn

from . import _quad
from .grid import GridError, SimplexGrid, flat3, simplex3_size, triple_indices
from .kernel import VolterraKernel
from .sewing import sew_batch

MEMORY_CAP = 1 << 30  # bytes allowed for one dense level


class DriverError(ValueError):
    pass


class DrivingPath:
    """A d-dimensional driver x, either a smooth rule (with derivative) or grid samples."""

    def __init__(self, d, kind, alpha, value=None, derivative=None, grid=None, samples=None, spec=None):
        if kind not in ("smooth", "sampled"):
            raise DriverError(f"unknown driver kind {kind!r}")
        self.d = int(d)
        self.kind = kind
        self.alpha = float(alpha)
        self._value = value
        self._derivative = derivative
        self.grid = grid
        self._samples = None if samples is None else np.asarray(samples, dtype=float).reshape(-1, self.d)
        self.spec = spec or {}
        if kind == "sampled":
            if grid is None or self._samples is None:
                raise DriverError("sampled drivers need a grid and samples")
            if self._samples.shape[0] != grid.n_points:
                raise DriverError("one sample per grid point is required")
            if not np.all(np.isfinite(self._samples)):
                raise DriverError("samples must be finite")

    # constructors
    @classmethod
    def linear(cls, d: int = 1, slopes=None):
        slopes = np.ones(d) if slopes is None else np.asarray(slopes, dtype=float).reshape(d)
        return cls(
            d, "smooth", 1.0,
            value=lambda t: np.asarray(t, dtype=float)[..., None] * slopes,
            derivative=lambda t: np.broadcast_to(slopes, np.shape(t) + (d,)).astype(float),
            spec={"kind": "linear", "d": d, "slopes": slopes.tolist()},
        )

    @classmethod
    def sine(cls, d: int = 1):
        freq = np.arange(1, d + 1, dtype=float)
        return cls(
            d, "smooth", 1.0,
            value=lambda t: np.sin(np.asarray(t, dtype=float)[..., None] * freq),
            derivative=lambda t: freq * np.cos(np.asarray(t, dtype=float)[..., None] * freq),
            spec={"kind": "sine", "d": d},
        )

    @classmethod
    def from_samples(cls, grid: SimplexGrid, values, alpha: float):
        values = np.asarray(values, dtype=float)
        d = 1 if values.ndim == 1 else values.shape[1]
        return cls(d, "sampled", alpha, grid=grid, samples=values, spec={"kind": "samples"})

    @classmethod
    def from_dict(cls, spec: dict) -> "DrivingPath":
        kind = str(spec.get("kind", "")).lower()
        d = int(spec.get("d", 1))
        if kind == "linear":
            return cls.linear(d, spec.get("slopes"))
        if kind == "sine":
            return cls.sine(d)
        raise DriverError(f"unknown driver descriptor {spec!r}")

    def to_dict(self) -> dict:
        return dict(self.spec)

    @property
    def is_smooth(self) -> bool:
        return self.kind == "smooth"

    def __call__(self, t):
        if self.kind != "smooth":
            raise DriverError("sampled drivers can only be read on their grid")
        return self._value(t)

    def derivative(self, t):
        if self.kind != "smooth":
            raise DriverError("sampled drivers have no derivative rule")
        return self._derivative(t)

    def samples(self, g: SimplexGrid) -> np.ndarray:
        if self.kind == "smooth":
            return np.asarray(self(g.points), dtype=float).reshape(g.n_points, self.d)
        if g.n_points == self.grid.n_points and np.array_equal(g.points, self.grid.points):
            return self._samples
        idx = np.searchsorted(self.grid.points, g.points)
        if np.any(idx >= self.grid.n_points) or not np.allclose(self.grid.points[idx], g.points, atol=1e-12):
            raise DriverError("requested grid is not a sub-grid of the sample grid")
        return self._samples[idx]

    def scaled(self, c: float) -> "DrivingPath":
        if self.kind == "smooth":
            v, dv = self._value, self._derivative
            return DrivingPath(self.d, "smooth", self.alpha, lambda t: c * v(t), lambda t: c * dv(t),
                               spec=dict(self.spec, scale=c * self.spec.get("scale", 1.0)))
        return DrivingPath.from_samples(self.grid, c * self._samples, self.alpha)

    def c1_norm(self, g: SimplexGrid) -> float:
        """max over grid points of |x(t)| + |x'(t)| (Euclidean norms)."""
        if self.kind != "smooth":
            raise DriverError("the C^1 norm needs a smooth driver")
        x = np.linalg.norm(np.asarray(self(g.points)).reshape(g.n_points, self.d), axis=1)
        dx = np.linalg.norm(np.asarray(self.derivative(g.points)).reshape(g.n_points, self.d), axis=1)
        return float(np.max(x + dx))


# ------------------------------------------------------------------ levels

PROVENANCES = ("sewn", "left-point", "quadrature", "double-sum", "extended", "closed-form")


@dataclass(eq=False)
class VolterraLevel:
    """Level-n values z^{n, t_k}_{t_j t_i} on all grid triples i <= j <= k.

    ``values`` is dense with shape (N, N, N) + (d,)*n, indexed [i, j, k] =
    [lower, upper increment end, kernel time]; entries off the simplex are zero.
    """

    n: int
    d: int
    grid: SimplexGrid
    values: np.ndarray
    provenance: str = "sewn"
    cells: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        N = self.grid.n_points
        want = (N, N, N) + (self.d,) * self.n
        if self.values.shape != want:
            raise ValueError(f"values have shape {self.values.shape}, expected {want}")

    @property
    def value_shape(self):
        return (self.d,) * self.n

    def at(self, i, j, k):
        if not (0 <= i <= j <= k < self.grid.n_points):
            raise GridError(f"({i}, {j}, {k}) is not an ordered grid triple")
        return self.values[i, j, k]

    def at_times(self, s, t, tau):
        g = self.grid
        return self.at(g.index_of(s), g.index_of(t), g.index_of(tau))

    def with_values(self, values, provenance=None) -> "VolterraLevel":
        return VolterraLevel(self.n, self.d, self.grid, np.asarray(values, dtype=float),
                             provenance or self.provenance)

    def scaled(self, c: float) -> "VolterraLevel":
        return self.with_values(c * self.values)

    def packed(self) -> np.ndarray:
        """Values in packed triple order, shape (simplex3_size(N), d**n)."""
        i, j, k = triple_indices(self.grid.n_points)
        return self.values[i, j, k].reshape(i.size, -1)

    def take(self, i, j, k):
        """Vectorised lookup of z[i, j, k] for index arrays."""
        return self.values[np.asarray(i), np.asarray(j), np.asarray(k)]

    def diagonal(self):
        """z^{t_j}_{t_j t_i} as an (N, N, ...) array indexed [i, j]."""
        N = self.grid.n_points
        j = np.arange(N)
        return self.values[:, j, j]


class LazyLevel:
    """A level evaluated on demand at grid triples from fn(s, t, tau) (vectorised).

    Used where a dense (N, N, N) array would be too large, e.g. quadrature
    level 2 on fine grids. Values are cached per triple.
    """

    def __init__(self, n, d, grid, fn, provenance="quadrature"):
        self.n, self.d, self.grid, self.fn, self.provenance = n, d, grid, fn, provenance
        self._cache = {}

    @property
    def value_shape(self):
        return (self.d,) * self.n

    def take(self, i, j, k):
        i, j, k = np.broadcast_arrays(np.asarray(i), np.asarray(j), np.asarray(k))
        shape = i.shape
        i, j, k = i.ravel(), j.ravel(), k.ravel()
        if np.any(i > j) or np.any(j > k):
            raise GridError("indices must satisfy i <= j <= k")
        out = np.zeros((i.size,) + self.value_shape)
        keys = list(zip(i.tolist(), j.tolist(), k.tolist()))
        todo = [n for n, key in enumerate(keys) if key not in self._cache and key[0] < key[1]]
        if todo:
            todo_keys = sorted({keys[n] for n in todo})
            ti, tj, tk = (np.array(v) for v in zip(*todo_keys))
            p = self.grid.points
            vals = np.asarray(self.fn(p[ti], p[tj], p[tk]), dtype=float).reshape((-1,) + self.value_shape)
            self._cache.update(zip(todo_keys, vals))
        for n, key in enumerate(keys):
            if key[0] < key[1]:
                out[n] = self._cache[key]
        return out.reshape(shape + self.value_shape)

    def at(self, i, j, k):
        return self.take(i, j, k)


def _dense_guard(N, d, n):
    need = N**3 * d**n * 8
    if need > MEMORY_CAP:
        raise MemoryError(f"a dense level needs {need / 2**20:.0f} MiB (cap {MEMORY_CAP / 2**20:.0f} MiB)")


def level_from_function(fn, g: SimplexGrid, n: int, d: int, provenance="closed-form", strict_diag=False):
    """Fill a dense level from a vectorised fn(s, t, tau) on all grid triples with s < t."""
    N = g.n_points
    _dense_guard(N, d, n)
    i, j, k = triple_indices(N)
    keep = i < j
    i, j, k = i[keep], j[keep], k[keep]
    vals = np.zeros((N, N, N) + (d,) * n)
    p = g.points
    chunk = 20000
    for a in range(0, i.size, chunk):
        sl = slice(a, a + chunk)
        out = np.asarray(fn(p[i[sl]], p[j[sl]], p[k[sl]]), dtype=float)
        vals[i[sl], j[sl], k[sl]] = out.reshape((-1,) + (d,) * n)
    return VolterraLevel(n, d, g, vals, provenance)


def level1_from_cells(g: SimplexGrid, cells, provenance="sewn") -> VolterraLevel:
    """Dense level 1 from adjacent increments cells[m, k] = z^{t_k}_{t_{m+1} t_m}."""
    N = g.n_points
    d = cells.shape[-1]
    _dense_guard(N, d, 1)
    C = np.zeros((N, N, d))
    C[1:] = np.cumsum(cells, axis=0)
    vals = C[None, :, :, :] - C[:, None, :, :]
    i, j, k = np.indices((N, N, N), sparse=True)
    vals = vals * ((i <= j) & (j <= k))[..., None]
    return VolterraLevel(1, d, g, vals, provenance, cells=np.asarray(cells))


def level2_from_cells(g: SimplexGrid, cells1, cells2=None, provenance="double-sum") -> VolterraLevel:
    """Dense level 2 by the discrete left-point recursion

        z2[i, j+1, k] = z2[i, j, k] + z1[i, j, j] (x) cells1[j, k] + cells2[j, k].

    This is the discrete iterated sum; it satisfies the Chen identity exactly
    against the left-point discrete convolution.
    """
    N = g.n_points
    d = cells1.shape[-1]
    _dense_guard(N, d, 2)
    C = np.zeros((N, N, d))
    C[1:] = np.cumsum(cells1, axis=0)
    diag = C[np.arange(N), np.arange(N)]  # C[m, m]
    vals = np.zeros((N, N, N, d, d))
    m_idx = np.arange(N - 1)[:, None]
    k_idx = np.arange(N)[None, :]
    kmask = k_idx >= m_idx + 1
    for i in range(N - 1):
        z1_diag = diag[i:N - 1] - C[i, i:N - 1]  # z1[i, m, m] for m = i..N-2
        inc = z1_diag[:, None, :, None] * cells1[i:, :, None, :]
        if cells2 is not None:
            inc = inc + cells2[i:]
        inc = inc * kmask[i:, :, None, None]
        acc = np.cumsum(inc, axis=0)  # acc[m - i] = sum_{q=i}^{m} inc[q]
        vals[i, i + 1:, :] = acc
    i, j, k = np.indices((N, N, N), sparse=True)
    vals = vals * ((i <= j) & (j <= k))[..., None, None]
    return VolterraLevel(2, d, g, vals, provenance,
                         cells=None if cells2 is None else np.asarray(cells2))


# ------------------------------------------------------------ level 1 lift

def sewing_exponents(gamma: float):
    """Error exponents of left-point Riemann sums of k(tau, s) x_ts for smooth x."""
    return (1.0 - gamma, 1.0, 2.0 - gamma, 2.0, 3.0 - gamma)


def left_point_germ(k: VolterraKernel, x: DrivingPath):
    def xi(s, t, tau):
        return k.eval(tau, s)[..., None] * (x(t) - x(s))
    return xi


def _pairs(N):
    m, kk = np.nonzero(np.arange(N)[None, :] >= np.arange(N - 1)[:, None] + 1)
    return m, kk


def lift_level1(k: VolterraKernel, x: DrivingPath, g: SimplexGrid, sub_level: int = 10,
                extrapolate: bool = True) -> VolterraLevel:
    """Level-1 Volterra lift z^{1,tau}_{ts} on the grid.

    Adjacent increments are sewn below the grid from the germ k(tau, s) x_ts
    for smooth drivers (with Richardson acceleration over the last dyadic
    levels), or taken as the single left-point term for sampled drivers.
    Everything else follows by summation, so level 1 is additive in (s, t).
    """
    N = g.n_points
    if x.alpha - k.gamma <= 0:
        raise ValueError("need alpha - gamma > 0")
    m, kk = _pairs(N)
    p = g.points
    cells = np.zeros((N - 1, N, x.d))
    if x.is_smooth:
        exps = sewing_exponents(k.gamma) if extrapolate else None
        vals = sew_batch(left_point_germ(k, x), p[m], p[m + 1], p[kk], sub_level, extrapolate=exps)
        cells[m, kk] = vals
        prov = "sewn"
    else:
        xs = x.samples(g)
        dx = np.diff(xs, axis=0)
        cells[m, kk] = k.eval(p[kk], p[m])[:, None] * dx[m]
        prov = "left-point"
    lvl = level1_from_cells(g, cells, prov)
    lvl.meta.update(sub_level=sub_level if x.is_smooth else 0)
    return lvl


# ------------------------------------------------- smooth-driver evaluators

class SmoothLevel:
    """Off-grid evaluator of levels 1 and 2 for a smooth driver.

    Uses Gauss-Jacobi product rules; the inner level-1 integral is written as
    (r - s)^(1-gamma) G(r) with G smooth, so both end-point factors are absorbed.
    """

    def __init__(self, k: VolterraKernel, x: DrivingPath, n: int, nodes: int = _quad.N_NODES):
        if not x.is_smooth:
            raise DriverError("off-grid evaluation needs a smooth driver")
        if n not in (1, 2):
            raise ValueError("only levels 1 and 2 have off-grid evaluators")
        self.k, self.x, self.n, self.nodes = k, x, n, nodes
        self.d = x.d

    def _G(self, s, r):
        """G(r) = int_0^1 (1 - th)^(-gamma) reg((r - s)(1 - th)) x'(s + th (r - s)) dth."""
        th, w = _quad.inner_weights(self.k.gamma, self.nodes)
        span = (r - s)[..., None]
        q = s[..., None] + th * span
        vals = self.x.derivative(q) * self.k.regular(span * (1.0 - th))[..., None]
        return np.einsum("...nd,n->...d", vals, w)

    def __call__(self, s, t, tau):
        s, t, tau = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (s, t, tau))
        s, t, tau = np.broadcast_arrays(s, t, tau)
        shape = s.shape
        s, t, tau = s.ravel(), t.ravel(), tau.ravel()
        if np.any(s > t) or np.any(t > tau):
            raise ValueError("need s <= t <= tau")
        kern, x = self.k, self.x
        if self.n == 1:
            def phi(r, sel):
                return kern.regular(tau[sel, None] - r)[..., None] * x.derivative(r)
            out = _quad.singular_integral(phi, s, t, tau, kern.gamma, 0.0, self.nodes)
        else:
            def phi(r, sel):
                G = self._G(np.broadcast_to(s[sel, None], r.shape), r)
                outer = kern.regular(tau[sel, None] - r)[..., None] * x.derivative(r)
                return G[..., :, None] * outer[..., None, :]
            out = _quad.singular_integral(phi, s, t, tau, kern.gamma, 1.0 - kern.gamma, self.nodes)
        return out.reshape(shape + (self.d,) * self.n)


def cell_increments(k: VolterraKernel, x: DrivingPath, g: SimplexGrid, nodes: int = _quad.N_NODES):
    """Adjacent-cell increments of levels 1 and 2 for every kernel time on the grid.

    Returns (c1, c2) with c1[m, kk] = z^{1, t_kk}_{t_{m+1} t_m} (shape (N-1, N, d))
    and c2[m, kk] = z^{2, t_kk}_{t_{m+1} t_m} (shape (N-1, N, d, d)); entries with
    kk <= m are zero. Sampled drivers give left-point c1 and c2 = 0.
    """
    N = g.n_points
    p = g.points
    d = x.d
    c1 = np.zeros((N - 1, N, d))
    c2 = np.zeros((N - 1, N, d, d))
    if not x.is_smooth:
        m, kk = _pairs(N)
        c1[m, kk] = k.eval(p[kk], p[m])[:, None] * np.diff(x.samples(g), axis=0)[m]
        return c1, c2
    gam = k.gamma
    lo, hi = p[:-1], p[1:]
    h = hi - lo
    ev = SmoothLevel(k, x, 2, nodes)

    def nodes_on(a, b, wa, wb):
        xg, wg = _quad.jacobi_rule(nodes, wa, wb)
        half = (b - a) / 2
        r = a[:, None] + half[:, None] * (1.0 + xg)
        return r, wg[None, :] * half[:, None] ** (1.0 + wa + wb)

    # level 1: whole cell; Legendre when tau is beyond the cell, Jacobi when tau = hi
    r_off, w_off = nodes_on(lo, hi, 0.0, 0.0)
    r_dia, w_dia = nodes_on(lo, hi, -gam, 0.0)
    xd_off = x.derivative(r_off)  # (N-1, n, d)
    xd_dia = x.derivative(r_dia)
    # level 2: split at the midpoint; left half carries (r - lo)^(1-gamma)
    mid = lo + h / 2
    rl, wl = nodes_on(lo, mid, 0.0, 1.0 - gam)
    rr_off, wr_off = nodes_on(mid, hi, 0.0, 0.0)
    rr_dia, wr_dia = nodes_on(mid, hi, -gam, 0.0)
    lo_b = lo[:, None]

    def integrand2(r):
        G = ev._G(np.broadcast_to(lo_b, r.shape), r)
        return G[..., :, None] * x.derivative(r)[..., None, :]

    A_l = integrand2(rl)
    A_roff = integrand2(rr_off) * ((rr_off - lo_b) ** (1.0 - gam))[..., None, None]
    A_rdia = integrand2(rr_dia) * ((rr_dia - lo_b) ** (1.0 - gam))[..., None, None]

    for m in range(N - 1):
        taus = p[m + 2:]
        if taus.size:
            kv = k.unchecked(taus[:, None], r_off[m][None, :])  # (nt, n)
            c1[m, m + 2:] = np.einsum("tn,n,nd->td", kv, w_off[m], xd_off[m])
            kl = k.unchecked(taus[:, None], rl[m][None, :])
            kr = k.unchecked(taus[:, None], rr_off[m][None, :])
            c2[m, m + 2:] = (np.einsum("tn,n,nij->tij", kl, wl[m], A_l[m])
                             + np.einsum("tn,n,nij->tij", kr, wr_off[m], A_roff[m]))
        # kernel time equal to the cell end: singular factor in the weights
        reg = k.regular(hi[m] - r_dia[m])
        c1[m, m + 1] = np.einsum("n,n,nd->d", reg, w_dia[m], xd_dia[m])
        kl = k.unchecked(hi[m], rl[m])
        regr = k.regular(hi[m] - rr_dia[m])
        c2[m, m + 1] = (np.einsum("n,n,nij->ij", kl, wl[m], A_l[m])
                        + np.einsum("n,n,nij->ij", regr, wr_dia[m], A_rdia[m]))
    return c1, c2


# ------------------------------------------------------- nested quadrature

def _powdiff(A, B, p):
    """A^p - B^p for A > B >= 0 without cancellation."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(A > 0, (A - B) / np.where(A > 0, A, 1.0), 0.0)
        out = -(A**p) * np.expm1(p * np.log1p(-ratio))
    return np.where(B <= 0, A**p, out)


def _cell_weights(A, B, h, gam):
    """Weights (left, right) of int over a cell of (distance)^(-gam) times the
    linear interpolant, where A and B are the distances from the singular point
    to the cell's left and right nodes."""
    I0 = _powdiff(A, B, 1.0 - gam) / (1.0 - gam)
    I1 = A * I0 - _powdiff(A, B, 2.0 - gam) / (2.0 - gam)
    right = I1 / h
    return I0 - right, right


def _signature_once(k, x, n_max, s, t, tau, depth):
    M = 2**depth
    h = (t - s) / M
    r = s + h * np.arange(M + 1)
    r[-1] = t
    xd = np.asarray(x.derivative(r), dtype=float).reshape(M + 1, x.d)
    gam = k.gamma
    lag = np.arange(M + 2, dtype=float)
    aL, aR = _cell_weights(lag[1:] * h, lag[:-1] * h, h, gam)  # index l-1 for lag l
    aL = np.concatenate([[0.0], aL])
    aR = np.concatenate([[0.0], aR])
    P = np.empty(M + 1)
    P[0] = aR[1]
    P[1:] = aL[1:M + 1] + aR[2:M + 2]
    P *= k.regular(lag[:M + 1] * h)
    # node 0 has no cell to its left: drop the right-node weight the Toeplitz form gives it
    edge = aR[1:M + 2] * k.regular(lag[:M + 1] * h)
    wl, wr = _cell_weights(tau - r[:-1], tau - r[1:], h, gam)
    reg_end = k.regular(tau - r)
    F = np.ones((M + 1, 1))
    out = []
    for n in range(1, n_max + 1):
        gvals = (F[:, :, None] * xd[:, None, :]).reshape(M + 1, -1)
        gk = gvals * reg_end[:, None]
        val = wl @ gk[:-1] + wr @ gk[1:]
        out.append(val.reshape((x.d,) * n))
        if n < n_max:
            F = np.empty_like(gvals)
            for c in range(gvals.shape[1]):
                F[:, c] = np.convolve(gvals[:, c], P)[:M + 1] - edge * gvals[0, c]
            F[0] = 0.0
    return out


def smooth_signature(k: VolterraKernel, x: DrivingPath, n_max: int, s: float, t: float, tau: float,
                     depth: int = 12, extrapolate: bool = True):
    """Iterated Volterra integrals z^{n,tau}_{ts}, n = 1..n_max, of a smooth driver.

    Nested product trapezoidal rule on 2^depth uniform cells of [s, t]: each
    singular factor (r_{j+1} - r_j)^(-gamma) is integrated exactly against the
    piecewise-linear interpolant of everything else. With ``extrapolate`` the
    results at depth and depth-1 are combined to cancel the leading h^(2-gamma)
    error term.
    """
    if not x.is_smooth:
        raise DriverError("smooth_signature needs a smooth driver")
    if not 1 <= n_max <= 4:
        raise ValueError("n_max must be between 1 and 4")
    if not (s < t <= tau):
        raise ValueError("need s < t <= tau")
    fine = _signature_once(k, x, n_max, s, t, tau, depth)
    if not extrapolate:
        return fine
    coarse = _signature_once(k, x, n_max, s, t, tau, depth - 1)
    f = 2.0 ** (2.0 - k.gamma)
    return [(f * a - b) / (f - 1.0) for a, b in zip(fine, coarse)]


def gamma_bound(M: float, gam: float, n: int, s: float, t: float, tau: float) -> float:
    """(M Gamma(1-g))^n / Gamma(n(1-g)) (tau-s)^(-g) (t-s)^((n-1)(1-g)+1)."""
    return ((M * gamma_fn(1 - gam)) ** n / gamma_fn(n * (1 - gam))
            * (tau - s) ** (-gam) * (t - s) ** ((n - 1) * (1 - gam) + 1))


def gamma_bound_check(values, M: float, gam: float, s: float, t: float, tau: float) -> np.ndarray:
    """Ratio |z^n| / bound for each level n = 1, 2, ... (Frobenius norm)."""
    return np.array([np.linalg.norm(np.ravel(v)) / gamma_bound(M, gam, n, s, t, tau)
                     for n, v in enumerate(values, start=1)])


# ------------------------------------------------------------------ export

_MAGIC = b"VLVL"
_HEADER = struct.Struct("<4sIIId")


def write_level(level: VolterraLevel, path, fmt: str = "binary") -> None:
    """Header (n, d, N, T) then values in packed triple order.

    Binary: little-endian; 4-byte magic, uint32 n, d, N, float64 T, then
    float64 values. CSV: a comment header line, then rows i,j,k,v0,v1,...
    """
    path = Path(path)
    N = level.grid.n_points
    data = level.packed()
    if fmt == "binary":
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(_MAGIC, level.n, level.d, N, level.grid.T))
            fh.write(data.astype("<f8").tobytes())
    elif fmt == "csv":
        i, j, k = triple_indices(N)
        cols = ",".join(f"v{c}" for c in range(data.shape[1]))
        with open(path, "w") as fh:
            fh.write(f"# n={level.n},d={level.d},N={N},T={level.grid.T!r}\n")
            fh.write(f"i,j,k,{cols}\n")
            for row in range(data.shape[0]):
                fh.write(f"{i[row]},{j[row]},{k[row]}," + ",".join(repr(float(v)) for v in data[row]) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")


def read_level(path, provenance: str = "sewn") -> VolterraLevel:
    """Read a level written by :func:`write_level` (binary or CSV, detected from the content)."""
    from .grid import make_uniform
    raw = Path(path).read_bytes()
    if raw[:4] == _MAGIC:
        _, n, d, N, T = _HEADER.unpack_from(raw)
        data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(simplex3_size(N), d**n)
    elif raw[:2] == b"# ":
        lines = raw.decode().splitlines()
        head = dict(item.split("=") for item in lines[0][2:].split(","))
        n, d, N, T = int(head["n"]), int(head["d"]), int(head["N"]), float(head["T"])
        table = np.loadtxt(lines[2:], delimiter=",", ndmin=2)
        data = table[:, 3:]
    else:
        raise ValueError("not a level file")
    L = int(round(np.log2(N - 1)))
    g = make_uniform(T, L)
    vals = np.zeros((N, N, N) + (d,) * n)
    i, j, k = triple_indices(N)
    vals[i, j, k] = data.reshape((-1,) + (d,) * n)
    return VolterraLevel(n, d, g, vals, provenance)


__all__ = [
    "DrivingPath", "VolterraLevel", "LazyLevel", "SmoothLevel", "lift_level1", "level1_from_cells",
    "level2_from_cells", "level_from_function", "cell_increments", "smooth_signature",
    "gamma_bound", "gamma_bound_check", "write_level", "read_level", "flat3",
]
