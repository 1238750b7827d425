"""The convolution product, Chen-identity residuals and the extension of levels.

Grid operations take grid indices and evaluate the defining Riemann sums at
grid resolution with left points; these are the discrete objects for which
the Chen identity is an exact algebraic fact. Function-mode variants take
off-grid evaluators and sew below any grid.

Products are ordered in time: ``op="outer"`` returns y (x) z with the factor
attached to the earlier time first; ``op="apply"`` contracts the trailing axes
of y against z (y acting as a linear map on the driver's values).
"""
from __future__ import annotations

import numpy as np

from .grid import GridError
from .lift import VolterraLevel, level2_from_cells
from .sewing import DEFAULT_TOL, richardson, sew

CHEN_TOL_FACTOR = 100


class ChenPreconditionError(ValueError):
    pass


def combine(yv, zv, op: str = "outer"):
    """Row-wise product of y values (K, *ys) with z values (K, *zs)."""
    yv = np.asarray(yv, dtype=float)
    zv = np.asarray(zv, dtype=float)
    K = zv.shape[0]
    if yv.shape[0] != K:
        yv = np.broadcast_to(yv, (K,) + yv.shape[1:]) if yv.shape[0] == 1 else yv
    if op == "outer":
        ys, zs = yv.shape[1:], zv.shape[1:]
        return yv.reshape((K,) + ys + (1,) * len(zs)) * zv.reshape((K,) + (1,) * len(ys) + zs)
    if op == "apply":
        zs = zv.shape[1:]
        n = int(np.prod(zs)) if zs else 1
        lead = yv.shape[1:yv.ndim - len(zs)]
        out = yv.reshape((K, -1, n)) @ zv.reshape(K, n, 1)
        return out.reshape((K,) + lead)
    raise ValueError(f"unknown product {op!r}")


def _yfun(y):
    if callable(y):
        return y
    arr = np.asarray(y, dtype=float)
    return lambda *idx: arr[idx]


def _check(*idx):
    if any(a > b for a, b in zip(idx[:-1], idx[1:])):
        raise GridError(f"indices {idx} are not ordered")


# ---------------------------------------------------------------- level 1

def conv1(z, y, s: int, u: int, t: int, tau: int, op: str = "outer"):
    """z^tau_{tu} * y_{us}: left-point sum over grid cells [r, r'] of [u, t] of
    y^r_{us} (x) z^tau_{r'r}.

    ``y`` maps an array of grid indices r (the upper argument) to values
    (K, *ys), or is an array indexed by r.
    """
    _check(s, u, t, tau)
    yf = _yfun(y)
    m = np.arange(u, t)
    if m.size == 0:
        probe = combine(yf(np.array([u])), z.take([u], [u], [tau]), op)
        return np.zeros(probe.shape[1:])
    inc = z.take(m, m + 1, np.full_like(m, tau))
    return combine(yf(m), inc, op).sum(axis=0)


def conv1_sewn(z_fn, y_fn, u: float, t: float, tau: float, op: str = "outer",
               max_level: int = 14, tol: float = DEFAULT_TOL, extrapolate=None):
    """Function-mode z^tau_{tu} * y: sew r, r' -> y(r) (x) z_fn(r, r', tau) over [u, t]."""
    def xi(a, b, ta):
        return combine(y_fn(a), z_fn(a, b, ta), op)
    return sew(xi, u, t, tau, max_level=max_level, tol=tol, extrapolate=extrapolate)


# ---------------------------------------------------------------- level 2

def discrete_chen_defect(z1, z2, s: int, u: int, t: int, tau: int) -> np.ndarray:
    """z2_{ts} - z2_{tu} - z1_{tu} * z1_{us} - z2_{us}, with the left-point conv1."""
    _check(s, u, t, tau)
    lhs = z2.take(s, t, tau) - z2.take(u, t, tau) - z2.take(s, u, tau)
    cross = conv1(z1, lambda r: z1.take(np.full_like(r, s), np.full_like(r, u), r), s, u, t, tau)
    return np.asarray(lhs - cross)


def chen_residual(z1, z2, s: int, u: int, t: int, tau: int) -> float:
    """Max-component size of the level-2 Chen defect at one grid tuple."""
    if u == s or u == t:
        return 0.0
    return float(np.max(np.abs(discrete_chen_defect(z1, z2, s, u, t, tau))))


def chen_residuals(z1, z2, tuples) -> np.ndarray:
    return np.array([chen_residual(z1, z2, *map(int, tp)) for tp in tuples])


def _check_chen(z1, z2, s, t, tau, tol):
    if tol is None:
        return
    scale = max(float(np.max(np.abs(z2.take(s, t, tau)))), 1e-300)
    worst = max((chen_residual(z1, z2, s, u, t, tau) for u in range(s + 1, t)), default=0.0)
    if worst > tol * scale:
        raise ChenPreconditionError(
            f"level 2 violates the Chen identity against level 1 at (s, t, tau) = "
            f"({s}, {t}, {tau}): relative defect {worst / scale:.3e} > {tol:.1e}")


def conv2(z2, z1, y, s: int, t: int, tau: int, op: str = "outer",
          chen_tol: float | None = CHEN_TOL_FACTOR * DEFAULT_TOL):
    """z2^tau_{ts} * y for y with two upper arguments, y(r1, r2) with r1 >= r2.

    Sum over cells [r_m, r_{m+1}] of [s, t] of

        (z2_{r_{m+1} s} - z2_{r_m s}) (x) y^{m, m}
        + sum_{q < m} (y^{m, q} - y^{m, m}) (x) z1^{r_m}_{r_{q+1} r_q} (x) z1^tau_{r_{m+1} r_m},

    the first term read from stored level 2 and the second the nested
    level-1 correction. With ``op="apply"`` the last two axes of y act on the
    (inner, outer) driver axes. Before summing, level 2 is checked against the
    Chen identity (relative defect at most ``chen_tol``; None skips the check).
    """
    _check(s, t, tau)
    _check_chen(z1, z2, s, t, tau, chen_tol)
    yf = _yfun(y)
    m = np.arange(s, t)
    if m.size == 0:
        return 0.0 * combine(yf(np.array([s]), np.array([s])), z2.take([s], [s], [tau]), op)[0]
    ss = np.full_like(m, s)
    tt = np.full_like(m, tau)
    dz2 = z2.take(ss, m + 1, tt) - z2.take(ss, m, tt)
    total = combine(yf(m, m), dz2, op).sum(axis=0)
    q, mm = np.nonzero(np.arange(s, t)[None, :] > np.arange(s, t)[:, None])
    if q.size:
        q, mm = q + s, mm + s
        inner = z1.take(q, q + 1, mm)
        outer = z1.take(mm, mm + 1, np.full_like(mm, tau))
        dy = yf(mm, q) - yf(mm, mm)
        pair = combine(inner, outer, "outer")
        total = total + combine(dy, pair, op).sum(axis=0)
    return total


# ---------------------------------------------------------------- extension

def _check_extension(m, rho, gamma):
    if m * rho + gamma <= 1:
        raise ValueError(f"extension to level {m} needs m*rho + gamma > 1 (got {m * rho + gamma:.3f})")


def extend(levels, m: int, rho: float, gamma: float) -> VolterraLevel:
    """Level m on the grid from levels 1..m-1 by the grid-resolution Riemann sum

        z^m_{ts} = sum_{cells [r, r'] of [s, t]} sum_i z^{i, r}_{r s} (x) z^{m-i, tau}_{r' r}.

    For m = 2 this is the discrete iterated sum of level2_from_cells.
    """
    if m != len(levels) + 1:
        raise ValueError("extend builds exactly the next level")
    _check_extension(m, rho, gamma)
    z1 = levels[0]
    g = z1.grid
    N = g.n_points
    if m == 2:
        cells = z1.values[np.arange(N - 1), np.arange(1, N)]
        out = level2_from_cells(g, cells)
        out.provenance = "extended"
        return out
    d = z1.d
    vals = np.zeros((N, N, N) + (d,) * m)
    for s in range(N - 1):
        acc = np.zeros((N,) + (d,) * m)
        for r in range(s, N - 1):
            for i in range(1, m):
                left = levels[i - 1].values[s, r, r]  # z^{i, r}_{r s}
                right = levels[m - i - 1].values[r, r + 1]  # z^{m-i, tau}_{r' r} for all tau
                acc = acc + (left.reshape((1,) + left.shape + (1,) * (m - i))
                             * right.reshape((N,) + (1,) * i + right.shape[1:]))
            vals[s, r + 1] = acc
    i, j, k = np.indices((N, N, N), sparse=True)
    vals *= ((i <= j) & (j <= k)).reshape((N, N, N) + (1,) * m)
    return VolterraLevel(m, d, g, vals, "extended")


DEFAULT_EXTEND_LEVELS = (8, 14)


def extension_exponents(gamma: float):
    return (1.0, 2.0 - gamma, 2.0)


def extend_values(evaluators, m: int, rho: float, gamma: float, s, t, tau,
                  levels=DEFAULT_EXTEND_LEVELS, extrapolate: bool = True):
    """Level m at off-grid tuples from evaluators of levels 1..m-1.

    ``evaluators[i-1](a, b, c)`` returns z^{i, c}_{b a} for arrays a <= b <= c.
    The germ sum_i z^{i, u}_{u s} (x) z^{m-i, tau}_{v u} is summed over dyadic
    partitions of [s, t] for the given range of levels and Richardson-extrapolated
    (error terms h, h^(2-gamma), h^2). Returns (values, indicator).
    """
    if m != len(evaluators) + 1:
        raise ValueError("extend_values builds exactly the next level")
    _check_extension(m, rho, gamma)
    s, t, tau = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (s, t, tau))
    s, t, tau = np.broadcast_arrays(s, t, tau)
    if np.any(s > t) or np.any(t > tau):
        raise ValueError("need s <= t <= tau")
    lo_level, hi_level = levels
    sums = []
    for L in range(lo_level, hi_level + 1):
        n = 2**L
        frac = np.arange(n + 1) / n
        nodes = s[:, None] + (t - s)[:, None] * frac
        nodes[:, -1] = t
        u, v = nodes[:, :-1].ravel(), nodes[:, 1:].ravel()
        sb = np.repeat(s, n)
        tb = np.repeat(tau, n)
        acc = 0.0
        for i in range(1, m):
            left = np.asarray(evaluators[i - 1](sb, u, u))
            right = np.asarray(evaluators[m - i - 1](u, v, tb))
            acc = acc + combine(left, right, "outer")
        acc = np.asarray(acc)
        sums.append(acc.reshape((s.size, n) + acc.shape[1:]).sum(axis=1))
    if not extrapolate:
        return sums[-1], float(np.max(np.abs(sums[-1] - sums[-2])))
    exps = extension_exponents(gamma)
    val, ind = richardson(sums, exps)
    return val, ind


def chen_convergence(kernel, driver, depths, coarse_level: int = 2, T: float = 1.0):
    """Chen residual of accurate smooth levels against the grid left-point conv1.

    Levels 1 and 2 are evaluated by product quadrature (off-grid evaluators),
    so the only discretisation is the left-point sum inside conv1. For each
    depth the residual is maximised over all ordered quadruples of a coarse
    grid (which stays a sub-grid of every depth), and reported relative to the
    largest level-2 value seen. Returns rows and the fitted log2 slope.
    """
    from .grid import make_uniform
    from .lift import LazyLevel, SmoothLevel

    ev1 = SmoothLevel(kernel, driver, 1)
    ev2 = SmoothLevel(kernel, driver, 2)
    rows = []
    for L in depths:
        if L < coarse_level:
            raise ValueError("depths must be at least the coarse level")
        g = make_uniform(T, L)
        z1 = LazyLevel(1, driver.d, g, ev1)
        z2 = LazyLevel(2, driver.d, g, ev2)
        f = 2 ** (L - coarse_level)
        nc = 2**coarse_level + 1
        worst, scale, where = 0.0, 0.0, None
        for s in range(nc):
            for u in range(s + 1, nc):
                for t in range(u + 1, nc):
                    for tau in range(t, nc):
                        idx = (s * f, u * f, t * f, tau * f)
                        r = chen_residual(z1, z2, *idx)
                        scale = max(scale, float(np.max(np.abs(z2.take(idx[0], idx[2], idx[3])))))
                        if r > worst:
                            worst, where = r, (s, u, t, tau)
        rows.append({"level": L, "residual": worst, "relative": worst / scale if scale else 0.0,
                     "argmax": where})
    res = np.array([r["residual"] for r in rows])
    slope = None
    if len(rows) >= 2 and np.all(res > 0):
        slope = float(-np.polyfit(list(depths), np.log2(res), 1)[0])
    return {"rows": rows, "slope": slope}
