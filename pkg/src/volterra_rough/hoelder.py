"""Grid estimators of the Volterra-Hoelder semi-norms.

All sups become maxima over grid tuples and a finite probe set of exponents
eta. Tuples whose denominator vanishes or is infinite are skipped. Values are
measured with the Euclidean/Frobenius norm of the tensor components.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import SimplexGrid
from .kernel import DEFAULT_PROBES


@dataclass(frozen=True)
class HoelderPair:
    alpha: float
    gamma: float

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")

    @property
    def rho(self) -> float:
        return self.alpha - self.gamma


@dataclass
class HoelderReport:
    norm1: float
    norm2: float
    norm12: float
    argmax: dict
    etas: tuple
    pair: tuple
    counts: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return self.norm1 + self.norm12

    def to_dict(self) -> dict:
        return {
            "pair": list(self.pair), "norm1": self.norm1, "norm2": self.norm2,
            "norm12": self.norm12,
            "argmax": {k: (None if v is None else [int(i) if isinstance(i, (int, np.integer)) else float(i) for i in v])
                       for k, v in self.argmax.items()},
            "etas": list(self.etas), "counts": self.counts,
        }


def _mag(arr, lead):
    """Norm over trailing tensor axes."""
    if arr.ndim == lead:
        return np.abs(arr)
    return np.sqrt(np.sum(arr.reshape(arr.shape[:lead] + (-1,)) ** 2, axis=-1))


def _shape_denominator(s, t, tau, a, g):
    """|tau - t|^-g |t - s|^a  min  |tau - s|^(a - g); the first branch is infinite at tau = t."""
    with np.errstate(divide="ignore", invalid="ignore"):
        first = np.abs(t - s) ** a
        if g:
            first = first * np.where(tau > t, np.abs(tau - t) ** (-g), np.inf)
        return np.minimum(first, np.abs(tau - s) ** (a - g))


class _Best:
    def __init__(self):
        self.value, self.where, self.count = 0.0, None, 0

    def offer(self, ratio, valid, make_where):
        ratio = np.where(valid, ratio, -np.inf)
        self.count += int(np.count_nonzero(valid))
        if not np.any(valid):
            return
        idx = int(np.argmax(ratio))
        if ratio.flat[idx] > self.value or self.where is None:
            self.value = float(max(ratio.flat[idx], 0.0))
            self.where = make_where(np.unravel_index(idx, ratio.shape))


def _dense(z):
    if hasattr(z, "values") and hasattr(z, "grid"):
        return z.grid, np.asarray(z.values, dtype=float)
    g, arr = z
    return g, np.asarray(arr, dtype=float)


def estimate_norms(z, p: HoelderPair, etas=DEFAULT_PROBES) -> HoelderReport:
    """Estimate the three semi-norms of a Volterra path on its grid.

    ``z`` is a VolterraLevel or a (grid, array) pair with array[i, j, k] =
    z^{t_k}_{t_j t_i}. The one-variable path z^tau_s is read as z^tau_{s 0}.
    """
    g, Z = _dense(z)
    etas = tuple(float(e) for e in etas)
    if not etas or any(not 0 <= e <= 1 for e in etas):
        raise ValueError("probe exponents must lie in [0, 1]")
    N = g.n_points
    if N < 3:
        raise ValueError("need at least 3 grid points")
    P = g.points
    a, gam = p.alpha, p.gamma
    M = _mag(Z, 3)  # |z^tau_{ts}| indexed [s, t, tau]

    # norm1 over s < t <= tau
    si, ti, ki = np.indices((N, N, N), sparse=True)
    valid = (si < ti) & (ti <= ki)
    den = _shape_denominator(P[si], P[ti], P[ki], a, gam)
    b1 = _Best()
    with np.errstate(divide="ignore", invalid="ignore"):
        b1.offer(M / den, valid & (den > 0) & np.isfinite(den), lambda ix: (ix[0], ix[1], ix[2]))

    # norm2 over 0 < s < tau' < tau, differences of z^tau_{s0}
    b2 = _Best()
    path = Z[0]  # [s, tau]
    s_, tp, tt = np.indices((N, N, N), sparse=True)
    diff = _mag(path[:, None, :] - path[:, :, None], 3)  # [s, tau', tau]
    valid2 = (s_ > 0) & (s_ < tp) & (tp < tt)
    for e in etas:
        with np.errstate(divide="ignore", invalid="ignore"):
            d2 = np.minimum(np.abs(P[tt] - P[tp]) ** e * np.abs(P[tp] - P[s_]) ** (-e),
                            np.abs(P[s_]) ** (a - gam))
            b2.offer(diff / d2, valid2 & (d2 > 0) & np.isfinite(d2),
                     lambda ix, e=e: (ix[0], ix[1], ix[2], e))

    # norm12 over s < t < tau' < tau
    b12 = _Best()
    s3, t3, q3 = np.indices((N, N, N), sparse=True)
    base = _shape_denominator(P[s3], P[t3], P[q3], a, gam)
    vbase = (s3 < t3) & (t3 < q3)
    for kk in range(2, N):
        dz = Z[:, :, kk:kk + 1] - Z[:, :, :]  # z^{tau tau'}_{ts} for tau = t_kk
        dm = _mag(dz, 3)
        valid12 = vbase & (q3 < kk)
        for e in etas:
            with np.errstate(divide="ignore", invalid="ignore"):
                den = (P[kk] - P[q3]) ** e * (P[q3] - P[t3]) ** (-e) * base
                b12.offer(dm / den, valid12 & (den > 0) & np.isfinite(den),
                          lambda ix, e=e, kk=kk: (ix[0], ix[1], ix[2], kk, e))
    if b1.count == 0:
        raise ValueError("all tuples are degenerate")
    return HoelderReport(
        b1.value, b2.value, b12.value,
        {"norm1": b1.where, "norm2": b2.where, "norm12": b12.where},
        etas, (a, gam), {"norm1": b1.count, "norm2": b2.count, "norm12": b12.count},
    )


def germ_table(xi, g: SimplexGrid) -> np.ndarray:
    """Evaluate xi(s, t, tau) on all grid triples s < t <= tau, dense [s, t, tau]."""
    N = g.n_points
    P = g.points
    s, t, k = np.indices((N, N, N)).reshape(3, -1)
    keep = (s < t) & (t <= k)
    vals = np.asarray(xi(P[s[keep]], P[t[keep]], P[k[keep]]), dtype=float)
    out = np.zeros((N, N, N) + vals.shape[1:])
    out[s[keep], t[keep], k[keep]] = vals
    return out


def estimate_sewing_norms(xi, p_outer, g: SimplexGrid, etas=DEFAULT_PROBES) -> HoelderReport:
    """Estimate the delta-norms of a sewing integrand for the outer pair (beta, kappa).

    ``norm1`` is the sup of |delta_m xi^tau_{ts}| over s < m < t <= tau and
    ``norm12`` the two-upper-variable version over s < m < t < tau' < tau;
    ``norm2`` is not defined for integrands and is reported as 0.
    """
    beta, kappa = float(p_outer[0]), float(p_outer[1])
    if beta <= 1:
        raise ValueError("the outer exponent beta must exceed 1")
    if not 0 < kappa < 1:
        raise ValueError("kappa must lie in (0, 1)")
    etas = tuple(float(e) for e in etas)
    X = xi if isinstance(xi, np.ndarray) else germ_table(xi, g)
    N = g.n_points
    P = g.points
    b1, b12 = _Best(), _Best()
    s, t, k = np.indices((N, N, N), sparse=True)
    base = _shape_denominator(P[s], P[t], P[k], beta, kappa)
    for m in range(1, N - 1):
        # D[s, t, tau] = delta_m xi^tau_{ts} for s < m < t
        D = X - X[m][None, :, :] - X[:, m:m + 1, :]
        dm = _mag(D, 3)
        vm = (s < m) & (m < t)
        with np.errstate(divide="ignore", invalid="ignore"):
            b1.offer(dm / base, vm & (t <= k) & (base > 0) & np.isfinite(base),
                     lambda ix, m=m: (ix[0], m, ix[1], ix[2]))
        for kk in range(3, N):
            dd = _mag(D[:, :, kk:kk + 1] - D, 3)
            valid = vm & (t < k) & (k < kk)
            for e in etas:
                with np.errstate(divide="ignore", invalid="ignore"):
                    den = (P[kk] - P[k]) ** e * (P[k] - P[t]) ** (-e) * base
                    b12.offer(dd / den, valid & (den > 0) & np.isfinite(den),
                              lambda ix, m=m, kk=kk, e=e: (ix[0], m, ix[1], ix[2], kk, e))
    return HoelderReport(b1.value, 0.0, b12.value, {"norm1": b1.where, "norm12": b12.where},
                         etas, (beta, kappa), {"norm1": b1.count, "norm12": b12.count})
