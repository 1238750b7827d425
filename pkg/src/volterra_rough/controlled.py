"""Controlled Volterra paths on a grid, their rough integral and composition.

Shapes: a path y with values in V is stored as y[t, tau] (N, N, *V) holding
y^tau_t for t <= tau. A derivative with values in L(E, V) carries the driver
axis last: (*V, d). Derivatives either depend on one upper argument,
yprime[t, q] (the "hat" shape the solver needs), or on two, yprime[t, p, q].
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .convolution import combine, conv1

_STENCILS = {
    1: (np.array([1, -8, 0, 8, -1]) / 12.0, 1),
    2: (np.array([-1, 16, -30, 16, -1]) / 12.0, 2),
    3: (np.array([1, -8, 13, 0, -13, 8, -1]) / 8.0, 3),
    4: (np.array([-1, 12, -39, 56, -39, 12, -1]) / 6.0, 4),
}


@dataclass
class VectorField:
    """f: R^m -> L(R^d, R^m) as an (m, d) matrix, vectorised over leading axes.

    ``df`` returns the derivative with shape (..., m, d, m): df[..., b, a, c] =
    d f[b, a] / d y_c. When it is not supplied, central differences are used.
    """

    f: object
    m: int
    d: int
    df: object = None
    name: str = "custom"
    bound: float | None = None
    meta: dict = field(default_factory=dict)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        return np.asarray(self.f(y), dtype=float).reshape(y.shape[:-1] + (self.m, self.d))

    def jacobian(self, y):
        y = np.asarray(y, dtype=float)
        if self.df is not None:
            return np.asarray(self.df(y), dtype=float).reshape(y.shape[:-1] + (self.m, self.d, self.m))
        h = 1e-5 * (1.0 + np.max(np.abs(y))) if y.size else 1e-5
        cols = []
        for c in range(self.m):
            e = np.zeros(self.m)
            e[c] = h
            cols.append((self(y + e) - self(y - e)) / (2 * h))
        return np.stack(cols, axis=-1)

    def flow_derivative(self, y):
        """(f' f)(y) arranged as (..., m, d_outer, d_inner)."""
        J = self.jacobian(y)  # (..., m, d, m)
        F = self(y)  # (..., m, d)
        return np.einsum("...bac,...ce->...bae", J, F)

    # constructors
    @classmethod
    def sine(cls, m: int = 1):
        """Componentwise sin with d = m and a diagonal matrix."""
        def f(y):
            out = np.zeros(y.shape[:-1] + (m, m))
            idx = np.arange(m)
            out[..., idx, idx] = np.sin(y)
            return out

        def df(y):
            out = np.zeros(y.shape[:-1] + (m, m, m))
            idx = np.arange(m)
            out[..., idx, idx, idx] = np.cos(y)
            return out
        return cls(f, m, m, df, name="sin", bound=1.0)

    @classmethod
    def zero(cls, m: int = 1, d: int = 1):
        return cls(lambda y: np.zeros(np.shape(y)[:-1] + (m, d)), m, d,
                   lambda y: np.zeros(np.shape(y)[:-1] + (m, d, m)), name="zero", bound=0.0)

    @classmethod
    def constant(cls, value):
        value = np.atleast_2d(np.asarray(value, dtype=float))
        m, d = value.shape
        return cls(lambda y: np.broadcast_to(value, np.shape(y)[:-1] + (m, d)).copy(), m, d,
                   lambda y: np.zeros(np.shape(y)[:-1] + (m, d, m)), name="constant",
                   bound=float(np.max(np.abs(value))))

    @classmethod
    def linear(cls, A):
        """f(y) = A y as an (m, d) matrix; A has shape (m, d, m)."""
        A = np.asarray(A, dtype=float)
        m, d, _ = A.shape
        return cls(lambda y: np.einsum("bac,...c->...ba", A, y), m, d,
                   lambda y: np.broadcast_to(A, np.shape(y)[:-1] + A.shape).copy(), name="linear")

    @classmethod
    def from_name(cls, name: str, m: int = 1):
        name = name.lower()
        if name == "sin":
            return cls.sine(m)
        if name == "zero":
            return cls.zero(m, m)
        raise ValueError(f"unknown vector field {name!r}")

    def c4_estimate(self, lo, hi, n_probe: int = 9) -> dict:
        """Sup of |f| and its derivatives up to order 4 along coordinate
        directions on a probe box, by central differences with step
        (range) * 1e-3 and five/seven-point stencils."""
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (self.m,))
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (self.m,))
        span = float(np.max(hi - lo)) or 1.0
        h = span * 1e-3
        grids = np.meshgrid(*[np.linspace(a, b, n_probe) for a, b in zip(lo, hi)], indexing="ij")
        pts = np.stack([gq.ravel() for gq in grids], axis=-1)
        out = {0: float(np.max(np.abs(self(pts))))}
        for order, (w, p) in _STENCILS.items():
            half = (len(w) - 1) // 2
            best = 0.0
            for c in range(self.m):
                acc = 0.0
                for j, wj in enumerate(w):
                    if wj == 0:
                        continue
                    shift = np.zeros(self.m)
                    shift[c] = (j - half) * h
                    acc = acc + wj * self(pts + shift)
                best = max(best, float(np.max(np.abs(acc))) / h**p)
            out[order] = best
        bound = max(out.values())
        if not np.isfinite(bound):
            warnings.warn(f"vector field {self.name} is not bounded on the probe box")
        return {"derivatives": out, "bound": bound, "step": h}


@dataclass
class ControlledPath:
    """(y, y') controlled by the level-1 path ``base``."""

    base: object
    y: np.ndarray
    yprime: np.ndarray
    two_upper: bool = False

    def __post_init__(self):
        N = self.base.grid.n_points
        if self.y.shape[:2] != (N, N):
            raise ValueError("y must be indexed [t, tau] on the base grid")
        want = (N,) * (3 if self.two_upper else 2)
        if self.yprime.shape[:len(want)] != want:
            raise ValueError(f"yprime must be indexed {'[t, p, q]' if self.two_upper else '[t, q]'}")

    @property
    def grid(self):
        return self.base.grid

    @property
    def value_shape(self):
        return self.y.shape[2:]

    def derivative(self, t, p, q):
        """y'^{p, q}_t (the hat shape ignores p)."""
        return self.yprime[t, p, q] if self.two_upper else self.yprime[t, q]

    def increment(self, s, t, tau):
        return self.y[t, tau] - self.y[s, tau]

    @classmethod
    def constant(cls, base, value, d=None):
        N = base.grid.n_points
        value = np.asarray(value, dtype=float)
        d = base.d if d is None else d
        y = np.broadcast_to(value, (N, N) + value.shape).copy()
        yp = np.zeros((N, N) + value.shape + (d,))
        return cls(base, y, yp)

    @classmethod
    def from_level(cls, z1):
        """y = z^{.}_{t 0} with y' = identity."""
        N = z1.grid.n_points
        y = np.ascontiguousarray(z1.values[0])  # [t, tau]
        yp = np.broadcast_to(np.eye(z1.d), (N, N, z1.d, z1.d)).copy()
        return cls(z1, y, yp)


def remainder(yc: ControlledPath, s: int, t: int, tau: int):
    """R^tau_{ts} = y^tau_{ts} - z^tau_{ts} * y'^{tau, .}_s."""
    if not (s <= t <= tau):
        raise ValueError("need s <= t <= tau")
    if yc.two_upper:
        yp = lambda r: yc.yprime[s, tau, r]  # noqa: E731
    else:
        yp = lambda r: yc.yprime[s, r]  # noqa: E731
    return yc.increment(s, t, tau) - conv1(yc.base, yp, s, s, t, tau, op="apply")


def compose(f: VectorField, yc: ControlledPath, check_range: bool = True) -> ControlledPath:
    """phi = f(y) with phi'^{p, q}_t = y'^p_t f'(y^q_t) (two upper arguments).

    Only hat-shaped inputs (y' with one upper argument) are accepted.
    """
    if yc.two_upper:
        raise ValueError("composition is implemented for one-upper-argument derivatives only")
    N = yc.grid.n_points
    if check_range:
        lo = np.min(yc.y.reshape(N * N, -1), axis=0)
        hi = np.max(yc.y.reshape(N * N, -1), axis=0)
        f.c4_estimate(lo, hi, n_probe=5)
    phi = f(yc.y)  # (N, N, m, d)
    J = f.jacobian(yc.y)  # [t, q] -> (m, d, m)
    # phi'[t, p, q] = sum_c J[t, q][b, a, c] y'[t, p][c, e]
    yp = yc.yprime  # (N, N, m, d_e)
    phip = np.einsum("tqbac,tpce->tpqbae", J, yp)
    return ControlledPath(yc.base, phi, phip, two_upper=True)


def rough_integral(z1, z2, yc: ControlledPath, s: int, t: int, tau: int):
    """Rough Volterra integral of an L(E, V)-valued controlled path over [s, t].

    Sum over grid cells [u, v] of z1^tau_{vu} applied to y^u_u plus z2^tau_{vu}
    applied to y'^{u, u}_u, the two-term germ at grid resolution. Returns the
    value; the integral as a path (with its derivative) comes from
    :func:`integral_path`.
    """
    if not (s <= t <= tau):
        raise ValueError("need s <= t <= tau")
    m = np.arange(s, t)
    if m.size == 0:
        return np.zeros(yc.value_shape[:-1])
    tt = np.full_like(m, tau)
    a = combine(yc.y[m, m], z1.take(m, m + 1, tt), "apply")
    yp = yc.yprime[m, m, m] if yc.two_upper else yc.yprime[m, m]
    b = combine(np.swapaxes(yp, -1, -2), z2.take(m, m + 1, tt), "apply")
    return (a + b).sum(axis=0)


def integral_path(z1, z2, yc: ControlledPath) -> ControlledPath:
    """w^tau_t = integral over [0, t], with derivative w'^{tau, p}_t = y^p_t."""
    N = yc.grid.n_points
    m = np.arange(N - 1)
    inc1 = z1.values[m, m + 1]  # (N-1, N, d): cells for every tau
    inc2 = z2.values[m, m + 1]
    a = np.einsum("m...e,mke->mk...", yc.y[m, m], inc1)
    yp = yc.yprime[m, m, m] if yc.two_upper else yc.yprime[m, m]
    b = np.einsum("m...ba,mkab->mk...", yp, inc2)
    w = np.zeros((N, N) + a.shape[2:])
    w[1:] = np.cumsum(a + b, axis=0)
    return ControlledPath(z1, w, np.array(yc.y, copy=True))


def norm_estimate(yc: ControlledPath, alpha: float, gamma: float, etas=(0.0, 0.5, 1.0)) -> dict:
    """Grid sup of |R^tau_{ts}| / shape(2 alpha, 2 gamma) plus |y'_0| (hat derivatives)."""
    from .hoelder import _shape_denominator
    N = yc.grid.n_points
    P = yc.grid.points
    best = 0.0
    for tau in range(1, N):
        for s in range(0, tau):
            for t in range(s + 1, tau + 1):
                r = np.linalg.norm(np.ravel(remainder(yc, s, t, tau)))
                den = _shape_denominator(P[s], P[t], P[tau], 2 * alpha, 2 * gamma)
                if den > 0 and np.isfinite(den):
                    best = max(best, r / den)
    d0 = float(np.linalg.norm(np.ravel(yc.derivative(0, 0, 0))))
    return {"remainder": best, "derivative0": d0}
