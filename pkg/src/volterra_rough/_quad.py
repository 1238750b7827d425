"""Gauss-Jacobi product rules for integrals with an algebraic end-point factor.

Used for smooth drivers, where z^{1,tau}_{ts} = int_s^t k(tau, r) x'(r) dr and
the second level are ordinary (weakly singular) integrals.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

N_NODES = 20
MAX_PANELS = 60


@lru_cache(maxsize=None)
def jacobi_rule(n: int, a: float, b: float):
    """Nodes/weights on [-1, 1] for the weight (1 - x)^a (1 + x)^b."""
    x, w = roots_jacobi(n, a, b)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _panel(phi, sel, lo, hi, a, b, n):
    """int_lo^hi (hi - r)^a (r - lo)^b phi(r) dr for each entry of ``sel``."""
    x, w = jacobi_rule(n, a, b)
    half = (hi - lo) / 2
    r = lo[:, None] + half[:, None] * (1.0 + x[None, :])
    vals = phi(r, sel)
    scale = half ** (1.0 + a + b)
    extra = (1,) * (vals.ndim - 2)
    return np.einsum("kn...,n->k...", vals, w) * scale.reshape((-1,) + extra)


def singular_integral(phi, lo, hi, tau, gamma: float, p: float = 0.0, n: int = N_NODES):
    """int_lo^hi (tau - r)^(-gamma) (r - lo)^p phi(r) dr, vectorised over tuples.

    ``phi(r, sel)`` receives nodes of shape (len(sel), n) and the indices of the
    tuples they belong to, and returns shape (len(sel), n, *value_shape). Requires
    lo <= hi <= tau. Panels are graded geometrically toward tau when it lies
    beyond hi, so that each panel sits at least its own width away from the
    singularity; a panel ending at tau absorbs the singular factor exactly.
    """
    lo, hi, tau = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (lo, hi, tau))
    lo, hi, tau = np.broadcast_arrays(lo, hi, tau)
    K = lo.size
    out = None

    def add(sel, vals):
        nonlocal out
        if out is None:
            out = np.zeros((K,) + vals.shape[1:])
        np.add.at(out, sel, vals)

    width = hi - lo
    live = np.nonzero(width > 0)[0]
    if p > 0:
        mid = lo + width / 2
        # left half: endpoint factor (r - lo)^p absorbed, tau is far enough away
        if live.size:
            sel = live
            def f_left(r, s_):
                return _times(phi(r, s_), (tau[s_, None] - r) ** (-gamma))
            add(sel, _panel(f_left, sel, lo[sel], mid[sel], 0.0, p, n))
        start = mid
        endfac = lambda r, s_: (r - lo[s_, None]) ** p  # noqa: E731
    else:
        start = lo
        endfac = None

    D = tau - hi
    diag = live[D[live] <= 0]
    off = live[D[live] > 0]
    if diag.size:
        def f_diag(r, s_):
            v = phi(r, s_)
            return v if endfac is None else _times(v, endfac(r, s_))
        add(diag, _panel(f_diag, diag, start[diag], hi[diag], -gamma, 0.0, n))
    if off.size:
        span = hi[off] - start[off]
        J = np.ceil(np.log2(span / D[off] + 1.0)).astype(int)
        J = np.clip(J, 1, MAX_PANELS)
        for j in range(int(J.max())):
            act = j < J
            sel = off[act]
            right = hi[sel] - D[sel] * (2.0**j - 1.0)
            left = np.maximum(start[sel], hi[sel] - D[sel] * (2.0 ** (j + 1) - 1.0))
            if j == MAX_PANELS - 1:
                left = start[sel]
            good = right > left
            sel, right, left = sel[good], right[good], left[good]
            if not sel.size:
                continue

            def f_off(r, s_):
                v = _times(phi(r, s_), (tau[s_, None] - r) ** (-gamma))
                return v if endfac is None else _times(v, endfac(r, s_))
            add(sel, _panel(f_off, sel, left, right, 0.0, 0.0, n))
    if out is None:
        probe = phi(np.full((1, n), lo[0]), np.array([0]))
        out = np.zeros((K,) + probe.shape[2:])
    return out


def _times(vals, fac):
    return vals * fac.reshape(fac.shape + (1,) * (vals.ndim - 2))


def inner_weights(gamma: float, n: int = N_NODES):
    """Nodes theta in (0, 1) and weights for int_0^1 (1 - theta)^(-gamma) g(theta) dtheta."""
    x, w = jacobi_rule(n, -gamma, 0.0)
    return (1.0 + x) / 2, w * 0.5 ** (1.0 - gamma)
