"""Dyadic Riemann-sum sewing of germs Xi^tau_{ts}.

A germ is a vectorised callable ``xi(s, t, tau)`` taking arrays of equal shape
and returning an array of that shape followed by the value shape. The sewn
integral over [s, t] is the limit of sum_{[u,v] in P^n} xi(u, v, tau) along
the dyadic partitions P^n of [s, t].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernel import KernelDomainError

DEFAULT_TOL = 1e-8
DEFAULT_MAX_LEVEL = 14
_CHUNK = 1 << 22


class SewingError(RuntimeError):
    pass


class OrderingError(ValueError):
    pass


def _norm(v) -> float:
    return float(np.max(np.abs(v))) if np.size(v) else 0.0


def _eval(xi, u, v, tau, where):
    try:
        out = xi(u, v, tau)
    except KernelDomainError as exc:
        raise SewingError(f"germ evaluation failed for (s, t, tau) = {where}: {exc}") from exc
    return np.asarray(out, dtype=float)


def dyadic_sum(xi, s: float, t: float, tau: float, level: int):
    """sum of xi over the 2^level dyadic sub-intervals of [s, t]."""
    n = 2**level
    nodes = s + (t - s) * np.arange(n + 1) / n
    nodes[-1] = t
    vals = _eval(xi, nodes[:-1], nodes[1:], np.full(n, float(tau)), (s, t, tau))
    return vals.sum(axis=0)


def richardson(seq, exponents):
    """Eliminate error terms c_p h^p (h halving along ``seq``) one exponent at a time.

    Returns the extrapolated value and the change caused by the last elimination
    step, which serves as an error indicator.
    """
    tab = [np.asarray(v, dtype=float) for v in seq]
    if len(tab) < len(exponents) + 1:
        raise ValueError("not enough levels for the requested extrapolation")
    prev = tab[-1]
    for p in exponents:
        f = 2.0**p
        tab = [(f * b - a) / (f - 1.0) for a, b in zip(tab[:-1], tab[1:])]
    return tab[-1], _norm(tab[-1] - prev)


def unique_exponents(exps):
    out = []
    for e in sorted(float(x) for x in exps):
        if e > 0 and all(abs(e - o) > 1e-12 for o in out):
            out.append(e)
    return tuple(out)


@dataclass
class SewingResult:
    value: np.ndarray | float
    levels_used: int
    deltas: np.ndarray
    converged: bool
    sums: list
    extrapolated: np.ndarray | float | None = None
    extrapolation_delta: float | None = None
    extrapolation_converged: bool = False

    @property
    def estimate(self):
        """The extrapolated value when available, otherwise the plain sum."""
        return self.value if self.extrapolated is None else self.extrapolated


def sew(
    xi,
    s: float,
    t: float,
    tau: float,
    max_level: int = DEFAULT_MAX_LEVEL,
    tol: float = DEFAULT_TOL,
    extrapolate=None,
    min_level: int = 1,
) -> SewingResult:
    """Sew ``xi`` over [s, t] at upper time tau.

    Level 0 is xi(s, t, tau) itself. Refinement stops at the first level L whose
    delta |I^L - I^{L-1}| is at most tol * |I^1|, or at ``max_level``. With
    ``extrapolate`` (a list of error exponents) a Richardson estimate is also
    reported and refinement continues until that estimate has settled.
    """
    if not s <= t <= tau:
        raise OrderingError(f"need s <= t <= tau, got {(s, t, tau)}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    exps = unique_exponents(extrapolate) if extrapolate is not None else None
    sums = [_eval(xi, np.array([s]), np.array([t]), np.array([float(tau)]), (s, t, tau))[0]]
    deltas = []
    threshold = None
    ext, ext_delta, prev_ext = None, None, None
    ext_ok = False
    level = 0
    for level in range(1, max_level + 1):
        sums.append(dyadic_sum(xi, s, t, tau, level))
        deltas.append(_norm(sums[-1] - sums[-2]))
        if threshold is None:
            threshold = tol * _norm(sums[1])
        plain_ok = deltas[-1] <= threshold
        if exps is not None and len(sums) >= len(exps) + 1:
            ext, _ = richardson(sums, exps)
            if prev_ext is not None:
                ext_delta = _norm(ext - prev_ext)
            prev_ext = ext
        if level >= min_level:
            if plain_ok:
                break
            if ext_delta is not None and ext_delta <= threshold:
                ext_ok = True
                break
    converged = bool(deltas) and deltas[-1] <= threshold
    value = sums[-1]
    if np.ndim(value) == 0:
        value = float(value)
        ext = None if ext is None else float(ext)
    return SewingResult(value, level, np.asarray(deltas), converged, sums, ext, ext_delta, ext_ok)


def sew_batch(xi, s, t, tau, level: int, extrapolate=None):
    """Dyadic sums of ``xi`` at a fixed level for many (s, t, tau) at once.

    Returns the level-``level`` sums (or their Richardson extrapolation over the
    last few levels) with shape (K, *value_shape).
    """
    s, t, tau = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (s, t, tau))
    s, t, tau = np.broadcast_arrays(s, t, tau)
    if np.any(s > t) or np.any(t > tau):
        raise OrderingError("need s <= t <= tau for every tuple")
    exps = unique_exponents(extrapolate) if extrapolate is not None else ()
    first = level - len(exps) if exps else level
    if first < 0:
        raise ValueError("level too small for the requested extrapolation")
    K = s.size
    sums = []
    for n in range(first, level + 1):
        m = 2**n
        frac = np.arange(m + 1) / m
        per_chunk = max(1, _CHUNK // m)
        acc = []
        for a in range(0, K, per_chunk):
            b = min(K, a + per_chunk)
            lo = s[a:b, None] + (t[a:b] - s[a:b])[:, None] * frac[None, :]
            lo[:, -1] = t[a:b]
            ta = np.broadcast_to(tau[a:b, None], (b - a, m))
            vals = _eval(xi, lo[:, :-1].ravel(), lo[:, 1:].ravel(), ta.ravel(), "batch")
            acc.append(vals.reshape((b - a, m) + vals.shape[1:]).sum(axis=1))
        sums.append(np.concatenate(acc, axis=0))
    if exps:
        return richardson(sums, exps)[0]
    return sums[-1]


@dataclass
class DecayCheck:
    slope: float
    bound: float
    passed: bool
    exact: bool = False
    levels: tuple = ()


def check_decay(r: SewingResult, beta: float, slack: float = 0.15) -> DecayCheck:
    """Least-squares slope of log2(delta_n) against n, compared with -(beta - 1).

    An additive germ (all deltas zero) is reported as ``exact``.
    """
    d = np.asarray(r.deltas, dtype=float)
    bound = -(beta - 1.0) + slack
    scale = max(_norm(v) for v in r.sums) if r.sums else 0.0
    if d.size == 0 or np.all(d <= 64 * np.finfo(float).eps * max(scale, 1e-300)):
        return DecayCheck(float("-inf"), bound, True, exact=True)
    levels = np.arange(1, d.size + 1)
    # drop the first delta (pre-asymptotic) and anything at the rounding floor
    keep = (levels >= 2) & (d > 64 * np.finfo(float).eps * max(scale, 1e-300))
    if keep.sum() < 3:
        raise ValueError("need at least three non-zero deltas beyond the first level")
    slope = float(np.polyfit(levels[keep], np.log2(d[keep]), 1)[0])
    return DecayCheck(slope, bound, slope <= bound, False, tuple(int(x) for x in levels[keep]))


def delta(g, s, u, t, tau):
    """delta_u g_{ts} = g_{ts} - g_{tu} - g_{us} for a three-argument g(s, t, tau)."""
    if not (s <= u <= t <= tau):
        raise OrderingError(f"need s <= u <= t <= tau, got {(s, u, t, tau)}")
    return np.asarray(g(s, t, tau)) - np.asarray(g(u, t, tau)) - np.asarray(g(s, u, tau))
