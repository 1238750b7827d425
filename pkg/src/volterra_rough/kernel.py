"""Singular Volterra kernels k(tau, r) ~ (tau - r)^(-gamma) and an empirical
checker for the difference estimates they are expected to satisfy."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import SimplexGrid

DEFAULT_PROBES = (0.0, 0.25, 0.5, 0.75, 1.0)
KINDS = ("unit", "fractional", "tempered")


class KernelDomainError(ValueError):
    """Raised when a kernel is evaluated on or above its diagonal."""


@dataclass(frozen=True)
class VolterraKernel:
    kind: str
    gamma: float = 0.0
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma!r}")
        if self.kind == "unit" and self.gamma != 0.0:
            raise ValueError("the unit kernel has gamma = 0")
        if self.kind == "tempered" and not self.lam > 0:
            raise ValueError("tempered kernels need lam > 0")
        if self.kind != "tempered" and self.lam != 0.0:
            raise ValueError("lam is only meaningful for tempered kernels")

    @classmethod
    def unit(cls) -> "VolterraKernel":
        return cls("unit")

    @classmethod
    def fractional(cls, gamma: float) -> "VolterraKernel":
        return cls("fractional", float(gamma))

    @classmethod
    def tempered(cls, gamma: float, lam: float) -> "VolterraKernel":
        return cls("tempered", float(gamma), float(lam))

    # k(tau, r) = (tau - r)^(-gamma) * regular(tau - r)
    def regular(self, d):
        d = np.asarray(d, dtype=float)
        if self.kind == "tempered":
            return np.exp(-self.lam * d)
        return np.ones_like(d)

    def unchecked(self, tau, r):
        """Vectorised evaluation without the domain check (callers mask r < tau)."""
        d = np.asarray(tau, dtype=float) - np.asarray(r, dtype=float)
        if self.kind == "unit":
            return np.ones_like(d)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = d ** (-self.gamma)
        if self.kind == "tempered":
            out = out * np.exp(-self.lam * d)
        return out

    def eval(self, tau, r):
        tau_a = np.asarray(tau, dtype=float)
        r_a = np.asarray(r, dtype=float)
        bad = ~(r_a < tau_a) | (r_a < 0)
        if np.any(bad):
            tb, rb = np.broadcast_arrays(tau_a, r_a)
            pos = np.argwhere(np.broadcast_to(bad, tb.shape))[0]
            raise KernelDomainError(
                f"kernel evaluated at (tau, r) = ({tb[tuple(pos)]!r}, {rb[tuple(pos)]!r});"
                " requires 0 <= r < tau"
            )
        out = self.unchecked(tau_a, r_a)
        return float(out) if out.ndim == 0 else out

    __call__ = eval

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind != "unit":
            d["gamma"] = self.gamma
        if self.kind == "tempered":
            d["lam"] = self.lam
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VolterraKernel":
        kind = str(d.get("kind", "")).lower()
        if kind == "unit":
            return cls.unit()
        if kind == "fractional":
            return cls.fractional(float(d["gamma"]))
        if kind in ("tempered", "temperedfractional", "tempered_fractional"):
            return cls.tempered(float(d["gamma"]), float(d["lam"]))
        raise ValueError(f"unknown kernel descriptor {d!r}")


# ------------------------------------------------------------ verify (H)

INEQUALITIES = ("C1", "C2", "C3", "C4", "C5", "C6")


@dataclass
class HReport:
    """Empirical constants of the kernel difference estimates.

    C1..C5 are the five bounds, C6 the interpolated mixed-difference bound.
    ``argmax`` holds (s, r, q, tau, eta, beta) of the largest ratio.
    """

    constants: dict
    probes: dict
    skipped: dict
    argmax: dict
    etas: tuple
    betas: tuple
    kernel: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kernel": self.kernel,
            "constants": self.constants,
            "probes": self.probes,
            "skipped": self.skipped,
            "argmax": {k: list(v) if v is not None else None for k, v in self.argmax.items()},
            "etas": list(self.etas),
            "betas": list(self.betas),
        }


def _quadruples(N: int):
    idx = np.indices((N, N, N, N)).reshape(4, -1)
    keep = (idx[0] <= idx[1]) & (idx[1] <= idx[2]) & (idx[2] <= idx[3])
    return idx[:, keep]


def _pow(base, e):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(e == 0, 1.0, np.power(base, e))


def _rhs(name, s, r, q, tau, gam, e, b):
    if name == "C1":
        return _pow(tau - r, -gam)
    if name in ("C2", "C5"):
        return _pow(q - r, -gam - e) * _pow(tau - q, e)
    if name == "C3":
        return _pow(tau - r, -gam - e) * _pow(r - s, e)
    if name == "C4":
        return _pow(q - r, -gam - b) * _pow(r - s, b)
    return _pow(tau - q, e) * _pow(q - r, -b - gam - e) * _pow(r - s, b)


def verify_h(k: VolterraKernel, g: SimplexGrid, etas=DEFAULT_PROBES, betas=DEFAULT_PROBES) -> HReport:
    """Sweep grid quadruples s <= r <= q <= tau and probe exponents, and report
    max |lhs| / rhs for each estimate. Probes with a vanishing or infinite rhs,
    or where the kernel would be evaluated on its diagonal, are skipped."""
    if g.n_points < 5:
        raise ValueError("verify_h needs a grid with at least 5 points")
    etas = tuple(float(e) for e in etas)
    betas = tuple(float(b) for b in betas)
    if not etas or not betas:
        raise ValueError("probe sets must be non-empty")
    if any(not 0 <= e <= 1 for e in etas + betas):
        raise ValueError("probe exponents must lie in [0, 1]")

    si, ri, qi, ti = _quadruples(g.n_points)
    p = g.points
    s, r, q, tau = p[si], p[ri], p[qi], p[ti]
    gam = k.gamma
    # all four kernel evaluations need r < q (which gives s < q, r < tau, s < tau)
    ok = r < q
    k_tr = np.where(ok, k.unchecked(tau, r), np.nan)
    k_qr = np.where(ok, k.unchecked(q, r), np.nan)
    k_ts = np.where(ok, k.unchecked(tau, s), np.nan)
    k_qs = np.where(ok, k.unchecked(q, s), np.nan)
    box = np.abs(k_tr - k_qr - k_ts + k_qs)

    lhs = {
        "C1": np.abs(k_tr),
        "C2": np.abs(k_tr - k_qr),
        "C3": np.abs(k_tr - k_ts),
        "C4": box,
        "C5": box,
        "C6": box,
    }
    constants, probes, skipped, argmax = {}, {}, {}, {}
    for name in INEQUALITIES:
        best, where, n_ok, n_skip = 0.0, None, 0, 0
        if name == "C1":
            combos = [(None, None)]
        elif name in ("C2", "C3", "C5"):
            combos = [(e, None) for e in etas]
        elif name == "C4":
            combos = [(None, b) for b in betas]
        else:
            combos = [(e, b) for e in etas for b in betas]
        for e, b in combos:
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                rhs = _rhs(name, s, r, q, tau, gam, e, b)
            valid = ok & np.isfinite(rhs) & (rhs > 0) & np.isfinite(lhs[name])
            n_ok += int(valid.sum())
            n_skip += int((~valid).sum())
            if not valid.any():
                continue
            ratio = np.where(valid, lhs[name] / np.where(valid, rhs, 1.0), -np.inf)
            m = int(np.argmax(ratio))
            if ratio[m] > best or where is None:
                best = float(ratio[m])
                where = (float(s[m]), float(r[m]), float(q[m]), float(tau[m]), e, b)
        constants[name] = best
        probes[name] = n_ok
        skipped[name] = n_skip
        argmax[name] = where
    return HReport(constants, probes, skipped, argmax, etas, betas, k.to_dict())
