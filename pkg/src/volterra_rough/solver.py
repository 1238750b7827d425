"""Time stepping for y^tau_t = y0 + int_0^t k(tau, r) f(y^r_r) dx_r.

Every step u -> v advances all kernel-time columns tau >= v at once:

    y^tau_v = y^tau_u + z1^tau_{vu} f(y^u_u) + z2^tau_{vu} (f' f)(y^u_u),

only the diagonal values y^u_u entering f.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .controlled import VectorField
from .grid import SimplexGrid, make_uniform
from .kernel import VolterraKernel
from .lift import DrivingPath, _cell_weights, cell_increments

SCHEMES = ("rough-euler", "level1-euler")
BLOWUP = 1e6


class SolverError(RuntimeError):
    pass


class BlowUpError(SolverError):
    def __init__(self, step, value):
        super().__init__(f"solution left the bounded range at step {step} (|y| = {value:.3e})")
        self.step = step


@dataclass
class SolveConfig:
    grid: SimplexGrid
    kernel: VolterraKernel
    field: VectorField
    y0: np.ndarray
    driver: DrivingPath | None = None
    cells: tuple | None = None
    scheme: str = "rough-euler"
    alpha: float | None = None

    def __post_init__(self):
        self.y0 = np.atleast_1d(np.asarray(self.y0, dtype=float))
        if self.y0.shape != (self.field.m,):
            raise ValueError(f"y0 must have shape ({self.field.m},)")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.driver is None and self.cells is None:
            raise ValueError("need a driver or precomputed cell increments")
        if self.alpha is None:
            self.alpha = self.driver.alpha if self.driver is not None else 1.0
        rho = self.alpha - self.kernel.gamma
        if self.scheme == "rough-euler" and rho <= 1 / 3:
            raise ValueError(f"the rough scheme needs rho = alpha - gamma > 1/3 (got {rho:.3f})")
        d = self.driver.d if self.driver is not None else self.cells[0].shape[-1]
        if d != self.field.d:
            raise ValueError("driver dimension and vector field do not match")

    def increments(self):
        if self.cells is None:
            self.cells = cell_increments(self.kernel, self.driver, self.grid)
        return self.cells

    def with_grid(self, grid):
        return SolveConfig(grid, self.kernel, self.field, self.y0, self.driver, None, self.scheme, self.alpha)

    @classmethod
    def from_levels(cls, z1, z2, kernel, field, y0, **kw):
        N = z1.grid.n_points
        m = np.arange(N - 1)
        c2 = z2.values[m, m + 1] if z2 is not None else np.zeros(z1.values[m, m + 1].shape + (z1.d,))
        return cls(z1.grid, kernel, field, y0, cells=(z1.values[m, m + 1], c2), **kw)


@dataclass
class Solution:
    grid: SimplexGrid
    y: np.ndarray  # [t, tau, m], meaningful for t <= tau
    diagnostics: dict = field(default_factory=dict)

    @property
    def diagonal(self) -> np.ndarray:
        i = np.arange(self.grid.n_points)
        return self.y[i, i]

    def column(self, tau: int) -> np.ndarray:
        return self.y[: tau + 1, tau]


def _step_terms(cfg, yd):
    F = cfg.field(yd)  # (m, d)
    if cfg.scheme == "rough-euler":
        Fp = cfg.field.flow_derivative(yd)  # (m, d_outer, d_inner)
    else:
        Fp = None
    return F, Fp


def solve(cfg: SolveConfig, restart: tuple | None = None) -> Solution:
    """Advance all columns step by step. ``restart=(i, Y)`` resumes from grid
    index i with Y[t, tau] already known for t <= i (only row i is used)."""
    c1, c2 = cfg.increments()
    N = cfg.grid.n_points
    m = cfg.field.m
    Y = np.zeros((N, N, m))
    start = 0
    if restart is None:
        Y[0, :] = cfg.y0
    else:
        start, Yr = restart
        Y[: start + 1] = np.asarray(Yr)[: start + 1]
    limit = BLOWUP * (1.0 + float(np.max(np.abs(cfg.y0))))
    for u in range(start, N - 1):
        yd = Y[u, u]
        F, Fp = _step_terms(cfg, yd)
        inc = c1[u, u + 1:] @ F.T  # (ntau, m)
        if Fp is not None:
            inc = inc + np.einsum("kab,mba->km", c2[u, u + 1:], Fp)
        Y[u + 1, u + 1:] = Y[u, u + 1:] + inc
        worst = float(np.max(np.abs(Y[u + 1, u + 1:])))
        if not np.isfinite(worst) or worst > limit:
            raise BlowUpError(u + 1, worst)
    return Solution(cfg.grid, Y, {"scheme": cfg.scheme, "steps": N - 1 - start})


def picard_iterate(cfg: SolveConfig, k_iters: int = 50, tol: float = 1e-12) -> Solution:
    """Global Picard iteration of the discrete fixed-point map

        Y^tau_t = y0 + sum_{cells [u, v] of [0, t]} z1^tau_{vu} f(Y^u_u) + z2^tau_{vu} (f' f)(Y^u_u),

    whose fixed point is the output of :func:`solve`. Records the sup distance
    between iterates and the ratio of successive distances (contraction factor).
    """
    c1, c2 = cfg.increments()
    N = cfg.grid.n_points
    m = cfg.field.m
    Y = np.broadcast_to(cfg.y0, (N, N, m)).copy()
    dists, factors = [], []
    diverging = 0
    converged = False
    for _ in range(k_iters):
        diag = Y[np.arange(N - 1), np.arange(N - 1)]  # (N-1, m)
        F, Fp = _step_terms(cfg, diag)
        inc = np.einsum("ukd,umd->ukm", c1, F)
        if Fp is not None:
            inc = inc + np.einsum("ukab,umba->ukm", c2, Fp)
        new = np.empty_like(Y)
        new[0] = cfg.y0
        new[1:] = cfg.y0 + np.cumsum(inc, axis=0)
        dist = float(np.max(np.abs(_upper(new - Y))))
        Y = new
        if dists:
            fac = dist / dists[-1] if dists[-1] > 0 else 0.0
            factors.append(fac)
            diverging = diverging + 1 if fac >= 1 else 0
        dists.append(dist)
        if dist <= tol:
            converged = True
            break
        if diverging >= 3:
            break
    diag = {"iterations": len(dists), "distances": dists, "factors": factors,
            "converged": converged, "diverged": diverging >= 3}
    return Solution(cfg.grid, Y, diag)


def _upper(D):
    N = D.shape[0]
    mask = np.triu(np.ones((N, N), dtype=bool))
    return D[mask]


def convergence_study(cfg: SolveConfig, levels, reference=None, ref_level: int | None = None):
    """Diagonal-trace error at the final time against a reference, per grid depth.

    The reference is a number (or m-vector), or the solution on ``ref_level``
    (default: one level above the finest requested) when omitted. Rows carry
    the observed order log2(e_{L-1} / e_L).
    """
    levels = list(levels)
    T = cfg.grid.T
    if reference is None:
        ref_level = ref_level or max(levels) + 1
        reference = solve(cfg.with_grid(make_uniform(T, ref_level))).diagonal[-1]
    reference = np.atleast_1d(np.asarray(reference, dtype=float))
    rows = []
    prev = None
    for L in levels:
        sol = solve(cfg.with_grid(make_uniform(T, L)))
        val = sol.diagonal[-1]
        err = float(np.max(np.abs(val - reference)))
        order = None
        if prev is not None and prev > 0 and err > 0:
            order = float(np.log2(prev / err))
        rows.append({"level": L, "h": T / 2**L, "value": val.tolist(), "error": err, "order": order})
        prev = err
    errs = np.array([r["error"] for r in rows])
    fit = None
    if np.all(errs > 0) and len(rows) >= 2:
        fit = float(-np.polyfit(levels, np.log2(errs), 1)[0])
    return {"rows": rows, "fitted_order": fit, "reference": reference.tolist()}


def product_integration_oracle(kernel: VolterraKernel, driver: DrivingPath, field: VectorField,
                               y0, T: float = 1.0, L: int = 14, tol: float = 1e-13, max_iter: int = 200):
    """Reference diagonal y_t = y0 + int_0^t k(t, r) f(y_r) x'(r) dr for a smooth driver.

    Product trapezoidal rule (the singular factor integrated exactly against
    the linear interpolant of the rest) on 2^L uniform cells, solved by Picard
    iteration with FFT convolutions. Returns (t, y) on the grid.
    """
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    M = 2**L
    h = T / M
    r = h * np.arange(M + 1)
    xd = np.asarray(driver.derivative(r)).reshape(M + 1, driver.d)
    lag = np.arange(M + 2, dtype=float)
    aL, aR = _cell_weights(lag[1:] * h, lag[:-1] * h, h, kernel.gamma)
    aL = np.concatenate([[0.0], aL])
    aR = np.concatenate([[0.0], aR])
    reg = kernel.regular(lag[:M + 1] * h)
    P = np.empty(M + 1)
    P[0] = aR[1]
    P[1:] = aL[1:M + 1] + aR[2:M + 2]
    P *= reg
    edge = aR[1:M + 2] * reg
    Y = np.broadcast_to(y0, (M + 1, y0.size)).copy()
    for it in range(max_iter):
        g = np.einsum("imd,id->im", field(Y), xd)  # (M+1, m)
        conv = fftconvolve(g, P[:, None], axes=0)[: M + 1] - edge[:, None] * g[0]
        conv[0] = 0.0
        new = y0 + conv
        dist = float(np.max(np.abs(new - Y)))
        Y = new
        if dist < tol:
            break
    return r, Y
