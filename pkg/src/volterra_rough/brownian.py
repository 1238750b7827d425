"""Monte-Carlo Brownian Volterra lifts with Ito (left-point) sums.

Increments live on a fine dyadic grid; levels on a coarser grid are sums over
fine cells restricted to coarse windows, so the discrete Chen identity holds
exactly at every resolution.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations_with_replacement

import numpy as np

from .grid import SimplexGrid, make_uniform
from .kernel import VolterraKernel
from .lift import MEMORY_CAP, VolterraLevel

CHUNK_PATHS = 256
MAX_GAMMA = 0.25


@dataclass
class BrownianBatch:
    """n_paths d-dimensional Brownian paths sampled on 2^fine_level cells of [0, T].

    Paths are generated in fixed blocks of CHUNK_PATHS, each block from its
    own child of the seed sequence with a counter-based generator, so any
    subset of paths is reproducible independently of how work is split.
    """

    seed: int
    n_paths: int
    d: int = 1
    fine_level: int = 8
    T: float = 1.0

    def __post_init__(self):
        if self.n_paths < 1 or self.d < 1:
            raise ValueError("need at least one path and dimension 1")
        need = self.n_paths * 2**self.fine_level * self.d * 8
        if need > MEMORY_CAP:
            raise MemoryError(f"increments need {need / 2**20:.0f} MiB (cap {MEMORY_CAP / 2**20:.0f} MiB)")

    @property
    def fine_grid(self) -> SimplexGrid:
        return make_uniform(self.T, self.fine_level)

    @cached_property
    def increments(self) -> np.ndarray:
        """Gaussian increments, shape (n_paths, M, d), variance T / M."""
        M = 2**self.fine_level
        n_blocks = -(-self.n_paths // CHUNK_PATHS)
        children = np.random.SeedSequence(self.seed).spawn(n_blocks)
        scale = np.sqrt(self.T / M)
        out = np.empty((self.n_paths, M, self.d))
        for b, child in enumerate(children):
            lo = b * CHUNK_PATHS
            hi = min(self.n_paths, lo + CHUNK_PATHS)
            gen = np.random.Generator(np.random.Philox(child))
            block = gen.standard_normal((CHUNK_PATHS, M, self.d))
            out[lo:hi] = scale * block[: hi - lo]
        return out

    def path(self, p: int) -> np.ndarray:
        """B at fine grid points, B_0 = 0."""
        inc = self.increments[p]
        return np.concatenate([np.zeros((1, self.d)), np.cumsum(inc, axis=0)])


class BrownianLift:
    """Levels 1 and 2 of the Brownian Volterra path on a coarse grid."""

    def __init__(self, batch: BrownianBatch, kernel: VolterraKernel, grid: SimplexGrid):
        self.batch, self.kernel, self.grid = batch, kernel, grid
        fine = batch.fine_grid
        M = 2**batch.fine_level
        N = grid.n_points
        self.factor = M // (N - 1)
        r = fine.points[:-1]
        self.r = r
        # fine kernel matrix K[m, l] = k(r_m, r_l) for l < m, and coarse K[k, m] = k(t_k, r_m) for r_m < t_k
        mm, ll = np.meshgrid(np.arange(M), np.arange(M), indexing="ij")
        Kf = np.zeros((M, M))
        low = ll < mm
        Kf[low] = kernel.eval(r[mm[low]], r[ll[low]])
        self.Kf = Kf
        tk = grid.points
        Kc = np.zeros((N, M))
        kk, m2 = np.meshgrid(np.arange(N), np.arange(M), indexing="ij")
        ok = r[m2] < tk[kk] - 1e-15 * max(1.0, grid.T)
        Kc[ok] = kernel.eval(tk[kk[ok]], r[m2[ok]])
        self.Kc = Kc

    def fine_index(self, i):
        return np.asarray(i) * self.factor

    def inner_sums(self, dB, fs: int):
        """A[m] = sum_{fs <= l < m} k(r_m, r_l) dB_l for every fine m (zero for m <= fs)."""
        return np.einsum("ml,...ld->...md", self.Kf[:, fs:], dB[..., fs:, :])

    def path_levels(self, p: int):
        """Dense (z1, z2) for one path, provenance double-sum."""
        N = self.grid.n_points
        d = self.batch.d
        dB = self.batch.increments[p]
        f = self.factor
        z1 = np.zeros((N, N, N, d))
        z2 = np.zeros((N, N, N, d, d))
        w1 = self.Kc[:, :, None] * dB[None]  # (N, M, d)
        for i in range(N - 1):
            fs = i * f
            A = self.inner_sums(dB, fs)  # (M, d)
            c1 = np.cumsum(w1[:, fs:], axis=1)  # (N, M - fs, d)
            c2 = np.cumsum(w1[:, fs:, None, :] * A[None, fs:, :, None], axis=1)
            ends = np.arange(i + 1, N) * f - fs - 1  # last fine index before t_j
            z1[i, i + 1:] = np.swapaxes(c1[:, ends], 0, 1)
            z2[i, i + 1:] = np.swapaxes(c2[:, ends], 0, 1)
        ii, jj, kk = np.indices((N, N, N), sparse=True)
        mask = (ii <= jj) & (jj <= kk)
        z1 *= mask[..., None]
        z2 *= mask[..., None, None]
        g = self.grid
        return (VolterraLevel(1, d, g, z1, "double-sum"), VolterraLevel(2, d, g, z2, "double-sum"))

    def values(self, tuples, chunk: int = 1024):
        """z1 (P, K, d) and z2 (P, K, d, d) at coarse index tuples (s, t, tau), all paths."""
        tuples = np.asarray(tuples, dtype=int).reshape(-1, 3)
        P, d = self.batch.n_paths, self.batch.d
        z1 = np.zeros((P, len(tuples), d))
        z2 = np.zeros((P, len(tuples), d, d))
        inc = self.batch.increments
        for n, (s, t, tau) in enumerate(tuples):
            if not (0 <= s <= t <= tau < self.grid.n_points):
                raise ValueError(f"bad tuple {(s, t, tau)}")
            fs, ft = s * self.factor, t * self.factor
            if ft == fs:
                continue
            Kw = self.Kf[fs:ft, fs:ft]
            kc = self.Kc[tau, fs:ft]
            for a in range(0, P, chunk):
                dB = inc[a:a + chunk, fs:ft]  # (p, W, d)
                A = np.einsum("ml,pld->pmd", Kw, dB)
                z1[a:a + chunk, n] = np.einsum("m,pmd->pd", kc, dB)
                z2[a:a + chunk, n] = np.einsum("m,pmi,pmj->pij", kc, A, dB)
        return z1, z2


def sample_lift(b: BrownianBatch, k: VolterraKernel, g: SimplexGrid) -> BrownianLift:
    if k.gamma >= MAX_GAMMA:
        raise ValueError(f"the Brownian lift is only constructed for gamma < 1/4 (got {k.gamma})")
    if abs(g.T - b.T) > 1e-12 or not g.is_uniform:
        raise ValueError("coarse grid must be uniform on the same horizon as the batch")
    if g.dyadic_depth is None or g.dyadic_depth > b.fine_level:
        raise ValueError("the fine grid must refine the coarse grid")
    return BrownianLift(b, k, g)


def chen_exact_check(lift: BrownianLift, paths=None, tuples=None) -> dict:
    """Max relative defect of z2_{ts} - z2_{tu} - z2_{us} = sum_{fine m in [u, t)}
    k(tau, r_m) z1^{r_m}_{us} (x) dB_m over the given (s, u, t, tau) tuples
    (default: every ordered grid quadruple) and paths."""
    N = lift.grid.n_points
    f = lift.factor
    paths = range(lift.batch.n_paths) if paths is None else paths
    if tuples is not None:
        tuples = np.asarray(tuples, dtype=int).reshape(-1, 4)
    worst, worst_abs, where = 0.0, 0.0, None
    for p in paths:
        z1, z2 = lift.path_levels(p)
        dB = lift.batch.increments[p]
        A = [lift.inner_sums(dB, i * f) for i in range(N)]
        Z = z2.values
        if tuples is None:
            combos = [(s, u) for s in range(N) for u in range(s, N)]
        else:
            combos = sorted({(int(a), int(b)) for a, b, _, _ in tuples})
        for s, u in combos:
            fu = u * f
            inner = A[s][fu:] - A[u][fu:]  # z1^{r_m}_{us}, m >= fu
            G = lift.Kc[:, fu:, None, None] * inner[None, :, :, None] * dB[None, fu:, None, :]
            cross = np.concatenate([np.zeros((N, 1) + G.shape[2:]), np.cumsum(G, axis=1)], axis=1)
            ts = np.arange(u, N)
            cr = np.swapaxes(cross[:, ts * f - fu], 0, 1)  # [t, tau]
            lhs = Z[s, u:] - Z[u, u:] - Z[s, u][None]  # [t, tau]
            res = np.abs(lhs - cr)
            scale = np.maximum.reduce([np.abs(Z[s, u:]), np.abs(Z[u, u:]),
                                       np.broadcast_to(np.abs(Z[s, u]), res.shape), np.abs(cr)])
            tt, kk = np.indices((N - u, N), sparse=True)
            valid = (kk >= tt + u)[..., None, None] & np.ones_like(res, dtype=bool)
            if tuples is not None:
                sel = np.zeros((N - u, N), dtype=bool)
                for a, b, c, e in tuples:
                    if a == s and b == u:
                        sel[c - u, e] = True
                valid &= sel[..., None, None]
            if not np.any(valid):
                continue
            rel = np.where(valid, res / np.maximum(np.max(scale), 1e-300), 0.0)
            if rel.max() > worst:
                worst = float(rel.max())
                idx = np.unravel_index(int(np.argmax(rel)), rel.shape)
                where = (p, s, u, int(idx[0]) + u, int(idx[1]))
            worst_abs = max(worst_abs, float(np.max(np.where(valid, res, 0.0))))
    return {"max_relative": worst, "max_absolute": worst_abs, "argmax": where}


# ------------------------------------------------------------------ statistics

@dataclass
class MCStat:
    name: str
    mean: float
    variance: float
    n: int
    target: float
    z: float
    provenance: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "mean": self.mean, "variance": self.variance, "n": self.n,
                "target": self.target, "z": self.z, "provenance": self.provenance, **self.extra}


def _check_n(n):
    if n < 30:
        raise ValueError("need at least 30 samples for a statistic")


def mean_stat(x, target=0.0, name="mean", provenance="centred Gaussian") -> MCStat:
    x = np.asarray(x, dtype=float).ravel()
    _check_n(x.size)
    m = float(np.mean(x))
    v = float(np.var(x, ddof=1))
    se = np.sqrt(v / x.size)
    return MCStat(name, m, v, x.size, float(target), float((m - target) / se) if se > 0 else 0.0, provenance)


def variance_stat(x, target, name="variance", provenance="") -> MCStat:
    """z-score of the sample second moment about zero against ``target``."""
    x = np.asarray(x, dtype=float).ravel()
    _check_n(x.size)
    sq = x * x
    m = float(np.mean(sq))
    v = float(np.var(sq, ddof=1))
    se = np.sqrt(v / x.size)
    return MCStat(name, m, v, x.size, float(target), float((m - target) / se) if se > 0 else 0.0, provenance)


def isometry_target(k: VolterraKernel, s, t, tau) -> float:
    """int_s^t k(tau, r)^2 dr for the fractional and unit kernels (closed form)."""
    if k.kind == "unit":
        return t - s
    if k.kind == "fractional":
        e = 1.0 - 2.0 * k.gamma
        return ((tau - s) ** e - (tau - t) ** e) / e
    from scipy.integrate import quad
    return quad(lambda r: k.eval(tau, r) ** 2, s, t, limit=200)[0]


def isometry_check(lift: BrownianLift, tuples) -> list:
    """Mean and Ito-isometry variance of every component of z1 at each tuple."""
    z1, _ = lift.values(tuples)
    P = lift.grid.points
    out = []
    for n, (s, t, tau) in enumerate(np.asarray(tuples, dtype=int).reshape(-1, 3)):
        target = isometry_target(lift.kernel, P[s], P[t], P[tau])
        for i in range(lift.batch.d):
            tag = f"z1[{i}]({s},{t},{tau})"
            out.append(mean_stat(z1[:, n, i], 0.0, "mean " + tag))
            out.append(variance_stat(z1[:, n, i], target, "isometry " + tag, "analytic integral of k^2"))
    return out


def correlation_check(lift: BrownianLift, tuples) -> list:
    """E[z1^i z1^j] = 0 for i != j."""
    z1, _ = lift.values(tuples)
    out = []
    for n in range(z1.shape[1]):
        for i, j in combinations_with_replacement(range(lift.batch.d), 2):
            if i != j:
                out.append(mean_stat(z1[:, n, i] * z1[:, n, j], 0.0, f"cross z1[{i}]z1[{j}] #{n}", "independence"))
    return out


def l2_shape(gamma: float, s, t, tau) -> float:
    """(tau - t)^-g (t - s)^(1-g) min (tau - s)^(1 - 2g), the first branch infinite at tau = t."""
    first = np.inf if tau <= t else (tau - t) ** (-gamma) * (t - s) ** (1 - gamma)
    if gamma == 0:
        first = t - s
    return float(min(first, (tau - s) ** (1 - 2 * gamma)))


def lp_bound_check(z2, p: int, tuples, times, gamma: float, train) -> dict:
    """Fit C_p on training tuples and check held-out ratios.

    ``z2`` has shape (P, K, d, d); ``times`` gives (s, t, tau) per tuple;
    ``train`` is a boolean mask over tuples. The fitted constant is the max over
    training tuples of (mean + 4 SE) / shape^p; a held-out ratio is the sample
    mean divided by C_p shape^p.
    """
    if p % 2 or p < 2:
        raise ValueError("p must be an even integer")
    z2 = np.asarray(z2, dtype=float)
    if z2.shape[0] < 1000:
        raise ValueError("need at least 1000 samples")
    norms = np.sqrt(np.sum(z2.reshape(z2.shape[0], z2.shape[1], -1) ** 2, axis=-1)) ** p
    train = np.asarray(train, dtype=bool)
    means = norms.mean(axis=0)
    ses = norms.std(axis=0, ddof=1) / np.sqrt(norms.shape[0])
    shapes = np.array([l2_shape(gamma, *tm) ** p for tm in times])
    C = float(np.max((means[train] + 4 * ses[train]) / shapes[train]))
    ratios = means / (C * shapes)
    held = ~train
    stats = [MCStat(f"E|z2|^{p} #{n}", float(means[n]), float(ses[n] ** 2 * norms.shape[0]), norms.shape[0],
                    float(C * shapes[n]), float((means[n] - C * shapes[n]) / ses[n]) if ses[n] > 0 else 0.0,
                    "fitted bound", {"ratio": float(ratios[n]), "held_out": bool(held[n])})
             for n in range(len(times))]
    return {"C": C, "ratios": ratios.tolist(), "held_out_max": float(ratios[held].max()) if held.any() else None,
            "passed": bool(np.all(ratios[held] <= 1.0)), "stats": stats}
