import numpy as np
import pytest

from volterra_rough.brownian import (CHUNK_PATHS, BrownianBatch, chen_exact_check, correlation_check,
                                     isometry_check, isometry_target, lp_bound_check, mean_stat,
                                     sample_lift, variance_stat)
from volterra_rough.convolution import chen_residual
from volterra_rough.grid import make_uniform
from volterra_rough.kernel import VolterraKernel


def all_tuples(N, strict=True):
    lo = 1 if strict else 0
    return [(s, t, tau) for s in range(N) for t in range(s + lo, N) for tau in range(t, N)]


def test_unit_kernel_gives_brownian_increments_and_ito_area():
    b = BrownianBatch(seed=7, n_paths=5, d=2, fine_level=6)
    g = make_uniform(1.0, 3)
    lift = sample_lift(b, VolterraKernel.unit(), g)
    tuples = all_tuples(g.n_points)
    z1, z2 = lift.values(tuples)
    for p in range(b.n_paths):
        B = b.path(p)
        dB = b.increments[p]
        for n, (s, t, tau) in enumerate(tuples):
            fs, ft = s * lift.factor, t * lift.factor
            np.testing.assert_allclose(z1[p, n], B[ft] - B[fs], atol=1e-13)
            ito = sum(np.outer(B[m] - B[fs], dB[m]) for m in range(fs, ft))
            np.testing.assert_allclose(z2[p, n], ito, atol=1e-13)


def test_path_levels_agree_with_values():
    b = BrownianBatch(seed=3, n_paths=2, d=2, fine_level=5)
    g = make_uniform(1.0, 3)
    lift = sample_lift(b, VolterraKernel.fractional(0.2), g)
    tuples = all_tuples(g.n_points)
    v1, v2 = lift.values(tuples)
    for p in range(2):
        z1, z2 = lift.path_levels(p)
        for n, tp in enumerate(tuples):
            np.testing.assert_allclose(z1.at(*tp), v1[p, n], atol=1e-13)
            np.testing.assert_allclose(z2.at(*tp), v2[p, n], atol=1e-13)


def test_isometry_target_example(oracles):
    k = VolterraKernel.fractional(0.2)
    assert isometry_target(k, 0.0, 0.5, 1.0) == pytest.approx(oracles["isometry_example"], rel=1e-12)
    assert isometry_target(VolterraKernel.unit(), 0.2, 0.7, 0.9) == pytest.approx(0.5)
    tk = VolterraKernel.tempered(0.2, 1.0)
    assert isometry_target(tk, 0.0, 0.5, 1.0) < isometry_target(k, 0.0, 0.5, 1.0)


def test_mean_and_isometry_z_scores():
    b = BrownianBatch(seed=20261016, n_paths=4000, d=1, fine_level=7)
    g = make_uniform(1.0, 3)
    lift = sample_lift(b, VolterraKernel.fractional(0.2), g)
    P = g.points
    tuples = [tp for tp in all_tuples(g.n_points) if P[tp[2]] - P[tp[1]] >= 0.25][::3]
    stats = isometry_check(lift, tuples)
    assert len(stats) == 2 * len(tuples)
    assert max(abs(s.z) for s in stats) <= 4.0
    d = stats[1].to_dict()
    assert {"name", "mean", "variance", "n", "target", "z", "provenance"} <= set(d)


def test_chen_identity_is_exact():
    b = BrownianBatch(seed=11, n_paths=3, d=2, fine_level=6)
    lift = sample_lift(b, VolterraKernel.fractional(0.2), make_uniform(1.0, 3))
    rep = chen_exact_check(lift)
    assert rep["max_relative"] <= 1e-10
    # u = s has nothing to cross
    one = chen_exact_check(lift, tuples=[(2, 2, 5, 7), (0, 0, 3, 3)])
    assert one["max_absolute"] <= 1e-14


def test_chen_matches_grid_residual_when_grids_coincide():
    b = BrownianBatch(seed=5, n_paths=2, d=2, fine_level=4)
    lift = sample_lift(b, VolterraKernel.fractional(0.2), make_uniform(1.0, 4))
    N = lift.grid.n_points
    for p in range(2):
        z1, z2 = lift.path_levels(p)
        scale = float(np.max(np.abs(z2.values)))
        worst = max(chen_residual(z1, z2, s, u, t, tau)
                    for s in range(N) for u in range(s, N) for t in range(u, N) for tau in range(t, N))
        assert worst <= 1e-12 * scale


def test_second_moment_of_cross_area_unit_kernel():
    # E|z2^{01}_{ts}|^2 = sum over fine cells of h (r_m - s) for the Ito sum
    b = BrownianBatch(seed=99, n_paths=6000, d=2, fine_level=6)
    g = make_uniform(1.0, 2)
    lift = sample_lift(b, VolterraKernel.unit(), g)
    tuples = [(0, 2, 4), (1, 4, 4), (0, 4, 4)]
    _, z2 = lift.values(tuples)
    h = 1.0 / 2**b.fine_level
    for n, (s, t, tau) in enumerate(tuples):
        r = np.arange(s * lift.factor, t * lift.factor) * h
        target = float(np.sum(h * (r - g.points[s])))
        assert abs(variance_stat(z2[:, n, 0, 1], target).z) <= 4.0
        assert abs(mean_stat(z2[:, n, 0, 1]).z) <= 4.0


@pytest.mark.parametrize("p", [2, 4])
def test_lp_bound_held_out(p):
    gam = 0.2
    b = BrownianBatch(seed=20261016 + p, n_paths=4000, d=1, fine_level=7)
    g = make_uniform(1.0, 3)
    lift = sample_lift(b, VolterraKernel.fractional(gam), g)
    tuples = all_tuples(g.n_points)
    _, z2 = lift.values(tuples)
    times = [tuple(float(g.points[i]) for i in tp) for tp in tuples]
    train = np.arange(len(tuples)) % 2 == 0
    rep = lp_bound_check(z2, p, tuples, times, gam, train)
    assert rep["C"] > 0
    assert rep["passed"] and rep["held_out_max"] <= 1.0
    assert all(s.extra["held_out"] == (not tr) for s, tr in zip(rep["stats"], train))


def test_lp_preconditions():
    z2 = np.zeros((10, 2, 1, 1))
    with pytest.raises(ValueError):
        lp_bound_check(z2, 2, [(0, 1, 1)] * 2, [(0, .5, .5)] * 2, 0.2, [True, False])
    with pytest.raises(ValueError):
        lp_bound_check(np.zeros((2000, 2, 1, 1)), 3, [(0, 1, 1)] * 2, [(0, .5, .5)] * 2, 0.2, [True, False])


def test_correlation_between_components():
    b = BrownianBatch(seed=123, n_paths=3000, d=2, fine_level=6)
    lift = sample_lift(b, VolterraKernel.fractional(0.2), make_uniform(1.0, 2))
    stats = correlation_check(lift, [(0, 2, 4), (1, 3, 4), (0, 4, 4)])
    assert len(stats) == 3
    assert max(abs(s.z) for s in stats) <= 4.0


def test_refusals():
    b = BrownianBatch(seed=1, n_paths=2, fine_level=4)
    g = make_uniform(1.0, 2)
    for gam in (0.25, 0.3):
        with pytest.raises(ValueError, match="1/4"):
            sample_lift(b, VolterraKernel.fractional(gam), g)
    with pytest.raises(ValueError):
        sample_lift(b, VolterraKernel.fractional(0.2), make_uniform(2.0, 2))
    with pytest.raises(ValueError):
        sample_lift(b, VolterraKernel.fractional(0.2), make_uniform(1.0, 5))
    with pytest.raises(ValueError):
        BrownianBatch(seed=1, n_paths=0)
    with pytest.raises(MemoryError):
        BrownianBatch(seed=1, n_paths=10**7, fine_level=12)
    lift = sample_lift(b, VolterraKernel.fractional(0.2), g)
    with pytest.raises(ValueError):
        lift.values([(2, 1, 3)])


def test_insufficient_samples():
    with pytest.raises(ValueError):
        mean_stat(np.zeros(10))
    with pytest.raises(ValueError):
        variance_stat(np.zeros(29), 1.0)


def test_seed_determinism_and_block_prefix():
    a = BrownianBatch(seed=42, n_paths=300, fine_level=4).increments
    np.testing.assert_array_equal(a, BrownianBatch(seed=42, n_paths=300, fine_level=4).increments)
    small = BrownianBatch(seed=42, n_paths=10, fine_level=4).increments
    np.testing.assert_array_equal(a[:10], small)
    big = BrownianBatch(seed=42, n_paths=2 * CHUNK_PATHS + 5, fine_level=4).increments
    np.testing.assert_array_equal(a, big[:300])
    assert not np.array_equal(a, BrownianBatch(seed=43, n_paths=300, fine_level=4).increments)
    assert np.var(a) == pytest.approx(1 / 16, rel=0.05)
