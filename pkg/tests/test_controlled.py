import warnings

import numpy as np
import pytest

from volterra_rough.controlled import (ControlledPath, VectorField, compose, integral_path, norm_estimate,
                                       remainder, rough_integral)
from volterra_rough.convolution import conv1, conv2
from volterra_rough.grid import make_uniform
from volterra_rough.kernel import VolterraKernel
from volterra_rough.lift import DrivingPath, cell_increments, level1_from_cells, level2_from_cells


def levels(k, x, L):
    g = make_uniform(1, L)
    c1, c2 = cell_increments(k, x, g)
    return level1_from_cells(g, c1), level2_from_cells(g, c1, c2)


def test_vector_field_shapes_and_jacobian():
    f = VectorField.sine(2)
    y = np.array([[0.3, -1.2], [2.0, 0.1]])
    assert f(y).shape == (2, 2, 2)
    np.testing.assert_allclose(f(y)[0], np.diag(np.sin(y[0])))
    J = f.jacobian(y)
    assert J.shape == (2, 2, 2, 2)
    numeric = VectorField(f.f, 2, 2).jacobian(y)
    np.testing.assert_allclose(J, numeric, atol=1e-8)
    Fp = f.flow_derivative(y[0])
    np.testing.assert_allclose(Fp, np.einsum("bac,ce->bae", J[0], f(y[0])))


def test_c4_estimate():
    est = VectorField.sine(1).c4_estimate([-3.0], [3.0])
    probes = np.linspace(-3.0, 3.0, 9)
    for order in range(5):
        exact = np.max(np.abs(np.sin(probes + order * np.pi / 2)))
        assert est["derivatives"][order] == pytest.approx(exact, abs=1e-4)
    bad = VectorField(lambda y: np.where(np.abs(y) < 1e-9, np.inf, 1 / y)[..., None], 1, 1)
    with pytest.warns(UserWarning):
        bad.c4_estimate([-1.0], [1.0], n_probe=5)


def test_integral_of_constant():
    z1, z2 = levels(VolterraKernel.fractional(0.25), DrivingPath.sine(2), 4)
    c = np.array([[1.0, 2.0], [-0.5, 0.25], [3.0, 0.0]])
    yc = ControlledPath.constant(z1, c)
    w = rough_integral(z1, z2, yc, 2, 11, 14)
    np.testing.assert_allclose(w, c @ z1.at(2, 11, 14), rtol=1e-13)


def test_classical_integral_unit_kernel():
    z1, z2 = levels(VolterraKernel.unit(), DrivingPath.linear(), 6)
    yc = ControlledPath.from_level(z1)
    assert rough_integral(z1, z2, yc, 0, 64, 64) == pytest.approx(0.5, abs=1e-14)
    assert np.max(np.abs([remainder(yc, s, t, 64) for s in range(0, 64, 7) for t in range(s, 65, 5)])) <= 1e-15


def test_remainder_of_constant_is_zero():
    z1, _ = levels(VolterraKernel.fractional(0.3), DrivingPath.sine(), 3)
    yc = ControlledPath.constant(z1, [2.0])
    assert np.all(remainder(yc, 1, 5, 7) == 0)


def test_integral_path_is_additive_and_consistent():
    z1, z2 = levels(VolterraKernel.fractional(0.25), DrivingPath.sine(2), 4)
    yc = compose(VectorField.sine(2), ControlledPath.from_level(z1).__class__(z1, np.sin(z1.values[0]),
                                                                         np.broadcast_to(np.eye(2), (17, 17, 2, 2)).copy()))
    w = integral_path(z1, z2, yc)
    for s, u, t, tau in [(0, 3, 9, 12), (2, 2, 7, 16), (5, 8, 16, 16)]:
        np.testing.assert_allclose(w.increment(s, t, tau), w.increment(s, u, tau) + w.increment(u, t, tau), atol=1e-15)
        np.testing.assert_allclose(w.increment(s, t, tau), rough_integral(z1, z2, yc, s, t, tau), atol=1e-14)
    np.testing.assert_array_equal(w.yprime, yc.y)


def test_rough_integral_remainder_shape():
    # |w - z1 * y - z2 * y'| <= C [(tau-t)^-g (t-s)^(3 rho + g)  min  (tau-s)^(3 rho)] for y = sin(z)
    gam = 0.25
    rho = 1 - gam
    k = VolterraKernel.fractional(gam)

    def worst(L):
        z1, z2 = levels(k, DrivingPath.sine(), L)
        phi = compose(VectorField.sine(1), ControlledPath.from_level(z1))
        P, N = z1.grid.points, z1.grid.n_points
        out = 0.0
        for tau in range(1, N):
            for s in range(tau):
                # phi'^{p, q}_s holds y' at p and f'(y) at q; conv2 wants (outer r1, inner r2)
                dy = lambda r1, r2, s=s: np.swapaxes(phi.yprime[s, r2, r1], -1, -2)[:, 0]  # noqa: E731
                for t in range(s + 1, tau + 1):
                    w = rough_integral(z1, z2, phi, s, t, tau)
                    germ = (conv1(z1, lambda r: phi.y[s, r], s, s, t, tau, op="apply")
                            + conv2(z2, z1, dy, s, t, tau, op="apply", chen_tol=None))
                    first = np.inf if tau == t else (P[tau] - P[t]) ** -gam * (P[t] - P[s]) ** (3 * rho + gam)
                    out = max(out, float(np.max(np.abs(w - germ))) / min(first, (P[tau] - P[s]) ** (3 * rho)))
        return out

    # the sup sits a few cells from the diagonal and approaches its limit from below
    C = 1.10 * worst(5)
    assert worst(6) <= C


def test_compose_linear_and_constant():
    z1, _ = levels(VolterraKernel.fractional(0.25), DrivingPath.sine(2), 3)
    yc = ControlledPath(z1, np.ascontiguousarray(z1.values[0]), np.broadcast_to(np.eye(2), (9, 9, 2, 2)).copy())
    A = np.arange(8.0).reshape(2, 2, 2)
    phi = compose(VectorField.linear(A), yc)
    # phi'^{p,q}_t = A applied to y'^p_t, independent of q for a linear map
    np.testing.assert_allclose(phi.yprime[3, 5, 7], np.einsum("bac,ce->bae", A, np.eye(2)))
    const = compose(VectorField.constant(np.ones((2, 2))), yc)
    assert np.all(const.yprime == 0)
    assert np.all(remainder(const, 1, 4, 8) == 0)
    with pytest.raises(ValueError):
        compose(VectorField.sine(2), const)


def test_compose_sine_norm_finite():
    z1, _ = levels(VolterraKernel.fractional(0.25), DrivingPath.sine(), 4)
    yc = ControlledPath.from_level(z1)
    phi = compose(VectorField.sine(1), yc)
    est = norm_estimate(phi, 1.0, 0.25)
    base = norm_estimate(yc, 1.0, 0.25)
    assert np.isfinite(est["remainder"]) and est["derivative0"] == pytest.approx(np.cos(0.0))
    # quadratic shape: remainder norm of f(y) is controlled by (1 + norm of y)^2
    assert est["remainder"] <= (1 + base["remainder"]) ** 2 * 10
