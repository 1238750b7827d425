import numpy as np
import pytest

from volterra_rough.controlled import VectorField
from volterra_rough.grid import make_uniform
from volterra_rough.kernel import VolterraKernel
from volterra_rough.lift import DrivingPath
from volterra_rough.solver import (BlowUpError, SolveConfig, convergence_study, picard_iterate,
                                   product_integration_oracle, solve)


def cfg(L=6, k=None, f=None, x=None, y0=(1.0,), **kw):
    return SolveConfig(make_uniform(1, L), k or VolterraKernel.fractional(0.2), f or VectorField.sine(1),
                       np.array(y0), driver=x or DrivingPath.linear(), **kw)


def test_zero_field_constant():
    sol = solve(cfg(f=VectorField.zero(2, 2), x=DrivingPath.sine(2), y0=(1.0, -2.0)))
    iu = np.triu_indices(65)
    assert np.all(sol.y[iu] == np.array([1.0, -2.0]))


def test_unit_kernel_matches_ode(oracles):
    sol = solve(cfg(L=10, k=VolterraKernel.unit()))
    assert abs(sol.diagonal[-1, 0] - oracles["ode_sin_y1"]) <= 1e-4


def test_initial_column_constant():
    sol = solve(cfg())
    assert np.all(sol.y[0] == 1.0)


def test_restart_reproduces():
    c = cfg(L=6, x=DrivingPath.sine())
    full = solve(c)
    for i in (1, 17, 40):
        again = solve(c, restart=(i, full.y))
        iu = np.triu_indices(65)
        np.testing.assert_array_equal(again.y[iu], full.y[iu])


def test_picard_agrees_with_solve():
    c = cfg(L=6)
    p = picard_iterate(c, k_iters=100, tol=1e-14)
    assert p.diagnostics["converged"]
    assert np.max(np.abs(p.diagonal - solve(c).diagonal)) <= 1e-12
    z = picard_iterate(cfg(f=VectorField.zero()))
    assert z.diagnostics["iterations"] == 1 and z.diagnostics["converged"]


def test_contraction_improves_on_shorter_intervals():
    first = []
    for T in (1.0, 0.5, 0.25):
        c = SolveConfig(make_uniform(T, 6), VolterraKernel.fractional(0.2), VectorField.sine(1), np.array([1.0]),
                        driver=DrivingPath.linear(1, [3.0]))
        d = picard_iterate(c, k_iters=8, tol=0).diagnostics
        first.append(np.mean(d["factors"][:4]))
    assert first[0] > first[1] > first[2]


def test_convergence_orders():
    c = cfg(k=VolterraKernel.unit())
    res = convergence_study(c, [5, 6, 7, 8], reference=2 * np.arctan(np.tan(0.5) * np.e))
    assert res["fitted_order"] >= 1.5
    zero = convergence_study(cfg(f=VectorField.zero()), [4, 5], reference=1.0)
    assert all(r["error"] == 0 for r in zero["rows"])


def test_fractional_order_positive():
    c = cfg()
    _, Y = product_integration_oracle(c.kernel, c.driver, c.field, c.y0, L=12)
    res = convergence_study(c, [5, 6, 7, 8], reference=Y[-1])
    assert res["fitted_order"] > 0


def test_oracle_matches_independent_scheme(oracles):
    _, Y = product_integration_oracle(VolterraKernel.fractional(0.2), DrivingPath.linear(), VectorField.sine(1),
                                      [1.0], L=13)
    assert Y[-1, 0] == pytest.approx(oracles["fractional_sin_y1"]["L13"], abs=1e-7)


def test_driver_scaling_one_step():
    A = np.array([[[0.7]]])
    for c in (1.0, 2.0):
        sol = solve(cfg(L=3, f=VectorField.linear(A), x=DrivingPath.linear(1, [c]), y0=(1.0,)))
        inc = sol.y[1, 8, 0] - 1.0
        if c == 1.0:
            base = inc
    # one step: c z1 f(y0) + c^2 z2 f'f(y0) with f(y) = 0.7 y
    cfg1 = cfg(L=3, f=VectorField.linear(A), x=DrivingPath.linear(1, [1.0]))
    c1, c2 = cfg1.increments()
    l1, l2 = c1[0, 8, 0] * 0.7, c2[0, 8, 0, 0] * 0.49
    assert base == pytest.approx(l1 + l2, rel=1e-14)
    assert inc == pytest.approx(2 * l1 + 4 * l2, rel=1e-14)


def test_preconditions_and_blowup():
    g = make_uniform(1, 4)
    x = DrivingPath.from_samples(g, np.sqrt(g.points), 0.5)
    with pytest.raises(ValueError):
        SolveConfig(g, VolterraKernel.fractional(0.25), VectorField.sine(1), [1.0], driver=x)
    SolveConfig(g, VolterraKernel.fractional(0.25), VectorField.sine(1), [1.0], driver=x, scheme="level1-euler")
    with pytest.raises(ValueError):
        cfg(y0=(1.0, 2.0))
    with pytest.raises(BlowUpError):
        solve(cfg(L=6, k=VolterraKernel.unit(), f=VectorField.linear([[[40.0]]])))
