"""Auxiliary transport problem: solvability, closed forms, and balances."""

import numpy as np
import pytest

from shelab.auxiliary_problem import (
    boundary_defect,
    chi_components,
    green_identity_gap,
    residual_norm,
    solve_auxiliary,
)
from shelab.boundary_kernel import make_isotropic_kernel
from shelab.errors import SolvabilityError
from shelab.sphere_geometry import SphereFunction, build_sphere_grid, rotate_about_x

GRID = build_sphere_grid(4, 16)
ISO = make_isotropic_kernel(GRID)


def test_constant_source_is_refused():
    ones = SphereFunction(grid=GRID, values=np.ones(GRID.w_node.shape))
    with pytest.raises(SolvabilityError):
        solve_auxiliary(GRID, ISO, 1.0, 0.5, ones)


def test_mean_zero_source_solves():
    rhs = SphereFunction(grid=GRID, values=GRID.omega_y.copy())
    sol = solve_auxiliary(GRID, ISO, 1.0, 0.5, rhs)
    assert sol.residual_norm < 1e-8
    assert sol.boundary_defect < 1e-8
    assert abs(sol.mean) < 1e-12
    assert sol.null_dim == 1


def test_field_free_closed_form():
    # with B = 0 the solution is (H(mu) - x) omega_y / (s mu), H the
    # indicator of outgoing mu at the lower wall
    eps = 0.5
    speed = np.sqrt(2.0 * eps)
    rhs = SphereFunction(grid=GRID, values=GRID.omega_y.copy())
    sol = solve_auxiliary(GRID, ISO, 0.0, eps, rhs)
    heav = (GRID.mu > 0.0).astype(float)[:, None]
    exact = (heav - sol.x[:, None, None]) * GRID.omega_y[None, :, :] \
        / (speed * GRID.mu[None, :, None])
    assert np.max(np.abs(sol.values - exact)) < 1e-12


def test_green_identity_balances():
    rhs = SphereFunction(grid=GRID, values=GRID.omega_y.copy())
    sol = solve_auxiliary(GRID, ISO, 2.0, 0.25, rhs)
    lhs, gap = green_identity_gap(sol)
    assert lhs > 0.0
    assert abs(gap) < 1e-10 * max(1.0, abs(lhs))


def test_quarter_turn_maps_components():
    # the wall operators are rotation invariant about the x axis, so the
    # z-component solve is the quarter-turn pullback of the y-component
    chi_y, chi_z = chi_components(1.0, 0.5, ISO, GRID, n_x=64)
    for ix in range(0, chi_y.values.shape[0], 16):
        layer = SphereFunction(grid=GRID, values=chi_y.values[ix])
        turned = rotate_about_x(layer, np.pi / 2.0)
        np.testing.assert_allclose(chi_z.values[ix], -turned.values,
                                   atol=1e-9)


def test_diagnostics_match_solution_record():
    rhs = SphereFunction(grid=GRID, values=GRID.omega_z.copy())
    sol = solve_auxiliary(GRID, ISO, 0.5, 1.0, rhs)
    assert residual_norm(sol) == pytest.approx(sol.residual_norm, rel=1e-12)
    assert boundary_defect(sol) == pytest.approx(sol.boundary_defect,
                                                 rel=1e-12)
