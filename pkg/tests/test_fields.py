"""Spectral Poisson solver and frozen-field helpers."""

import numpy as np
import pytest

from shelab.errors import NeutralityError
from shelab.field_solver import (
    build_transverse_grid,
    charge_density,
    frozen_cosine_field,
    solve_poisson,
)
from shelab.sphere_geometry import build_energy_grid


def test_manufactured_solution_exact():
    grid = build_transverse_grid(32, 16, 1.0, 1.0)
    ky = 2.0 * np.pi
    kz = 4.0 * np.pi
    yy = grid.y[:, None]
    zz = grid.z[None, :]
    phi = np.cos(ky * yy) * np.cos(kz * zz)
    rho = (ky**2 + kz**2) * phi
    state = solve_poisson(rho, grid)
    np.testing.assert_allclose(state.phi, phi, atol=1e-10)
    np.testing.assert_allclose(state.e_y, ky * np.sin(ky * yy) * np.cos(kz * zz),
                               atol=1e-10)
    np.testing.assert_allclose(state.e_z, np.cos(ky * yy) * kz * np.sin(kz * zz),
                               atol=1e-10)
    assert abs(state.phi.mean()) < 1e-14


def test_non_neutral_charge_is_refused():
    grid = build_transverse_grid(8, 8, 1.0, 1.0)
    rho = np.full((8, 8), 0.3)
    with pytest.raises(NeutralityError):
        solve_poisson(rho, grid)
    neutralized = solve_poisson(rho, grid, neutralize=True)
    assert np.max(np.abs(neutralized.phi)) < 1e-14


def test_frozen_cosine_field_layout():
    grid = build_transverse_grid(16, 4, 2.0, 1.0)
    amp = 0.7
    state = frozen_cosine_field(grid, amp, 1)
    k = 2.0 * np.pi / grid.box_y
    np.testing.assert_allclose(
        state.phi, amp * np.cos(k * grid.y)[:, None] * np.ones(4), atol=1e-14)
    np.testing.assert_allclose(
        state.e_y, amp * k * np.sin(k * grid.y)[:, None] * np.ones(4),
        atol=1e-13)
    np.testing.assert_array_equal(state.e_z, np.zeros((16, 4)))


def test_charge_density_of_uniform_state():
    egrid = build_energy_grid(2048, 40.0)
    f = np.exp(-egrid.centers)[None, None, :] * np.ones((4, 4, 1))
    rho = charge_density(f, egrid)
    want = 4.0 * np.pi * np.sqrt(2.0) * np.sqrt(np.pi) / 2.0
    np.testing.assert_allclose(rho, want, rtol=5e-4)
    matched = charge_density(f, egrid, doping=np.full((4, 4), want))
    assert np.max(np.abs(matched)) < want * 5e-4
