"""Quadrature and symmetry checks for the velocity-sphere discretization."""

import numpy as np
import pytest

from shelab.sphere_geometry import (
    SphereFunction,
    azimuthal_rotation_matrix,
    build_energy_grid,
    build_sphere_grid,
    coarea_integrate,
    mirror,
    quad_sphere,
    rotate_about_x,
)


def test_quadrature_low_moments():
    grid = build_sphere_grid(6, 20)
    assert quad_sphere(np.ones(grid.w_node.shape), grid) == pytest.approx(
        4.0 * np.pi, abs=1e-13)
    for comp in (grid.omega_x, grid.omega_y, grid.omega_z):
        assert abs(quad_sphere(comp, grid)) < 1e-13
    # second moments: diagonal 4 pi / 3, mixed zero
    comps = (grid.omega_x, grid.omega_y, grid.omega_z)
    for i in range(3):
        for j in range(3):
            want = 4.0 * np.pi / 3.0 if i == j else 0.0
            assert quad_sphere(comps[i] * comps[j], grid) == pytest.approx(
                want, abs=1e-12)


def test_ring_layout_positive_first():
    grid = build_sphere_grid(4, 16)
    mu_pos = grid.mu[grid.pos]
    mu_neg = grid.mu[grid.neg]
    assert np.all(mu_pos > 0.0)
    assert np.all(np.diff(mu_pos) > 0.0)
    np.testing.assert_allclose(mu_neg, -mu_pos, atol=0.0)
    assert grid.n_rings == 2 * grid.n_mu_half


def test_mirror_is_involution_and_flips_normal():
    grid = build_sphere_grid(4, 16)
    rng = np.random.default_rng(3)
    f = SphereFunction(grid=grid, values=rng.normal(size=grid.w_node.shape))
    twice = mirror(mirror(f))
    np.testing.assert_array_equal(twice.values, f.values)
    flipped = mirror(SphereFunction(grid=grid, values=grid.omega_x.copy()))
    np.testing.assert_allclose(flipped.values, -grid.omega_x, atol=0.0)


def test_rotation_preserves_quadrature_and_maps_components():
    grid = build_sphere_grid(6, 24)
    f = SphereFunction(grid=grid, values=grid.omega_y.copy())
    quarter = rotate_about_x(f, np.pi / 2.0)
    np.testing.assert_allclose(quarter.values, -grid.omega_z, atol=1e-13)
    rng = np.random.default_rng(11)
    g = SphereFunction(grid=grid, values=rng.normal(size=grid.w_node.shape))
    rotated = rotate_about_x(g, 0.7342)
    assert quad_sphere(rotated.values, grid) == pytest.approx(
        quad_sphere(g.values, grid), abs=1e-12)
    # full turn is the identity for band-limited data
    full = rotate_about_x(g, 2.0 * np.pi)
    np.testing.assert_allclose(full.values, g.values, atol=1e-12)


def test_azimuthal_matrix_matches_spectral_rotation():
    grid = build_sphere_grid(2, 16)
    angle = 1.234
    mat = azimuthal_rotation_matrix(grid.n_phi, angle)
    rng = np.random.default_rng(5)
    f = SphereFunction(grid=grid, values=rng.normal(size=grid.w_node.shape))
    via_matrix = f.values @ mat.T
    via_fft = rotate_about_x(f, angle).values
    np.testing.assert_allclose(via_matrix, via_fft, atol=1e-12)


def test_energy_grid_layout():
    egrid = build_energy_grid(8, 4.0)
    assert egrid.delta == pytest.approx(0.5)
    np.testing.assert_allclose(np.diff(egrid.edges), egrid.delta)
    np.testing.assert_allclose(
        egrid.centers, 0.5 * (egrid.edges[:-1] + egrid.edges[1:]))
    np.testing.assert_allclose(egrid.density(), np.sqrt(2.0 * egrid.centers))


def test_coarea_integral_of_maxwellian():
    grid = build_sphere_grid(4, 16)
    egrid = build_energy_grid(4096, 40.0)
    got = coarea_integrate(lambda eps, ox, oy, oz: np.exp(-eps), grid, egrid)
    # midpoint cells against the sqrt(eps) density: accuracy is capped at
    # O(delta^{3/2}) by the eps = 0 endpoint, not at the smooth-rule order
    want = 4.0 * np.pi * np.sqrt(2.0) * np.sqrt(np.pi) / 2.0
    assert got == pytest.approx(want, rel=2e-4)
    by_hand = float(np.sum(egrid.delta * np.sqrt(2.0 * egrid.centers)
                           * np.exp(-egrid.centers))) * 4.0 * np.pi
    assert got == pytest.approx(by_hand, rel=1e-13)
