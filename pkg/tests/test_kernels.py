"""Identity suite for the wall reflection operators."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shelab.boundary_kernel import (
    apply_kernel,
    apply_kernel_adjoint,
    check_kernel,
    flux_average,
    make_custom_kernel,
    make_eta_kernel,
    make_isotropic_kernel,
    make_specular_kernel,
)
from shelab.sphere_geometry import build_sphere_grid

GRID = build_sphere_grid(4, 16)
ISO = make_isotropic_kernel(GRID)


def hemisphere_shape():
    return (GRID.n_mu_half, GRID.n_phi)


def test_isotropic_report_identities():
    report = check_kernel(ISO, seed=0)
    assert report.flux_defect < 1e-12
    assert report.norm_defect < 1e-12
    assert report.reciprocity_defect < 1e-12
    assert report.k0 < 1e-14
    assert report.null_dim == 1
    assert report.dg_min_margin >= -1e-12
    assert report.constant_response == pytest.approx(1.0, abs=1e-12)


def test_flux_conservation_direct():
    rng = np.random.default_rng(7)
    g = rng.uniform(0.2, 2.0, size=hemisphere_shape())
    fw = GRID.flux_weights()
    out_flux = float(np.sum(fw * g))
    in_flux = float(np.sum(fw * apply_kernel(ISO, g)))
    assert in_flux == pytest.approx(out_flux, rel=1e-14)


def test_adjoint_identity():
    rng = np.random.default_rng(9)
    g = rng.normal(size=hemisphere_shape())
    h = rng.normal(size=hemisphere_shape())
    fw = GRID.flux_weights()
    lhs = float(np.sum(fw * apply_kernel(ISO, g) * h))
    rhs = float(np.sum(fw * g * apply_kernel_adjoint(ISO, h)))
    assert lhs == pytest.approx(rhs, rel=1e-13)


def test_isotropic_image_is_constant():
    rng = np.random.default_rng(13)
    g = rng.uniform(0.0, 3.0, size=hemisphere_shape())
    image = apply_kernel(ISO, g)
    assert np.ptp(image) < 1e-13 * max(1.0, abs(image.flat[0]))
    assert image.flat[0] == pytest.approx(flux_average(ISO, g), rel=1e-13)


def test_cosine_first_moment():
    # K applied to |omega_x| returns the cosine-law mean 2/3; the Gauss
    # rings carry a small quadrature error in this non-polynomial moment
    mu_pos = np.abs(GRID.mu[GRID.pos])[:, None] * np.ones(GRID.n_phi)
    value = flux_average(ISO, mu_pos)
    assert value == pytest.approx(2.0 / 3.0, rel=0.02)


def test_specular_keeps_every_trace():
    spec = make_specular_kernel(GRID)
    report = check_kernel(spec, seed=1)
    assert report.k0 == pytest.approx(1.0, abs=1e-12)
    assert report.null_dim == GRID.n_mu_half * GRID.n_phi
    assert report.flux_defect < 1e-12


def test_custom_kernel_contracts_fluctuations():
    raw = 1.0 / np.pi + 0.1 * np.multiply.outer(
        GRID.omega_y[GRID.pos].ravel(), GRID.omega_y[GRID.pos].ravel())
    custom = make_custom_kernel(
        raw.reshape(GRID.n_mu_half * GRID.n_phi, -1), GRID)
    report = check_kernel(custom, seed=2)
    assert 0.0 < report.k0 < 1.0
    assert report.null_dim == 1
    assert report.flux_defect < 1e-12
    assert report.dg_min_margin >= -1e-12


def test_eta_kernel_absorbs_flux_fraction():
    eta = 0.3
    lossy = make_eta_kernel(ISO, eta)
    report = check_kernel(lossy, seed=3)
    assert report.flux_defect == pytest.approx(eta / (1.0 + eta), rel=1e-12)
    assert report.constant_response == pytest.approx(1.0 / (1.0 + eta),
                                                     rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_darrozes_guiraud_margin_on_random_traces(seed):
    """Flux-weighted mean square never grows through the reflection."""
    rng = np.random.default_rng(seed)
    g = rng.normal(size=hemisphere_shape())
    fw = GRID.flux_weights()
    total = float(np.sum(fw))
    reflected = apply_kernel(ISO, g)
    margin = float(np.sum(fw * g**2) / total
                   - np.sum(fw * reflected**2) / total)
    assert margin >= -1e-12


def test_constant_trace_saturates_equality():
    g = np.full(hemisphere_shape(), 1.7)
    reflected = apply_kernel(ISO, g)
    fw = GRID.flux_weights()
    gap = abs(float(np.sum(fw * g**2) - np.sum(fw * reflected**2)))
    assert gap < 1e-10
