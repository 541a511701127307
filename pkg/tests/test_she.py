"""Structure-preserving properties of the energy-transport solver."""

import numpy as np
import pytest

from shelab.errors import ConfigurationError, PositivityError, StepSizeError
from shelab.field_solver import build_transverse_grid, frozen_cosine_field
from shelab.she_solver import (
    SheState,
    cfl_dt,
    compute_current,
    init_state,
    propagate_frozen,
    run,
    step,
    total_mass,
    weighted_norm,
)
from shelab.sphere_geometry import build_energy_grid


def identity_tensor(ny, nz, ne, scale=1.0):
    d = np.zeros((ny, nz, ne, 2, 2))
    d[..., 0, 0] = scale
    d[..., 1, 1] = scale
    return d


def bumpy(y, z, eps):
    return (1.0 + 0.3 * np.cos(2.0 * np.pi * y)
            + 0.1 * np.sin(2.0 * np.pi * z)) * np.exp(-eps)


# ---------------------------------------------------------------------------
# conservation and dissipation


def test_mass_conserved_self_consistent():
    tgrid = build_transverse_grid(12, 6, 1.0, 1.0)
    egrid = build_energy_grid(10, 5.0)
    model, state = init_state(bumpy, tgrid, egrid,
                              d_cells=identity_tensor(12, 6, 10, 0.05),
                              field_mode="self-consistent")
    m0 = total_mass(model, state)
    state, series = run(model, state, t_final=0.02, dt=2e-4)
    assert series.times.size == 101
    drift = np.max(np.abs(series.mass - m0)) / abs(m0)
    assert drift < 1e-12


def test_weighted_norm_never_increases():
    tgrid = build_transverse_grid(10, 4, 1.0, 1.0)
    egrid = build_energy_grid(8, 4.0)
    frozen = frozen_cosine_field(tgrid, 0.8, 1)
    model, state = init_state(bumpy, tgrid, egrid,
                              d_cells=identity_tensor(10, 4, 8, 0.05),
                              field_mode="frozen", doping=None,
                              frozen_fields=frozen)
    state, series = run(model, state, t_final=0.05)
    norms = series.weighted_norm
    assert np.all(np.diff(norms) <= 1e-13 * norms[0])
    assert norms[-1] < norms[0]


def test_uniform_state_is_stationary_without_field():
    tgrid = build_transverse_grid(6, 6, 1.0, 1.0)
    egrid = build_energy_grid(9, 3.0)
    f0 = np.exp(-egrid.centers)[None, None, :] * np.ones((6, 6, 1))
    model, state = init_state(f0, tgrid, egrid,
                              d_cells=identity_tensor(6, 6, 9),
                              field_mode="none", doping=None)
    out = step(model, state, cfl_dt(model, state.fields))
    np.testing.assert_allclose(out.f, f0, rtol=0.0, atol=1e-14)


def test_gaussian_variance_growth_matches_slice_diffusivity():
    # identity tensor, no field: slices decouple and each diffuses in y with
    # coefficient 1 / m(eps), so Var grows by 2 t / (4 pi sqrt(2 eps))
    ny = 128
    tgrid = build_transverse_grid(ny, 2, 1.0, 1.0)
    egrid = build_energy_grid(4, 2.0)
    sigma0 = 0.06
    t_final = 0.02

    def gauss(y, z, eps):
        return np.exp(-0.5 * ((y - 0.5) / sigma0) ** 2) * np.ones_like(z + eps)

    model, state = init_state(gauss, tgrid, egrid,
                              d_cells=identity_tensor(ny, 2, 4),
                              field_mode="none", doping=None)

    def variance(f):
        w = f[:, 0, :]
        mean = np.sum(tgrid.y[:, None] * w, axis=0) / np.sum(w, axis=0)
        return np.sum((tgrid.y[:, None] - mean) ** 2 * w, axis=0) / np.sum(w, axis=0)

    v0 = variance(state.f)
    state, _ = run(model, state, t_final=t_final)
    grown = variance(state.f) - v0
    want = 2.0 * t_final / (4.0 * np.pi * np.sqrt(2.0 * egrid.centers))
    np.testing.assert_allclose(grown, want, rtol=0.02)


def test_truncation_warning_when_mass_sits_high():
    tgrid = build_transverse_grid(4, 4, 1.0, 1.0)
    egrid = build_energy_grid(10, 5.0)
    f0 = np.zeros((4, 4, 10))
    f0[..., -1] = 1.0
    model, state = init_state(f0, tgrid, egrid,
                              d_cells=identity_tensor(4, 4, 10),
                              field_mode="none", doping=None)
    _, series = run(model, state, t_final=1e-4)
    assert any("truncation" in w for w in series.warnings)


# ---------------------------------------------------------------------------
# guard rails


def test_oversized_step_is_refused():
    tgrid = build_transverse_grid(8, 4, 1.0, 1.0)
    egrid = build_energy_grid(6, 3.0)
    model, state = init_state(bumpy, tgrid, egrid,
                              d_cells=identity_tensor(8, 4, 6),
                              field_mode="none", doping=None)
    bound = cfl_dt(model, state.fields)
    with pytest.raises(StepSizeError):
        step(model, state, 2.0 * bound)
    step(model, state, bound)


def test_negative_distribution_is_detected():
    tgrid = build_transverse_grid(6, 4, 1.0, 1.0)
    egrid = build_energy_grid(6, 3.0)
    model, state = init_state(bumpy, tgrid, egrid,
                              d_cells=identity_tensor(6, 4, 6),
                              field_mode="none", doping=None)
    bad = state.f.copy()
    bad[2, 2, 3] -= 10.0
    with pytest.raises(PositivityError):
        step(model, SheState(f=bad, time=0.0, fields=state.fields),
             cfl_dt(model, state.fields))


def test_rejects_negative_initial_data():
    tgrid = build_transverse_grid(4, 4, 1.0, 1.0)
    egrid = build_energy_grid(4, 2.0)
    f0 = -np.ones((4, 4, 4))
    with pytest.raises(ConfigurationError):
        init_state(f0, tgrid, egrid, d_cells=identity_tensor(4, 4, 4),
                   field_mode="none", doping=None)


# ---------------------------------------------------------------------------
# exact propagation and time accuracy


def frozen_setup():
    tgrid = build_transverse_grid(10, 4, 1.0, 1.0)
    egrid = build_energy_grid(8, 4.0)
    frozen = frozen_cosine_field(tgrid, 0.6, 1)
    return init_state(bumpy, tgrid, egrid,
                      d_cells=identity_tensor(10, 4, 8, 0.05),
                      field_mode="frozen", doping=None, frozen_fields=frozen)


def test_exact_propagation_matches_stepping():
    model, state = frozen_setup()
    t = 0.05
    exact = propagate_frozen(model, state, t)
    stepped, _ = run(model, SheState(f=state.f.copy(), time=0.0,
                                     fields=state.fields), t_final=t)
    rel = (np.linalg.norm(exact.f - stepped.f)
           / np.linalg.norm(stepped.f))
    assert rel < 5e-3
    mass_gap = abs(total_mass(model, exact) - total_mass(model, state))
    assert mass_gap < 1e-11 * abs(total_mass(model, state))
    assert weighted_norm(model, exact) < weighted_norm(model, state)


def test_exact_propagation_guards():
    model, state = frozen_setup()
    same = propagate_frozen(model, state, 0.0)
    np.testing.assert_array_equal(same.f, state.f)
    with pytest.raises(ConfigurationError):
        propagate_frozen(model, state, -0.1)

    tgrid = build_transverse_grid(6, 4, 1.0, 1.0)
    egrid = build_energy_grid(4, 2.0)
    sc_model, sc_state = init_state(bumpy, tgrid, egrid,
                                    d_cells=identity_tensor(6, 4, 4, 0.05),
                                    field_mode="self-consistent")
    with pytest.raises(ConfigurationError):
        propagate_frozen(sc_model, sc_state, 0.1)


def test_time_stepping_is_first_order():
    # halving dt should halve the error; against a dt/4 reference the
    # defect ratio then sits near (1 - 1/4) / (1/2 - 1/4) = 3
    model, state = frozen_setup()
    dt0 = 0.5 * cfl_dt(model, state.fields)
    t_final = 8.0 * dt0

    def advance(dt, n):
        s = SheState(f=state.f.copy(), time=0.0, fields=state.fields)
        for _ in range(n):
            s = step(model, s, dt)
        return s.f

    coarse = advance(dt0, 8)
    mid = advance(dt0 / 2.0, 16)
    fine = advance(dt0 / 4.0, 32)
    ratio = np.linalg.norm(coarse - fine) / np.linalg.norm(mid - fine)
    assert 2.5 < ratio < 3.5


# ---------------------------------------------------------------------------
# currents


def test_current_closure_and_uniform_state():
    model, state = frozen_setup()
    cur = compute_current(model, state)
    ny, nz, ne = model.shape
    assert cur.j_y.shape == (ny, nz, ne)
    assert cur.j_eps.shape == (ny, nz, ne + 1)
    np.testing.assert_array_equal(cur.j_eps[..., 0], np.zeros((ny, nz)))
    np.testing.assert_array_equal(cur.j_eps[..., -1], np.zeros((ny, nz)))

    flat_model, flat_state = init_state(
        np.ones((ny, nz, ne)), model.tgrid, model.egrid,
        d_cells=identity_tensor(ny, nz, ne), field_mode="none", doping=None)
    quiet = compute_current(flat_model, flat_state)
    assert np.max(np.abs(quiet.j_y)) < 1e-14
    assert np.max(np.abs(quiet.j_z)) < 1e-14
