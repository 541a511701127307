"""Energy-transport (SHE) limit: conservative finite volumes on (xi, eps).

The limit model evolves the energy distribution F(xi, eps, t) through

    m(eps) dF/dt + div~ J = 0,      J = -D(xi, eps) grad~ F,

with m(eps) = 4 pi sqrt(2 eps) the coarea mass density, the tilde gradient
grad~ = (d_y - E_y d_eps, d_z - E_z d_eps) and div~ its formal negative
adjoint in plain L2(dxi deps). The discretization keeps that structure
literally: a sparse face gradient A (compact two-point differences in xi,
sign-of-E selected one-sided energy slopes averaged to the face) and a face
tensor multiply M give the update

    F <- F - (dt / m) A^T (M (A F)).

Because the divergence is the exact matrix transpose, two statements hold to
roundoff regardless of M: total mass sum m F (A 1 = 0, slopes of constants
vanish), and, for symmetric positive semidefinite M under the step-size
bound, monotone decay of the weighted norm sum m F^2. Cross-tensor entries
couple the two face families through a four-point averaging matrix T and its
exact transpose; with a xi-uniform tensor the Hall (antisymmetric) part of D
then cancels identically in the energy balance.

Energy-domain closure is zero flux at eps = 0 (where the current vanishes
structurally) and at the eps_max truncation; the mass fraction sitting in
the top 10% of energy cells is reported so truncation bias stays visible.
The electric field enters explicitly and lagged: a step transports with the
field of the incoming state and only then re-solves the Poisson equation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spl

from .diffusion_tensor import tabulate_tensor
from .errors import ConfigurationError, PositivityError, StepSizeError
from .field_solver import (
    FieldState,
    TransverseGrid,
    charge_density,
    solve_poisson,
)
from .sphere_geometry import EnergyGrid

__all__ = [
    "SheModel",
    "SheState",
    "SheCurrent",
    "SheRun",
    "init_state",
    "cfl_dt",
    "compute_current",
    "step",
    "run",
    "total_mass",
    "weighted_norm",
    "truncation_fraction",
]


def _zero_fields(tgrid: TransverseGrid) -> FieldState:
    shape = (tgrid.n_y, tgrid.n_z)
    return FieldState(grid=tgrid, phi=np.zeros(shape), e_y=np.zeros(shape),
                      e_z=np.zeros(shape), residual=0.0)


@dataclass
class SheModel:
    """Fixed ingredients of a transport run: grids, tensor field, coupling mode.

    Attributes:
        tgrid: periodic transverse box.
        egrid: energy cells; m(eps) = 4 pi sqrt(2 eps_c) at centers.
        d_cells: diffusivity per cell, shape (n_y, n_z, n_eps, 2, 2), rows and
            columns ordered (y, z). Face values are adjacent-cell averages.
        doping: background charge C(xi), shape (n_y, n_z).
        field_mode: "none" (E = 0), "frozen" (fields fixed at the initial
            FieldState) or "self-consistent" (Poisson re-solved after every
            transport step, Gummel lagging).
        c_safe: step-size safety factor against the stability bound.
        positivity_tol: abort threshold on min F after a step.
    """

    tgrid: TransverseGrid
    egrid: EnergyGrid
    d_cells: np.ndarray
    doping: np.ndarray
    field_mode: str = "self-consistent"
    c_safe: float = 0.9
    positivity_tol: float = 1e-12
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.tgrid.n_y, self.tgrid.n_z, self.egrid.n_eps)

    @property
    def n_cells(self) -> int:
        ny, nz, ne = self.shape
        return ny * nz * ne

    def mass_density(self) -> np.ndarray:
        """m(eps) = 4 pi sqrt(2 eps) at the energy centers, shape (n_eps,)."""
        return 4.0 * np.pi * self.egrid.density()

    @property
    def cell_volume(self) -> float:
        return self.tgrid.dy * self.tgrid.dz * self.egrid.delta


@dataclass
class SheState:
    """Energy distribution, clock and fields; steps produce new instances."""

    f: np.ndarray
    time: float
    fields: FieldState


@dataclass
class SheCurrent:
    """Face currents: j_y, j_z on the xi-face families (one face per cell,
    stored at the lower-index cell), j_eps on energy faces with the zero-flux
    closure j_eps[..., 0] = j_eps[..., -1] = 0."""

    j_y: np.ndarray
    j_z: np.ndarray
    j_eps: np.ndarray


@dataclass
class SheRun:
    """Series produced by run(): one entry per completed step (plus t = 0)."""

    times: np.ndarray
    mass: np.ndarray
    weighted_norm: np.ndarray
    truncation: np.ndarray
    snapshots: list
    dt: float
    warnings: list


# ---------------------------------------------------------------------------
# operator assembly


def _face_average_matrix(ny: int, nz: int, ne: int) -> sp.csr_matrix:
    """T: z-face values -> y-face values by the four touching faces.

    y-face (iy+1/2, iz) neighbors the z-faces (iy, iz-1/2), (iy, iz+1/2),
    (iy+1, iz-1/2), (iy+1, iz+1/2); all indices periodic. The reverse map is
    exactly the matrix transpose, which the cross blocks of the face tensor
    rely on.
    """
    iy, iz, k = np.meshgrid(np.arange(ny), np.arange(nz), np.arange(ne),
                            indexing="ij")
    rows = ((iy * nz + iz) * ne + k).ravel()

    def zface(jy, jz):
        return (((jy % ny) * nz + (jz % nz)) * ne + k).ravel()

    cols = np.concatenate([zface(iy, iz - 1), zface(iy, iz),
                           zface(iy + 1, iz - 1), zface(iy + 1, iz)])
    rows4 = np.tile(rows, 4)
    data = np.full(rows4.size, 0.25)
    n = ny * nz * ne
    return sp.csr_matrix((data, (rows4, cols)), shape=(n, n))


def _gradient_matrix(model: SheModel, e_face: np.ndarray, axis: int) -> sp.csr_matrix:
    """One face family of the tilde gradient as a sparse matrix.

    Row f (one per cell, the face toward the next cell along `axis`) holds
    (F_next - F_cell)/h plus e_face[f] times the face energy slope: the
    average over the two adjacent cells of the centered slope, with
    quadratic one-sided slopes at the energy endpoints so the coupling
    stays second order in the cell width. The plus sign makes any function
    of total energy eps + phi stationary, matching the kinetic
    characteristics (the force is +E, kinetic energy grows along E).
    """
    ny, nz, ne = model.shape
    h = model.tgrid.dy if axis == 0 else model.tgrid.dz
    de = model.egrid.delta
    n = model.n_cells

    iy, iz, k = np.meshgrid(np.arange(ny), np.arange(nz), np.arange(ne),
                            indexing="ij")

    def cell(jy, jz, kk):
        return ((jy % ny) * nz + (jz % nz)) * ne + kk

    here = cell(iy, iz, k)
    there = cell(iy + 1, iz, k) if axis == 0 else cell(iy, iz + 1, k)

    rows = [here.ravel(), here.ravel()]
    cols = [there.ravel(), here.ravel()]
    data = [np.full(n, 1.0 / h), np.full(n, -1.0 / h)]

    # centered energy slope at interior cells, quadratic one-sided at the
    # endpoints (plain one-sided when only two cells exist); each adjacent
    # cell contributes half of its own slope
    if ne >= 3:
        edge_stencils = (
            (0, ((0, -1.5), (1, 2.0), (2, -0.5))),
            (ne - 1, ((0, 1.5), (-1, -2.0), (-2, 0.5))),
        )
    elif ne == 2:
        edge_stencils = ((0, ((0, -1.0), (1, 1.0))),
                         (1, ((0, 1.0), (-1, -1.0))))
    else:
        edge_stencils = ()
    half = np.repeat(e_face.ravel(), ne).reshape(ny, nz, ne) * 0.5 / de
    for neighbor in (here, there):
        inner = (k > 0) & (k < ne - 1)
        for off, wgt in ((-1, -0.5), (1, 0.5)):
            rows.append(here[inner])
            cols.append((neighbor + off)[inner])
            data.append(wgt * half[inner])
        for kk, stencil in edge_stencils:
            edge = (k == kk)
            for off, wgt in stencil:
                rows.append(here[edge])
                cols.append((neighbor + off)[edge])
                data.append(wgt * half[edge])

    mat = sp.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n))
    mat.sum_duplicates()
    return mat


def _face_fields(model: SheModel, fields: FieldState) -> tuple[np.ndarray, np.ndarray]:
    """Field components averaged to their face families, shapes (n_y, n_z)."""
    ey = 0.5 * (fields.e_y + np.roll(fields.e_y, -1, axis=0))
    ez = 0.5 * (fields.e_z + np.roll(fields.e_z, -1, axis=1))
    return ey, ez


def _face_tensor(model: SheModel) -> dict:
    """Diffusivity entries averaged to faces, each shape (n_y, n_z, n_eps)."""
    d = model.d_cells

    def avg(entry, axis):
        return 0.5 * (entry + np.roll(entry, -1, axis=axis))

    return {
        "yy_y": avg(d[..., 0, 0], 0), "yz_y": avg(d[..., 0, 1], 0),
        "zz_z": avg(d[..., 1, 1], 1), "zy_z": avg(d[..., 1, 0], 1),
    }


def _operator(model: SheModel, fields: FieldState):
    """Sparse pieces (A_y, A_z, M blocks, L = A^T M A) for the given fields.

    Cached for the fixed-field modes; rebuilt per call when self-consistent
    (the field moves every step).
    """
    cacheable = model.field_mode != "self-consistent"
    if cacheable and "L" in model._cache:
        return model._cache

    ey, ez = _face_fields(model, fields)
    a_y = _gradient_matrix(model, ey, axis=0)
    a_z = _gradient_matrix(model, ez, axis=1)
    a = sp.vstack([a_y, a_z], format="csr")

    ft = _face_tensor(model)
    t_avg = _face_average_matrix(*model.shape)
    m_yy = sp.diags(ft["yy_y"].ravel())
    m_zz = sp.diags(ft["zz_z"].ravel())
    m_yz = sp.diags(ft["yz_y"].ravel()) @ t_avg
    m_zy = sp.diags(ft["zy_z"].ravel()) @ t_avg.T
    m_mat = sp.bmat([[m_yy, m_yz], [m_zy, m_zz]], format="csr")

    lop = (a.T @ m_mat @ a).tocsr()
    pieces = {"a_y": a_y, "a_z": a_z, "a": a, "m": m_mat, "L": lop,
              "ey": ey, "ez": ez}
    if cacheable:
        model._cache.update(pieces)
    return pieces


# ---------------------------------------------------------------------------
# diagnostics


def total_mass(model: SheModel, state: SheState) -> float:
    """sum m(eps) F over cells times the cell volume."""
    return float(np.einsum("e,yze->", model.mass_density(), state.f)
                 * model.cell_volume)


def weighted_norm(model: SheModel, state: SheState) -> float:
    """Dissipated quantity sum m(eps) F^2 times the cell volume."""
    return float(np.einsum("e,yze->", model.mass_density(), state.f**2)
                 * model.cell_volume)


def truncation_fraction(model: SheModel, state: SheState) -> float:
    """Mass fraction in the top 10% of energy cells (truncation monitor)."""
    ne = model.egrid.n_eps
    top = max(1, ne // 10)
    m = model.mass_density()
    total = np.einsum("e,yze->", m, state.f)
    if total <= 0.0:
        return 0.0
    high = np.einsum("e,yze->", m[ne - top:], state.f[..., ne - top:])
    return float(high / total)


def cfl_dt(model: SheModel, fields: FieldState) -> float:
    """Largest monotonicity-safe step times the safety factor.

    A trace bound of the tilted tensor: per cell, the stiffness is
    4 (D_yy/dy^2 + D_zz/dz^2 + (E, D E)/de^2) plus cross-term padding from
    the mixed xi and xi-energy couplings; dt = c_safe * min m / stiffness.
    For a diagonal uniform tensor with E = 0 this lands on the classical
    explicit-Euler diffusion bound m h^2 / (2 tr D) within the safety factor.
    """
    d = model.d_cells
    sym = 0.5 * (d + np.swapaxes(d, -1, -2))
    dyy, dzz = sym[..., 0, 0], sym[..., 1, 1]
    dyz = sym[..., 0, 1]
    dy, dz, de = model.tgrid.dy, model.tgrid.dz, model.egrid.delta

    ey = fields.e_y[..., None]
    ez = fields.e_z[..., None]
    ede = dyy * ey**2 + 2.0 * dyz * ey * ez + dzz * ez**2
    de_y = np.abs(dyy * ey + dyz * ez)
    de_z = np.abs(dyz * ey + dzz * ez)

    stiff = (4.0 * (dyy / dy**2 + dzz / dz**2 + ede / de**2)
             + 4.0 * np.abs(dyz) / (dy * dz)
             + 4.0 * (de_y / (dy * de) + de_z / (dz * de)))
    m = model.mass_density()[None, None, :]
    with np.errstate(divide="ignore"):
        bound = np.where(stiff > 0.0, m / np.maximum(stiff, 1e-300), np.inf)
    return float(model.c_safe * np.min(bound))


# ---------------------------------------------------------------------------
# state construction and stepping


def init_state(f_init, tgrid: TransverseGrid, egrid: EnergyGrid,
               d_cells: np.ndarray | None = None,
               sphere_grid=None, kernel=None, field_fn=None,
               field_mode: str = "self-consistent",
               doping="matched",
               frozen_fields: FieldState | None = None,
               c_safe: float = 0.9, n_x: int = 64) -> tuple[SheModel, SheState]:
    """Build a model and its initial state.

    Args:
        f_init: callable f(y, z, eps) -> F values (broadcast over center
            arrays) or an array of shape (n_y, n_z, n_eps); must be >= 0.
        d_cells: diffusivity per cell; give either this directly (test
            injections, identity tensors) or the triple (sphere_grid, kernel,
            field_fn) from which the tensor table is assembled.
        field_fn: magnetic field: constant or callable B(y, z).
        field_mode: "none", "frozen" (pass frozen_fields) or
            "self-consistent" (initial Poisson solve; doping must neutralize).
        doping: "matched" (uniform background equal to the mean electron
            charge), None (zero) or an (n_y, n_z) array.

    Raises:
        ConfigurationError: negative initial values or inconsistent inputs.
        NeutralityError: self-consistent mode with non-neutral total charge.
    """
    if field_mode not in ("none", "frozen", "self-consistent"):
        raise ConfigurationError(f"unknown field mode '{field_mode}'")

    if callable(f_init):
        y = tgrid.y[:, None, None]
        z = tgrid.z[None, :, None]
        eps = egrid.centers[None, None, :]
        f0 = np.asarray(np.broadcast_to(f_init(y, z, eps),
                                        (tgrid.n_y, tgrid.n_z, egrid.n_eps)),
                        dtype=float).copy()
    else:
        f0 = np.asarray(f_init, dtype=float).copy()
        if f0.shape != (tgrid.n_y, tgrid.n_z, egrid.n_eps):
            raise ConfigurationError(
                f"initial data shape {f0.shape} != {(tgrid.n_y, tgrid.n_z, egrid.n_eps)}")
    if np.any(f0 < 0.0) or not np.all(np.isfinite(f0)):
        raise ConfigurationError("initial energy distribution must be finite and >= 0")

    if d_cells is None:
        if sphere_grid is None or kernel is None or field_fn is None:
            raise ConfigurationError(
                "give d_cells directly or (sphere_grid, kernel, field_fn) to assemble it")
        table = tabulate_tensor(sphere_grid, kernel, egrid, tgrid.y, tgrid.z,
                                field_fn=field_fn, n_x=n_x)
        d_cells = table.tensors
    d_cells = np.asarray(d_cells, dtype=float)
    if d_cells.shape != (tgrid.n_y, tgrid.n_z, egrid.n_eps, 2, 2):
        raise ConfigurationError(
            f"tensor field shape {d_cells.shape} != {(tgrid.n_y, tgrid.n_z, egrid.n_eps, 2, 2)}")

    electron = charge_density(f0, egrid)
    if doping is None:
        doping_arr = np.zeros((tgrid.n_y, tgrid.n_z))
    elif isinstance(doping, str) and doping == "matched":
        doping_arr = np.full((tgrid.n_y, tgrid.n_z), float(np.mean(electron)))
    else:
        doping_arr = np.asarray(doping, dtype=float)
        if doping_arr.shape != (tgrid.n_y, tgrid.n_z):
            raise ConfigurationError("doping shape mismatch")

    model = SheModel(tgrid=tgrid, egrid=egrid, d_cells=d_cells,
                     doping=doping_arr, field_mode=field_mode, c_safe=c_safe)

    if field_mode == "none":
        fields = _zero_fields(tgrid)
    elif field_mode == "frozen":
        if frozen_fields is None:
            raise ConfigurationError("frozen mode needs frozen_fields")
        fields = frozen_fields
    else:
        fields = solve_poisson(electron - doping_arr, tgrid)

    return model, SheState(f=f0, time=0.0, fields=fields)


def compute_current(model: SheModel, state: SheState) -> SheCurrent:
    """Face currents J = -D grad~ F plus the diagnostic energy flux.

    j_eps on interior energy faces is the average over the two adjacent
    energy cells of E . J with cell-centered J (work done by the field moves
    mass up in energy); the closure faces are exactly zero.
    """
    ny, nz, ne = model.shape
    ops = _operator(model, state.fields)
    fvec = state.f.ravel()
    g = ops["a"] @ fvec
    j = -(ops["m"] @ g)
    j_y = j[:model.n_cells].reshape(ny, nz, ne)
    j_z = j[model.n_cells:].reshape(ny, nz, ne)

    jy_c = 0.5 * (j_y + np.roll(j_y, 1, axis=0))
    jz_c = 0.5 * (j_z + np.roll(j_z, 1, axis=1))
    edotj = state.fields.e_y[..., None] * jy_c + state.fields.e_z[..., None] * jz_c
    j_eps = np.zeros((ny, nz, ne + 1))
    j_eps[..., 1:ne] = 0.5 * (edotj[..., :-1] + edotj[..., 1:])
    return SheCurrent(j_y=j_y, j_z=j_z, j_eps=j_eps)


def step(model: SheModel, state: SheState, dt: float) -> SheState:
    """One explicit conservative step; returns a new state.

    Raises:
        StepSizeError: dt exceeds the stability bound for the current fields.
        PositivityError: updated F dips below -positivity_tol.
    """
    limit = cfl_dt(model, state.fields)
    if dt > limit * (1.0 + 1e-12):
        raise StepSizeError(f"dt = {dt:.3e} exceeds the stable bound {limit:.3e}")

    ops = _operator(model, state.fields)
    m = model.mass_density()
    rate = (ops["L"] @ state.f.ravel()).reshape(model.shape) / m[None, None, :]
    f_new = state.f - dt * rate

    worst = float(np.min(f_new))
    if worst < -model.positivity_tol:
        raise PositivityError(f"distribution fell to {worst:.3e} after a step")

    if model.field_mode == "self-consistent":
        rho = charge_density(f_new, model.egrid, model.doping)
        fields = solve_poisson(rho, model.tgrid, neutralize=True)
    else:
        fields = state.fields
    return SheState(f=f_new, time=state.time + dt, fields=fields)


def propagate_frozen(model: SheModel, state: SheState, t: float) -> SheState:
    """Advance by t with the exact exponential of the frozen operator.

    With the fields held fixed the evolution is the linear constant system
    dF/dt = -M^{-1} L F, so a Krylov matrix exponential propagates any span
    in one call with no time-discretization error and no step-size bound.
    Intended for reference solutions; raises ConfigurationError in
    self-consistent mode where the operator changes with F.
    """
    if model.field_mode == "self-consistent":
        raise ConfigurationError(
            "exact propagation needs a frozen operator (field mode "
            "'self-consistent' updates it every step)")
    if t < 0.0:
        raise ConfigurationError(f"propagation span must be >= 0 (got {t})")
    if t == 0.0:
        return SheState(f=state.f.copy(), time=state.time, fields=state.fields)
    ops = _operator(model, state.fields)
    minv = sp.diags(np.repeat(1.0 / model.mass_density()[None, :],
                              model.tgrid.n_y * model.tgrid.n_z,
                              axis=0).ravel())
    flat = spl.expm_multiply(-t * (minv @ ops["L"]), state.f.ravel())
    return SheState(f=flat.reshape(model.shape), time=state.time + t,
                    fields=state.fields)


def run(model: SheModel, state: SheState, t_final: float, dt: float = 0.0,
        snapshot_every: int = 0, truncation_warn: float = 1e-6) -> tuple[SheState, SheRun]:
    """Step to t_final recording conservation series and optional snapshots.

    Args:
        dt: fixed step; 0 picks the stability bound of the initial fields
            (shrunk to divide t_final evenly).
        snapshot_every: record (t, F copy) every that many steps (0: none,
            final state always recorded when > 0).

    Returns:
        (final state, series record).
    """
    if t_final < 0.0:
        raise ConfigurationError("t_final must be >= 0")
    if t_final == 0.0:
        snaps = [(0.0, state.f.copy())] if snapshot_every else []
        series = SheRun(times=np.array([0.0]),
                        mass=np.array([total_mass(model, state)]),
                        weighted_norm=np.array([weighted_norm(model, state)]),
                        truncation=np.array([truncation_fraction(model, state)]),
                        snapshots=snaps, dt=0.0, warnings=[])
        return state, series

    if dt <= 0.0:
        dt = cfl_dt(model, state.fields)
    n_steps = max(1, int(math.ceil(t_final / dt - 1e-12)))
    dt = t_final / n_steps

    times = [state.time]
    mass = [total_mass(model, state)]
    norm = [weighted_norm(model, state)]
    trunc = [truncation_fraction(model, state)]
    snapshots = [(state.time, state.f.copy())] if snapshot_every else []
    warnings: list[str] = []

    for k in range(n_steps):
        state = step(model, state, dt)
        times.append(state.time)
        mass.append(total_mass(model, state))
        norm.append(weighted_norm(model, state))
        trunc.append(truncation_fraction(model, state))
        if snapshot_every and ((k + 1) % snapshot_every == 0 or k == n_steps - 1):
            snapshots.append((state.time, state.f.copy()))

    if trunc[-1] > truncation_warn:
        warnings.append(
            f"truncation mass fraction {trunc[-1]:.3e} exceeds {truncation_warn:.1e}; "
            "raise eps_max")

    series = SheRun(times=np.asarray(times), mass=np.asarray(mass),
                    weighted_norm=np.asarray(norm), truncation=np.asarray(trunc),
                    snapshots=snapshots, dt=dt, warnings=warnings)
    return state, series
