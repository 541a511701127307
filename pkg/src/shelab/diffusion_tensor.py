"""Transverse diffusivity tensor of the wall-collision process.

On the energy shell eps, the two cell-problem solutions chi_y, chi_z (sources
g = omega_y, omega_z) define

    D_ij(B, eps) = (2 eps)^{3/2} int_0^1 int_{S^2} chi_i(x, omega) omega_j domega dx,

an (y, z)-indexed 2x2 tensor. Its symmetric part is positive semidefinite
(the wall Green identity turns (g, chi) into a trace-norm deficit); the
antisymmetric part is the Hall response of the magnetic rotation. The
x-integral of chi is available in closed form from the characteristic solver,
so assembly involves no x quadrature at all.

Scaling: chi scales as 1/|v| at fixed beta = B / sqrt(2 eps), hence
D(B, eps) = (2 eps) H(beta) for a dimensionless profile H. Two consequences
worth keeping in mind: D -> 0 as eps -> 0 at fixed B (beta -> infinity kills
H as 1/beta^2 on top of the 2 eps factor), and at B = 0 the tensor is finite
on any fixed grid but grows without bound as the mu grid refines (the 1/|mu|
moment diverges: no diffusive limit without the field).

The mean-squared-displacement oracle estimates sym(D) by simulating the
unscaled process (alpha = 1) with the shared particle flight engine: with the
uniform stationary measure on [0,1] x S^2 of total mass 4 pi and fixed speed
sqrt(2 eps),

    <Delta xi_i Delta xi_j> / (2 T) -> sym(D)_ij / (4 pi sqrt(2 eps)),

giving an estimate that shares no code path with the quadrature assembly
beyond the grid-free flight itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .auxiliary_problem import chi_components
from .boundary_kernel import BoundaryKernel
from .errors import ConfigurationError, PositivityError, ShelabError
from .kinetic_solver import ParticleState, free_flight
from .sphere_geometry import EnergyGrid, SphereGrid

__all__ = [
    "DiffusionTensor",
    "TensorTable",
    "MsdEstimate",
    "assemble_tensor",
    "tabulate_tensor",
    "check_positivity",
    "msd_oracle",
]


@dataclass(frozen=True)
class DiffusionTensor:
    """2x2 transverse diffusivity at one (B, eps), rows/cols ordered (y, z)."""

    magnetic_field: float
    eps: float
    matrix: np.ndarray

    @property
    def sym(self) -> np.ndarray:
        return 0.5 * (self.matrix + self.matrix.T)

    @property
    def lambda_min(self) -> float:
        return float(np.linalg.eigvalsh(self.sym)[0])


def assemble_tensor(grid: SphereGrid, kernel: BoundaryKernel, magnetic_field: float,
                    eps: float, n_x: int = 64,
                    positivity_tol: float = 1e-10) -> DiffusionTensor:
    """Assemble D(B, eps) from the closed-form x-integrals of chi_y, chi_z.

    Raises:
        SolvabilityError: propagated from the cell solve (degenerate wall
            system, e.g. the specular law).
        PositivityError: the symmetric part has an eigenvalue below
            -positivity_tol * max(1, ||D||).
    """
    sol_y, sol_z = chi_components(magnetic_field, eps, kernel, grid, n_x=n_x)
    scale = (2.0 * eps) ** 1.5
    w = grid.w_node
    d = np.empty((2, 2))
    for i, sol in enumerate((sol_y, sol_z)):
        d[i, 0] = scale * float(np.sum(w * sol.xint * grid.omega_y))
        d[i, 1] = scale * float(np.sum(w * sol.xint * grid.omega_z))
    tensor = DiffusionTensor(magnetic_field=magnetic_field, eps=eps, matrix=d)
    gate = positivity_tol * max(1.0, float(np.linalg.norm(d)))
    if tensor.lambda_min < -gate:
        raise PositivityError(
            f"diffusivity symmetric part indefinite: lambda_min = {tensor.lambda_min:.3e}"
        )
    return tensor


@dataclass
class TensorTable:
    """D sampled on a transverse-position x energy product grid.

    tensors has shape (n_y, n_z, n_eps, 2, 2); field holds B per transverse
    cell. With a uniform field each energy shell is solved once and broadcast.
    """

    y: np.ndarray
    z: np.ndarray
    eps: np.ndarray
    field: np.ndarray
    tensors: np.ndarray

    def lambda_min(self) -> np.ndarray:
        sym = 0.5 * (self.tensors + np.swapaxes(self.tensors, -1, -2))
        return np.linalg.eigvalsh(sym)[..., 0]


def tabulate_tensor(grid: SphereGrid, kernel: BoundaryKernel, egrid: EnergyGrid,
                    y: np.ndarray, z: np.ndarray, field_fn=1.0,
                    n_x: int = 64) -> TensorTable:
    """Tabulate D over transverse cells and energy shells.

    Args:
        field_fn: either a constant B or a callable B(y, z); repeated field
            values reuse the same shell solves through a cache.
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    if callable(field_fn):
        field = np.asarray([[float(field_fn(yy, zz)) for zz in z] for yy in y])
    else:
        field = np.full((y.size, z.size), float(field_fn))

    cache: dict = {}
    tensors = np.empty((y.size, z.size, egrid.n_eps, 2, 2))
    for iy in range(y.size):
        for iz in range(z.size):
            b = float(field[iy, iz])
            if b not in cache:
                shells = []
                for ie, eps in enumerate(egrid.centers):
                    try:
                        shells.append(
                            assemble_tensor(grid, kernel, b, float(eps), n_x=n_x).matrix)
                    except ShelabError as exc:
                        raise type(exc)(
                            f"tensor cell (iy={iy}, iz={iz}, ie={ie}, B={b:g}, "
                            f"eps={float(eps):g}): {exc}") from exc
                cache[b] = np.stack(shells)
            tensors[iy, iz] = cache[b]
    return TensorTable(y=y, z=z, eps=egrid.centers.copy(), field=field, tensors=tensors)


def check_positivity(table: TensorTable, tol: float = 1e-10) -> float:
    """Smallest symmetric-part eigenvalue in the table; raises if negative.

    Raises:
        PositivityError: any cell has lambda_min < -tol * max(1, ||D||_cell).
    """
    lam = table.lambda_min()
    scale = np.maximum(1.0, np.linalg.norm(table.tensors, axis=(-2, -1)))
    if np.any(lam < -tol * scale):
        worst = float(np.min(lam))
        raise PositivityError(f"diffusivity table indefinite: lambda_min = {worst:.3e}")
    return float(np.min(lam))


@dataclass
class MsdEstimate:
    """Monte Carlo mean-squared-displacement estimate of sym(D)."""

    matrix: np.ndarray
    stderr: np.ndarray
    t_final: float
    n_particles: int
    n_bounces: int


def msd_oracle(kernel: BoundaryKernel, magnetic_field: float, eps: float,
               n_particles: int = 100_000, t_final: float = 300.0,
               seed: int = 0) -> MsdEstimate:
    """Estimate lateral spreading of the unscaled wall process.

    Particles start from the uniform stationary state (x uniform, direction
    uniform, speed fixed at sqrt(2 eps)) and fly with alpha = 1 and no
    electric field; the returned matrix is the raw covariance rate
    <delta_i delta_j> / (2 T), which estimates sym(D) / (4 pi sqrt(2 eps)),
    the effective diffusivity of the particle density. Standard errors are
    empirical (per-particle spread / sqrt(N)).

    Raises:
        ConfigurationError: B = 0 (no diffusive limit to estimate).
    """
    if magnetic_field == 0.0:
        raise ConfigurationError("the displacement oracle needs a nonzero field")
    if eps <= 0.0 or n_particles <= 0 or t_final <= 0.0:
        raise ConfigurationError("oracle needs positive eps, particles and time")

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n = int(n_particles)
    speed = float(np.sqrt(2.0 * eps))
    state = ParticleState(
        x=rng.random(n),
        y=np.zeros(n),
        z=np.zeros(n),
        speed=np.full(n, speed),
        mu=2.0 * rng.random(n) - 1.0,
        psi=2.0 * np.pi * rng.random(n),
        weight=1.0,
        alpha=1.0,
    )
    free_flight(state, t_final, magnetic_field, kernel, rng)

    prods = np.stack([state.y * state.y, state.y * state.z, state.z * state.z])
    scale = 1.0 / (2.0 * t_final)
    mean = scale * prods.mean(axis=1)
    err = scale * prods.std(axis=1) / np.sqrt(n)
    matrix = np.array([[mean[0], mean[1]], [mean[1], mean[2]]])
    stderr = np.array([[err[0], err[1]], [err[1], err[2]]])
    return MsdEstimate(matrix=matrix, stderr=stderr, t_final=t_final,
                       n_particles=n, n_bounces=state.n_bounces)
