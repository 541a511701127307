"""Electrostatics on the periodic transverse box.

The transverse plane is a periodic box of size box_y x box_z; the potential
solves -Lap phi = rho in the zero-mean gauge (the periodic stand-in for decay
at infinity). Solvability demands a neutral total charge; a doping background
C(xi) subtracted from the electron charge provides it. The solve is spectral,
E = -grad phi comes from the same coefficients, and the reported residual is
the max-norm defect of -Lap phi against the neutralized charge, which sits at
roundoff by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NeutralityError
from .sphere_geometry import EnergyGrid

__all__ = [
    "TransverseGrid",
    "FieldState",
    "build_transverse_grid",
    "charge_density",
    "solve_poisson",
    "frozen_cosine_field",
]


@dataclass(frozen=True)
class TransverseGrid:
    """Uniform periodic cells on [0, box_y) x [0, box_z); centers at (i + 1/2) d."""

    n_y: int
    n_z: int
    box_y: float
    box_z: float

    @property
    def dy(self) -> float:
        return self.box_y / self.n_y

    @property
    def dz(self) -> float:
        return self.box_z / self.n_z

    @property
    def y(self) -> np.ndarray:
        return (np.arange(self.n_y) + 0.5) * self.dy

    @property
    def z(self) -> np.ndarray:
        return (np.arange(self.n_z) + 0.5) * self.dz


def build_transverse_grid(n_y: int, n_z: int, box_y: float, box_z: float) -> TransverseGrid:
    if n_y < 2 or n_z < 2:
        raise ConfigurationError("need at least 2 cells per transverse direction")
    if box_y <= 0.0 or box_z <= 0.0:
        raise ConfigurationError("box lengths must be positive")
    return TransverseGrid(n_y=n_y, n_z=n_z, box_y=box_y, box_z=box_z)


@dataclass
class FieldState:
    """Potential and field on the transverse cells, plus the spectral residual."""

    grid: TransverseGrid
    phi: np.ndarray
    e_y: np.ndarray
    e_z: np.ndarray
    residual: float

    def at(self, y: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Nearest-cell field lookup for particle positions (periodic)."""
        iy = np.floor(np.mod(y, self.grid.box_y) / self.grid.dy).astype(int) % self.grid.n_y
        iz = np.floor(np.mod(z, self.grid.box_z) / self.grid.dz).astype(int) % self.grid.n_z
        return self.e_y[iy, iz], self.e_z[iy, iz]


def charge_density(f: np.ndarray, egrid: EnergyGrid,
                   doping: np.ndarray | None = None) -> np.ndarray:
    """Electron charge 4 pi sum_eps sqrt(2 eps) F d_eps minus the doping background."""
    f = np.asarray(f, dtype=float)
    rho = 4.0 * np.pi * egrid.delta * np.einsum("e,yze->yz", egrid.density(), f)
    if doping is not None:
        rho = rho - np.asarray(doping, dtype=float)
    return rho


def solve_poisson(rho: np.ndarray, grid: TransverseGrid,
                  neutralize: bool = False,
                  neutrality_tol: float = 1e-10) -> FieldState:
    """Spectral solve of -Lap phi = rho with periodic BCs and zero-mean gauge.

    Args:
        neutralize: subtract the mean charge instead of failing on it (used
            by self-consistent runs whose doping already matched the mean;
            the subtraction then only removes roundoff).

    Raises:
        NeutralityError: |mean charge| exceeds neutrality_tol * max|rho| and
            neutralize is False.
    """
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (grid.n_y, grid.n_z):
        raise ConfigurationError(f"charge shape {rho.shape} != {(grid.n_y, grid.n_z)}")

    mean = float(np.mean(rho))
    scale = max(float(np.max(np.abs(rho))), 1e-300)
    if abs(mean) > neutrality_tol * scale:
        if not neutralize:
            raise NeutralityError(
                f"total charge {mean:.3e} (relative {abs(mean) / scale:.3e}) is not neutral"
            )
    rho_n = rho - mean

    ky = 2.0 * np.pi * np.fft.fftfreq(grid.n_y, d=grid.dy)
    kz = 2.0 * np.pi * np.fft.fftfreq(grid.n_z, d=grid.dz)
    k2 = ky[:, None] ** 2 + kz[None, :] ** 2
    rho_hat = np.fft.fft2(rho_n)
    with np.errstate(divide="ignore", invalid="ignore"):
        phi_hat = np.where(k2 > 0.0, rho_hat / k2, 0.0)

    phi = np.real(np.fft.ifft2(phi_hat))
    e_y = np.real(np.fft.ifft2(-1j * ky[:, None] * phi_hat))
    e_z = np.real(np.fft.ifft2(-1j * kz[None, :] * phi_hat))

    lap = np.real(np.fft.ifft2(-k2 * phi_hat))
    residual = float(np.max(np.abs(-lap - rho_n)))
    return FieldState(grid=grid, phi=phi, e_y=e_y, e_z=e_z, residual=residual)


def frozen_cosine_field(grid: TransverseGrid, amplitude: float,
                        mode: int = 1) -> FieldState:
    """Analytic frozen field of the potential amplitude * cos(2 pi mode y / box_y).

    E_y = (2 pi mode amplitude / box_y) sin(2 pi mode y / box_y), E_z = 0;
    sampled at cell centers, residual not applicable (exact field).
    """
    if mode < 1:
        raise ConfigurationError("field mode number must be >= 1")
    k = 2.0 * np.pi * mode / grid.box_y
    y = grid.y[:, None]
    phi = amplitude * np.cos(k * y) * np.ones((1, grid.n_z))
    e_y = amplitude * k * np.sin(k * y) * np.ones((1, grid.n_z))
    e_z = np.zeros((grid.n_y, grid.n_z))
    return FieldState(grid=grid, phi=phi, e_y=e_y, e_z=e_z, residual=0.0)
