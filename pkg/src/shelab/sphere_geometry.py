"""Direction-sphere and energy discretization for slab transport.

Velocity space is parameterized by kinetic energy and direction,
v = sqrt(2 eps) * omega with omega on the unit sphere, so velocity integrals
factor through the coarea formula

    int phi(v) dv = int_0^inf int_{S^2} phi(eps, omega) sqrt(2 eps) deps domega.

Directions use a tensor rule: Gauss-Legendre nodes in the wall-normal cosine
mu = omega_x (2 * n_mu_half of them, symmetric about zero, never on the
grazing circle mu = 0) times a uniform azimuth grid of n_phi points. Rings
are ordered positive hemisphere first, mirrored ring order in the negative
hemisphere, so the mirror map (omega_x -> -omega_x) is a block swap and the
two hemispheres share one (|mu|, phi) index space at the walls.

Uniform azimuth makes rotation about the x axis exact on band-limited
functions: it is a per-mode phase shift of the azimuthal Fourier transform.
The grid cannot distinguish the two rotation senses of the highest (Nyquist)
azimuthal mode; that mode is treated as a pure cosine, so a rotation scales
it by cos(m a). Keep sources band-limited below it (the shipped kernels and
sources use modes |m| <= 1).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "SphereGrid",
    "SphereFunction",
    "EnergyGrid",
    "build_sphere_grid",
    "build_energy_grid",
    "quad_sphere",
    "coarea_integrate",
    "rotate_about_x",
    "azimuthal_rotation_matrix",
    "mirror",
    "velocity_derivatives",
]


@dataclass(frozen=True)
class SphereGrid:
    """Product quadrature grid on the unit sphere.

    Attributes:
        n_mu_half: Gauss-Legendre rings per hemisphere.
        n_phi: uniform azimuth nodes (even).
        mu: signed ring cosines, shape (2 * n_mu_half,); entries [0:n_mu_half]
            are positive ascending, entries [n_mu_half:] their negatives in
            the same |mu| order (ring r mirrors ring r +/- n_mu_half).
        w_mu: Gauss-Legendre ring weights matching `mu`.
        phi: azimuth nodes 2 pi k / n_phi.
        w_phi: azimuth weight 2 pi / n_phi.
        omega_x/omega_y/omega_z: node direction components, (2 n_mu_half, n_phi).
        w_node: quadrature weights, (2 n_mu_half, n_phi); sums to 4 pi.
    """

    n_mu_half: int
    n_phi: int
    mu: np.ndarray
    w_mu: np.ndarray
    phi: np.ndarray
    w_phi: float
    omega_x: np.ndarray
    omega_y: np.ndarray
    omega_z: np.ndarray
    w_node: np.ndarray

    @property
    def n_rings(self) -> int:
        return 2 * self.n_mu_half

    @property
    def n_nodes(self) -> int:
        return self.n_rings * self.n_phi

    @property
    def pos(self) -> slice:
        """Ring slice of the hemisphere omega_x > 0."""
        return slice(0, self.n_mu_half)

    @property
    def neg(self) -> slice:
        """Ring slice of the hemisphere omega_x < 0."""
        return slice(self.n_mu_half, self.n_rings)

    def flux_weights(self) -> np.ndarray:
        """|omega_x|-weighted node weights of one hemisphere, (n_mu_half, n_phi).

        Both hemispheres share these by the mirrored ring ordering; they are
        the quadrature weights of the wall trace spaces L^2(|omega_x| domega).
        """
        return np.abs(self.mu[self.pos])[:, None] * self.w_node[self.pos]


@dataclass
class SphereFunction:
    """Nodal values on a SphereGrid, with azimuthal spectral access.

    values has shape (n_rings, n_phi). The spectral representation is the
    per-ring real FFT along the azimuth; nodal -> spectral -> nodal round
    trips to roundoff.
    """

    grid: SphereGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        expected = (self.grid.n_rings, self.grid.n_phi)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != expected:
            raise ConfigurationError(
                f"sphere function shape {self.values.shape} != grid shape {expected}"
            )

    @classmethod
    def from_callable(cls, grid: SphereGrid, fn: Callable) -> "SphereFunction":
        """Sample fn(omega_x, omega_y, omega_z) at the grid nodes."""
        return cls(grid, np.asarray(fn(grid.omega_x, grid.omega_y, grid.omega_z), dtype=float))

    def spectral(self) -> np.ndarray:
        """Azimuthal rfft per ring, shape (n_rings, n_phi // 2 + 1)."""
        return np.fft.rfft(self.values, axis=1)

    @classmethod
    def from_spectral(cls, grid: SphereGrid, coeff: np.ndarray) -> "SphereFunction":
        return cls(grid, np.fft.irfft(coeff, n=grid.n_phi, axis=1))


def build_sphere_grid(n_mu_half: int, n_phi: int) -> SphereGrid:
    """Build the Gauss-Legendre x uniform-azimuth sphere grid.

    Args:
        n_mu_half: rings per hemisphere; positive even integer.
        n_phi: azimuth nodes; even integer >= 4 (evenness keeps every node's
            antipode on the grid, which the reciprocity check requires).

    Raises:
        ConfigurationError: non-positive or odd counts.
    """
    if n_mu_half <= 0 or n_phi <= 0:
        raise ConfigurationError("grid counts must be positive")
    if n_mu_half % 2 or n_phi % 2:
        raise ConfigurationError("grid counts must be even")
    if n_phi < 4:
        raise ConfigurationError("need at least 4 azimuth nodes")

    nodes, weights = np.polynomial.legendre.leggauss(2 * n_mu_half)
    pos = nodes > 0.0
    mu_pos = nodes[pos]          # ascending, all strictly positive
    w_pos = weights[pos]
    mu = np.concatenate([mu_pos, -mu_pos])
    w_mu = np.concatenate([w_pos, w_pos])

    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    w_phi = 2.0 * np.pi / n_phi

    sin_theta = np.sqrt(1.0 - mu**2)
    omega_x = np.repeat(mu[:, None], n_phi, axis=1)
    omega_y = sin_theta[:, None] * np.cos(phi)[None, :]
    omega_z = sin_theta[:, None] * np.sin(phi)[None, :]
    w_node = w_mu[:, None] * np.full((1, n_phi), w_phi)

    return SphereGrid(
        n_mu_half=n_mu_half,
        n_phi=n_phi,
        mu=mu,
        w_mu=w_mu,
        phi=phi,
        w_phi=w_phi,
        omega_x=omega_x,
        omega_y=omega_y,
        omega_z=omega_z,
        w_node=w_node,
    )


def quad_sphere(f: "SphereFunction | np.ndarray", grid: SphereGrid | None = None) -> float:
    """Integrate over the sphere: sum of node weights times values."""
    if isinstance(f, SphereFunction):
        grid = f.grid
        values = f.values
    else:
        if grid is None:
            raise ConfigurationError("raw values need an explicit grid")
        values = np.asarray(f)
    return float(np.sum(grid.w_node * values))


@dataclass(frozen=True)
class EnergyGrid:
    """Uniform energy cells on [0, eps_max] carrying the sqrt(2 eps) density."""

    n_eps: int
    eps_max: float
    edges: np.ndarray
    centers: np.ndarray
    delta: float

    def density(self) -> np.ndarray:
        """Energy density of states N(eps) = sqrt(2 eps) at cell centers."""
        return np.sqrt(2.0 * self.centers)


def build_energy_grid(n_eps: int, eps_max: float) -> EnergyGrid:
    if n_eps <= 0:
        raise ConfigurationError("need a positive number of energy cells")
    if eps_max <= 0.0:
        raise ConfigurationError("energy cutoff must be positive")
    edges = np.linspace(0.0, eps_max, n_eps + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return EnergyGrid(n_eps=n_eps, eps_max=eps_max, edges=edges,
                      centers=centers, delta=float(edges[1] - edges[0]))


def coarea_integrate(fn: Callable, sgrid: SphereGrid, egrid: EnergyGrid) -> float:
    """Velocity-space integral via the coarea factorization.

    Args:
        fn: fn(eps, omega_x, omega_y, omega_z) -> integrand values broadcast
            against the node component arrays, on the energy shell eps.

    Returns:
        sum_e delta_eps sqrt(2 eps_c) * quad_sphere(fn(eps_c, .)), the
        midpoint rule in energy against the exact spherical quadrature.
    """
    total = 0.0
    for eps, rho in zip(egrid.centers, egrid.density()):
        values = np.broadcast_to(
            np.asarray(fn(float(eps), sgrid.omega_x, sgrid.omega_y, sgrid.omega_z),
                       dtype=float),
            sgrid.w_node.shape)
        total += egrid.delta * rho * quad_sphere(values, sgrid)
    return float(total)


def _phase_factors(n_phi: int, angle: float) -> np.ndarray:
    """rfft-bin multipliers realizing rotation by `angle` about the x axis.

    Modes m < n_phi/2 get exp(i m a); the Nyquist bin is treated as a pure
    cosine and gets the real factor cos(m a) (its sine partner vanishes at
    the nodes, so this is the unique grid-consistent choice).
    """
    m = np.arange(n_phi // 2 + 1)
    fac = np.exp(1j * m * angle)
    fac[-1] = np.cos(m[-1] * angle)
    return fac


def rotate_about_x(f: SphereFunction, angle: float) -> SphereFunction:
    """Pull back f by the rotation of angle `angle` about the x axis.

    The result g satisfies g(omega) = f(R(angle) omega) where R rotates the
    (omega_y, omega_z) plane: R(a) (y, z) = (y cos a - z sin a, y sin a + z cos a).
    In particular rotating f = omega_y by pi/2 yields -omega_z. Exact for
    band-limited f; the Nyquist mode follows the cosine convention above.
    """
    coeff = f.spectral() * _phase_factors(f.grid.n_phi, angle)[None, :]
    return SphereFunction.from_spectral(f.grid, coeff)


def azimuthal_rotation_matrix(n_phi: int, angle: float) -> np.ndarray:
    """Dense n_phi x n_phi matrix of the per-ring azimuthal rotation.

    Acts on a ring's nodal values the same way rotate_about_x does; used where
    the rotation must enter a linear system rather than be applied.
    """
    spec = np.fft.rfft(np.eye(n_phi), axis=1) * _phase_factors(n_phi, angle)[None, :]
    cols = np.fft.irfft(spec, n=n_phi, axis=1)
    # row i of `cols` holds the rotated i-th cardinal basis sampled at the
    # nodes, i.e. the i-th column of the operator matrix
    return cols.T


def mirror(f: SphereFunction) -> SphereFunction:
    """Reflect through the wall plane: (omega_x, omega_y, omega_z) -> (-omega_x, ...).

    A pure hemisphere block swap thanks to the mirrored ring ordering.
    """
    n = f.grid.n_mu_half
    values = np.concatenate([f.values[n:], f.values[:n]], axis=0)
    return SphereFunction(f.grid, values)


def velocity_derivatives(f: Callable, speed: float, omega, step: float = 1e-6):
    """Cartesian velocity gradient of a function given in the sphere chart.

    f takes the chart coordinates (|v|, omega_y, omega_z); omega_x is the
    dependent coordinate (its hemisphere sign is fixed by `omega`), so only
    the partials with respect to speed, omega_y and omega_z enter the chain
    rule. The chart partials are taken by central differences with `step`.

    Args:
        f: callable f(speed, omega_y, omega_z) -> float; the chart variables
            are treated as free (no unit-norm constraint when perturbing).
        speed: |v| > 0.
        omega: direction triple (omega_x, omega_y, omega_z) on the sphere.

    Returns:
        (df_dvx, df_dvy, df_dvz) at v = speed * omega.

    Raises:
        ConfigurationError: speed <= 0 (the chart is singular at v = 0).
    """
    s = float(speed)
    if s <= 0.0:
        raise ConfigurationError("velocity chart is singular at |v| = 0")
    wx, wy, wz = (float(c) for c in omega)
    h = float(step)

    fs = (f(s + h, wy, wz) - f(s - h, wy, wz)) / (2.0 * h)
    fy = (f(s, wy + h, wz) - f(s, wy - h, wz)) / (2.0 * h)
    fz = (f(s, wy, wz + h) - f(s, wy, wz - h)) / (2.0 * h)

    df_dvx = fs * wx - fy * wx * wy / s - fz * wx * wz / s
    df_dvy = fs * wy + fy * (1.0 - wy**2) / s - fz * wy * wz / s
    df_dvz = fs * wz - fy * wy * wz / s + fz * (1.0 - wz**2) / s
    return df_dvx, df_dvy, df_dvz
