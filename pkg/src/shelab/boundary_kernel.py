"""Wall reflection operators on hemisphere traces.

A reflection law K maps the outgoing trace of a distribution at a wall to the
incoming one through a density K(omega' -> omega):

    (K g)(omega)  = int_out K(omega' -> omega) g(omega') |omega'_x| domega',
    (K* h)(omega') = int_in  K(omega' -> omega) h(omega)  |omega_x|  domega,

with the flux measure |omega_x| domega on both hemispheres. Admissible laws
satisfy flux conservation (every column of the density carries unit flux),
normalization (K 1 = 1), and reciprocity K(omega' -> omega) =
K(-omega -> -omega'). Flux conservation is enforced here at construction by a
per-column rescale; the other two are measured and reported.

Discretely both hemispheres live in one (|mu|, phi) index space (see
sphere_geometry), where the mirror map is the identity, so the same density
matrix serves both walls. The density is stored as matrix[in, out]; operators
are compositions with diag(flux weights).

Key spectral facts mirrored by the reports: the flux-average projector Q is
the Darrozes-Guiraud equality subspace, k0 = ||K P|| < 1 quantifies the
spectral gap on fluctuations (exactly 0 for the isotropic law), and the
specular law (a permutation, built by make_specular_kernel for use as a
counterexample) has k0 = 1 with a fully degenerate fixed-point space.

The absorbing variant K_eta = P K + (1 + eta)^{-1} J Q deliberately breaks
flux conservation: a constant trace returns scaled by 1/(1 + eta). Its flux
defect eta/(1 + eta) is a feature and is reported, not repaired.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, PositivityError
from .sphere_geometry import SphereGrid

__all__ = [
    "BoundaryKernel",
    "KernelReport",
    "make_isotropic_kernel",
    "make_custom_kernel",
    "make_specular_kernel",
    "make_eta_kernel",
    "apply_kernel",
    "apply_kernel_adjoint",
    "flux_average",
    "project_mean",
    "project_fluctuation",
    "check_kernel",
]


@dataclass(frozen=True)
class BoundaryKernel:
    """Discrete reflection law on the shared hemisphere index space.

    Attributes:
        grid: the sphere grid whose hemispheres the kernel couples.
        density: matrix[in, out] of kernel values, shape (H, H) with
            H = n_mu_half * n_phi, hemisphere-local C order (ring, phi).
        kind: "isotropic", "custom", "specular" or "eta"; drives the Monte
            Carlo sampler registry and a few safety switches.
        eta: absorption parameter (only meaningful for kind "eta").
    """

    grid: SphereGrid
    density: np.ndarray
    kind: str
    eta: float = 0.0

    @property
    def size(self) -> int:
        return self.grid.n_mu_half * self.grid.n_phi

    def flux_weights(self) -> np.ndarray:
        """Flattened hemisphere flux weights, shape (H,)."""
        return self.grid.flux_weights().ravel()

    def operator(self) -> np.ndarray:
        """Matrix of g_out -> incoming values, i.e. density @ diag(fw)."""
        return self.density * self.flux_weights()[None, :]

    def adjoint_operator(self) -> np.ndarray:
        """Matrix of h_in -> outgoing values of K* h."""
        return self.density.T * self.flux_weights()[None, :]


def _rescale_columns(grid: SphereGrid, raw: np.ndarray) -> np.ndarray:
    """Enforce unit outgoing flux per column (the conservation identity)."""
    fw = grid.flux_weights().ravel()
    col_flux = fw @ raw
    if np.any(col_flux <= 0.0):
        raise PositivityError("kernel column with nonpositive flux")
    return raw / col_flux[None, :]


def make_isotropic_kernel(grid: SphereGrid) -> BoundaryKernel:
    """Diffuse (cosine-law) reflection: constant density 1/pi, renormalized.

    On the symmetric grid the column rescale keeps the density constant, so
    normalization and reciprocity hold to roundoff as well.
    """
    h = grid.n_mu_half * grid.n_phi
    raw = np.full((h, h), 1.0 / np.pi)
    return BoundaryKernel(grid=grid, density=_rescale_columns(grid, raw), kind="isotropic")


def make_custom_kernel(raw: np.ndarray, grid: SphereGrid) -> BoundaryKernel:
    """Build a reflection law from strictly positive raw density values.

    Args:
        raw: (H, H) array raw[in, out] in the shared hemisphere index space;
            the wall-normal component enters through |omega_x| only, so the
            same matrix serves both walls.
        grid: sphere grid the kernel binds to.

    Raises:
        PositivityError: any raw value is not strictly positive.
    """
    h = grid.n_mu_half * grid.n_phi
    raw = np.asarray(raw, dtype=float)
    if raw.shape != (h, h):
        raise ConfigurationError(f"kernel shape {raw.shape} != {(h, h)}")
    if np.any(raw <= 0.0) or not np.all(np.isfinite(raw)):
        raise PositivityError("kernel density must be strictly positive and finite")
    return BoundaryKernel(grid=grid, density=_rescale_columns(grid, raw), kind="custom")


def make_specular_kernel(grid: SphereGrid) -> BoundaryKernel:
    """Mirror reflection as a trace operator: the identity permutation.

    Not an admissible density (it is a delta, so the positivity requirement
    of make_custom_kernel is waived on purpose). Shipped as the standard
    counterexample: the fixed-point space of I - K* is the whole trace space,
    k0 = 1, and downstream assemblies must refuse it.
    """
    fw = grid.flux_weights().ravel()
    density = np.diag(1.0 / fw)
    return BoundaryKernel(grid=grid, density=density, kind="specular")


def _flux_projector(kernel: BoundaryKernel) -> np.ndarray:
    """Matrix of the flux-average projector Q on one hemisphere."""
    fw = kernel.flux_weights()
    return np.ones((kernel.size, 1)) @ (fw[None, :] / np.sum(fw))


def make_eta_kernel(base: BoundaryKernel, eta: float) -> BoundaryKernel:
    """Absorbing regularization P K + (1 + eta)^{-1} J Q of a base law.

    Constants come back multiplied by 1/(1 + eta); fluctuations pass through
    the fluctuation part of the base kernel. Operator distance to the base
    law is eta/(1 + eta), so eta -> 0 recovers it. No flux rescale is applied:
    the flux defect is the point.
    """
    if eta <= 0.0:
        raise ConfigurationError("absorption parameter must be positive")
    q = _flux_projector(base)
    op = (np.eye(base.size) - q) @ base.operator() + q / (1.0 + eta)
    density = op / base.flux_weights()[None, :]
    return BoundaryKernel(grid=base.grid, density=density, kind="eta", eta=eta)


def apply_kernel(kernel: BoundaryKernel, g_out: np.ndarray) -> np.ndarray:
    """Incoming trace K g from outgoing nodal values (flat or (n_mu_half, n_phi))."""
    shape = g_out.shape
    out = kernel.operator() @ g_out.ravel()
    return out.reshape(shape)


def apply_kernel_adjoint(kernel: BoundaryKernel, h_in: np.ndarray) -> np.ndarray:
    """Outgoing values K* h from incoming nodal values."""
    shape = h_in.shape
    out = kernel.adjoint_operator() @ h_in.ravel()
    return out.reshape(shape)


def flux_average(kernel: BoundaryKernel, g: np.ndarray) -> float:
    """Flux-measure average of a hemisphere trace (the Q amplitude)."""
    fw = kernel.flux_weights()
    return float(fw @ g.ravel() / np.sum(fw))


def project_mean(kernel: BoundaryKernel, g: np.ndarray) -> np.ndarray:
    """Q g: the flux average of a trace as a constant hemisphere function."""
    return np.full_like(np.asarray(g, dtype=float), flux_average(kernel, g))


def project_fluctuation(kernel: BoundaryKernel, g: np.ndarray) -> np.ndarray:
    """P g = g - Q g, the Darrozes-Guiraud strict-decay part."""
    return g - flux_average(kernel, g)


@dataclass
class KernelReport:
    """Measured invariants of a reflection law; serializes to the report JSON."""

    kind: str
    n_mu_half: int
    n_phi: int
    flux_defect: float
    norm_defect: float
    reciprocity_defect: float
    dg_min_margin: float
    k0: float
    null_dim: int
    constant_response: float
    algebra_defects: dict = field(default_factory=dict)
    elapsed_s: float = 0.0

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n_mu_half": self.n_mu_half,
            "n_phi": self.n_phi,
            "flux_defect": self.flux_defect,
            "norm_defect": self.norm_defect,
            "reciprocity_defect": self.reciprocity_defect,
            "dg_min_margin": self.dg_min_margin,
            "k0": self.k0,
            "null_dim": self.null_dim,
            "constant_response": self.constant_response,
            "algebra_defects": dict(self.algebra_defects),
            "elapsed_s": self.elapsed_s,
        }


def _antipode_permutation(grid: SphereGrid) -> np.ndarray:
    """Flat hemisphere index permutation of phi -> phi + pi (ring preserved)."""
    n_phi = grid.n_phi
    shift = np.roll(np.arange(n_phi), -(n_phi // 2))
    rings = np.arange(grid.n_mu_half)[:, None]
    return (rings * n_phi + shift[None, :]).ravel()


def check_kernel(kernel: BoundaryKernel, seed: int = 0, n_trials: int = 100) -> KernelReport:
    """Measure every reportable invariant of a reflection law.

    Defects are absolute maxima. The Darrozes-Guiraud margin is the minimum of
    ||g||^2 - ||K g||^2 over unit-flux-norm random traces (nonnegative for any
    admissible law, zero exactly on constants). k0 is the weighted operator
    norm of K restricted to fluctuations; null_dim counts the fixed-point
    directions of the mirrored adjoint (1 for admissible laws, by uniqueness
    of the wall equilibrium).
    """
    t0 = time.perf_counter()
    fw = kernel.flux_weights()
    h = kernel.size
    op = kernel.operator()
    adj = kernel.adjoint_operator()
    dens = kernel.density

    flux_defect = float(np.max(np.abs(fw @ dens - 1.0)))
    norm_defect = float(np.max(np.abs(dens @ fw - 1.0)))

    perm = _antipode_permutation(kernel.grid)
    recip = dens.T[np.ix_(perm, perm)]
    reciprocity_defect = float(np.max(np.abs(dens - recip)))

    rng = np.random.default_rng(seed)
    margins = np.empty(n_trials)
    for t in range(n_trials):
        g = rng.standard_normal(h)
        g /= np.sqrt(fw @ g**2)
        kg = op @ g
        margins[t] = 1.0 - fw @ kg**2
    dg_min_margin = float(np.min(margins))

    sqw = np.sqrt(fw)
    q = _flux_projector(kernel)
    p = np.eye(h) - q
    k0 = float(np.linalg.norm((sqw[:, None] * (op @ p)) / sqw[None, :], ord=2))

    # fixed points of the wall map: singular values of I - J K* (J is the
    # identity in the shared index space)
    sing = np.linalg.svd(np.eye(h) - adj, compute_uv=False)
    null_dim = int(np.sum(sing < 1e-8 * max(1.0, float(sing[0]))))

    ones = np.ones(h)
    resp = op @ ones
    constant_response = float(fw @ resp / np.sum(fw))

    algebra_defects = {
        "KQ_minus_Q": float(np.max(np.abs(op @ q - q))),
        "QK_minus_Q": float(np.max(np.abs(q @ op - q))),
        "KP_minus_PK": float(np.max(np.abs(op @ p - p @ op))),
        "constant_response_deviation": float(np.max(np.abs(resp - constant_response))),
    }

    return KernelReport(
        kind=kernel.kind,
        n_mu_half=kernel.grid.n_mu_half,
        n_phi=kernel.grid.n_phi,
        flux_defect=flux_defect,
        norm_defect=norm_defect,
        reciprocity_defect=reciprocity_defect,
        dg_min_margin=dg_min_margin,
        k0=k0,
        null_dim=null_dim,
        constant_response=constant_response,
        algebra_defects=algebra_defects,
        elapsed_s=time.perf_counter() - t0,
    )
