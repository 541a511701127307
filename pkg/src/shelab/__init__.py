"""shelab: a numerical laboratory for wall-driven transport in a slab.

Charged particles bounce between two diffusive walls under a transverse
magnetic field. The package builds the pieces of that story as verifiable
numerics: reflection kernels on the hemisphere (boundary_kernel), the cell
problem whose solution fixes the transverse diffusivity (auxiliary_problem,
diffusion_tensor), a periodic Poisson solver (field_solver), the limiting
energy-transport model (she_solver), particle and reduced kinetic engines
(kinetic_solver), and a deterministic command-line harness gluing them into
reproducible file-based experiments (cli_harness).
"""

__version__ = "0.1.0"

from . import (  # noqa: F401
    auxiliary_problem,
    boundary_kernel,
    cli_harness,
    diffusion_tensor,
    errors,
    field_solver,
    kinetic_solver,
    she_solver,
    sphere_geometry,
)

__all__ = [
    "__version__",
    "auxiliary_problem",
    "boundary_kernel",
    "cli_harness",
    "diffusion_tensor",
    "errors",
    "field_solver",
    "kinetic_solver",
    "she_solver",
    "sphere_geometry",
]
