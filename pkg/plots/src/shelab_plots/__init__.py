"""shelab-plots: static images from the transport laboratory's run files.

The simulator side of the project speaks only files: CSV tables with fixed
headers and JSON reports with a config echo. This package reads those files
by column name and renders one image per job, deterministically, without
importing or invoking the simulator. Four plot kinds cover the artifacts:
curve (diffusivity tables), decay (relaxation ledgers), convergence
(alpha-refinement distances) and heatmap (transport snapshots).
"""

__version__ = "0.1.0"

from .render import PlotJob, render  # noqa: F401

__all__ = ["__version__", "PlotJob", "render"]
