"""Error taxonomy shared by every solver and the command line.

The command line maps these onto process exit codes: configuration problems
exit with 2, numerical failures (solvability, neutrality, step size,
positivity) with 3, and statistically inconclusive studies with 4.
"""

from __future__ import annotations


class ShelabError(Exception):
    """Base class for every error raised by this package on purpose."""


class ConfigurationError(ShelabError):
    """Invalid configuration value, grid size, or argument combination."""


class SolvabilityError(ShelabError):
    """A linear problem has no admissible solution.

    Raised when the auxiliary source has a nonzero sphere average, or when
    the wall boundary system is degenerate (null space larger than the
    constants), e.g. for the specular reflection law.
    """


class NeutralityError(ShelabError):
    """Total charge is nonzero, so the periodic potential does not exist."""


class StepSizeError(ShelabError):
    """An explicit step was requested beyond its stability bound."""


class PositivityError(ShelabError):
    """A quantity that must stay nonnegative left its tolerance band."""


class InconclusiveError(ShelabError):
    """A statistical study could not order its outcomes beyond noise."""
