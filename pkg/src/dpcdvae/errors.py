"""Exception hierarchy shared across the package.

``DataError`` and its subclasses map to CLI exit code 2,
``DivergenceError`` to exit code 3; everything else is a bug or a usage
error (exit code 1).
"""


class GeometryError(ValueError):
    """Lattice parameters or matrix that cannot describe a real cell."""


class ReductionError(RuntimeError):
    """Cell reduction failed to converge within the iteration cap."""


class DegenerateStructureError(ValueError):
    """Two atoms (or periodic images) coincide."""


class ScheduleError(ValueError):
    """Noise-schedule parameters produce an invalid schedule."""


class DivergenceError(RuntimeError):
    """Non-finite values encountered in an iterative numerical process."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class DataError(ValueError):
    """Invalid input data (files, records, configs)."""


class ConfigError(DataError):
    """Malformed or inconsistent run configuration."""


class CheckpointError(DataError):
    """Unreadable, corrupt, or incompatible checkpoint file."""


class UnsupportedSymmetryError(DataError):
    """CIF input carries symmetry operations beyond the identity."""
