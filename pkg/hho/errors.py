"""Exception hierarchy shared by the hho package, the CLI and the MCP tools."""

from __future__ import annotations

import numpy as np


class HHOError(Exception):
    """Base class for every error raised by the library."""


class ConfigError(HHOError):
    """Invalid run configuration or incompatible option combination."""


class MeshFormatError(HHOError):
    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MeshValidationError(HHOError):
    def __init__(self, invariant: str, entity: str, detail: str = "") -> None:
        self.invariant = invariant
        self.entity = entity
        msg = f"{invariant} ({entity})"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class GeometryError(HHOError):
    def __init__(self, message: str, element: int | None = None) -> None:
        self.element = element
        if element is not None:
            message = f"element {element}: {message}"
        super().__init__(message)


class ConditioningError(HHOError):
    """A local matrix that must be invertible is numerically singular."""


class RankMismatchError(HHOError):
    """Subspace extraction found a rank different from the closed-form dimension."""


class SolverError(HHOError):
    """Sparse factorization failed, the solution is not finite or the residual is too large."""


CONFIG_ERRORS = (ConfigError, MeshFormatError, MeshValidationError, FileNotFoundError)
NUMERICAL_ERRORS = (HHOError, np.linalg.LinAlgError)
ERROR_FIELDS = ("invariant", "entity", "line", "element")


def exit_code(e: BaseException) -> int:
    """2 for configuration and mesh errors, 1 for everything else."""
    return 2 if isinstance(e, CONFIG_ERRORS) else 1


def error_payload(e: BaseException) -> dict:
    """Structured error body shared by the CLI and the MCP tools."""
    if isinstance(e, CONFIG_ERRORS):
        category = "config"
    elif isinstance(e, NUMERICAL_ERRORS):
        category = "numerical"
    else:
        category = "internal"
    payload = {"type": e.__class__.__name__, "category": category, "message": str(e)}
    for name in ERROR_FIELDS:
        value = getattr(e, name, None)
        if value is not None:
            payload[name] = value
    return payload
