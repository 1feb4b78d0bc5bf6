"""Exception types shared across the package."""


class VPCoilError(Exception):
    """Base class for package errors."""


class ConfigurationError(VPCoilError):
    """Invalid scenario, file or discretization setting."""


class ScenarioParseError(ConfigurationError):
    def __init__(self, message: str, lineno: int | None = None, path: str | None = None):
        self.message = message
        self.lineno = lineno
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if lineno is not None:
            where += f"{lineno}:"
        super().__init__(f"{where} {message}" if where else message)


class PreconditionError(VPCoilError, ValueError):
    """An operation was called with arguments violating its contract."""


class IntegrationError(VPCoilError):
    """Non-finite state encountered while integrating."""

    def __init__(self, message: str, time: float):
        self.time = time
        super().__init__(f"{message} (t = {time!r})")


class StateError(VPCoilError):
    """Trajectories are missing data or live on mismatched grids."""


class SolverError(VPCoilError):
    """An optimizer failed (for example the line search hit its cap)."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)
