"""Exception types shared across the package."""


class NsvoptError(Exception):
    """Base class for all package-specific errors."""


class MeshFormatError(NsvoptError):
    """Raised when a mesh file cannot be parsed; carries the line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = "line {}: {}".format(line, message)
        super().__init__(message)
        self.line = line


class MeshTopologyError(NsvoptError):
    """Raised when cell/facet data is topologically invalid."""


class ConfigError(NsvoptError):
    """Raised for invalid or unknown configuration entries."""


class SolverError(NsvoptError):
    """Raised when a linear or nonlinear solve breaks down.

    Attributes
    ----------
    step : int or None
        Time-step index at which the failure occurred, if applicable.
    history : list or None
        Residual history of the failed nonlinear iteration.
    """

    def __init__(self, message, step=None, history=None):
        super().__init__(message)
        self.step = step
        self.history = history
