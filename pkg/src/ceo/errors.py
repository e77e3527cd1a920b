"""Exception hierarchy shared by every module of the package."""


class CeoError(Exception):
    """Base class for all package errors."""


class InvalidGraph(CeoError):
    pass


class UnknownNode(CeoError, KeyError):
    pass


class InvalidIntervention(CeoError, ValueError):
    pass


class InvalidData(CeoError, ValueError):
    pass


class InvalidQuery(CeoError, ValueError):
    pass


class FitFailed(CeoError, RuntimeError):
    """Raised when every hyperparameter restart failed.

    ``graph_index`` is filled in by the graph posterior so the caller can tell
    which hypothesis could not be scored.
    """

    def __init__(self, message, graph_index=None):
        super().__init__(message)
        self.graph_index = graph_index


class NumericalFailure(CeoError, ArithmeticError):
    pass


class UnknownBenchmark(CeoError, KeyError):
    pass


class ScoreFailure(CeoError, ArithmeticError):
    """A non-finite acquisition score; ``diagnostics`` holds the intermediate values."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class InternalError(CeoError, RuntimeError):
    pass


class ConfigError(CeoError, ValueError):
    """Configuration problem; ``line`` is the 1-based source line when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
