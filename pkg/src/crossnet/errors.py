"""Exception hierarchy shared across the package."""


class CrossnetError(Exception):
    """Base class for all package errors."""


class LoadError(CrossnetError):
    """Malformed or invalid input file."""


class ConfigError(CrossnetError):
    """Invalid configuration value or schema."""


class UniverseError(CrossnetError):
    """Window universe cannot support the requested portfolio sort."""


class GraphError(CrossnetError):
    pass


class AnonymizationError(CrossnetError):
    """Prompt material still contains a firm identifier."""


class ParseError(CrossnetError):
    """Classifier response could not be parsed.

    The raw response is kept on ``raw`` for auditing.
    """

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class BudgetExceeded(CrossnetError):
    """The per-run classifier call budget ran out."""


class DegenerateSpread(CrossnetError):
    """Training spread volatility is below the floor; the edge is skipped."""


class WindowError(CrossnetError):
    """Error raised while processing one backtest window."""

    def __init__(self, index: int, cause: Exception):
        super().__init__(f"window {index}: {cause}")
        self.index = index
        self.cause = cause
