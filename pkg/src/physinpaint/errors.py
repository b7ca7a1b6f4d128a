"""Exception hierarchy shared across the package.

CLI exit codes key off two roots: ``ConfigError`` (exit 2) and
``NumericalError`` (exit 3).
"""


class ConfigError(ValueError):
    """Invalid user input: bad sizes, unknown config keys, inconsistent shapes."""


class GridError(ConfigError):
    pass


class ShapeError(ConfigError):
    pass


class NumericalError(RuntimeError):
    """A computation failed: singular system, nonconvergence, divergence."""


class SingularSystemError(NumericalError):
    pass


class NonConvergenceError(NumericalError):
    def __init__(self, message: str, iterations: int | None = None):
        super().__init__(message)
        self.iterations = iterations


class DivergenceError(NumericalError):
    def __init__(self, message: str, iteration: int | None = None, diagnostics: dict | None = None):
        super().__init__(message)
        self.iteration = iteration
        self.diagnostics = diagnostics or {}
