"""Exception types shared across the package.

Validation problems (bad shapes, malformed files, bad arguments) derive from
``ValueError``; numerical failures (non-convergence, degenerate statistics,
divergence) derive from ``ArithmeticError``. The CLI maps the former to exit
code 1 and the latter to exit code 2.
"""


class ValidationError(ValueError):
    pass


class FormatError(ValidationError):
    """Malformed FMAP / PPM payload."""


class NumericalError(ArithmeticError):
    pass


class ConvergenceError(NumericalError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class DegenerateError(NumericalError):
    pass


class DivergenceError(NumericalError):
    pass
