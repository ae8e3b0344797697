"""Exception hierarchy shared by the solver, diagnostics and CLI layers.

Every exception carries an ``exit_code`` so the command line front end can map
failures onto its documented codes without inspecting messages.
"""

from __future__ import annotations


class ChdError(Exception):
    """Base class for all package errors."""

    exit_code = 1
    kind = "error"


class ConfigError(ChdError, ValueError):
    """Invalid parameters or a violated admissibility condition."""

    exit_code = 2
    kind = "config"

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class PreconditionError(ConfigError):
    """Input to a linear solve is incompatible (e.g. non-zero-mean Neumann rhs)."""

    kind = "precondition"


class SolverError(ChdError, RuntimeError):
    """An iterative solve did not reach its tolerance."""

    exit_code = 3
    kind = "solver"

    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")


class StepError(ChdError, RuntimeError):
    """A time step was rejected, e.g. by the advective CFL check."""

    exit_code = 3
    kind = "step"


class DivergenceError(StepError):
    """Non-finite values appeared in the state."""

    kind = "diverged"

    def __init__(self, message: str, step: int):
        self.step = step
        super().__init__(f"{message} at step {step}")


class ProbeError(ChdError, ValueError):
    """An interface probe point fell outside the computational domain."""

    kind = "probe"


class FitError(ChdError, ValueError):
    """Power-law fit received unusable data."""

    kind = "fit"


class VerificationError(ChdError, RuntimeError):
    """A brute-force constant failed its own verification scan."""

    kind = "verification"
