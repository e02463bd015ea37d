"""Exception types shared across the package."""

from __future__ import annotations


class NhtrapError(Exception):
    """Base class for all package errors."""


class DomainError(NhtrapError):
    """A phase-space point sits outside the valid exterior chart."""


class ChartExit(NhtrapError):
    """An integrated orbit left the valid chart.

    Carries the exit time and the partial flow result up to the exit.
    """

    def __init__(self, message: str, exit_time: float, partial=None):
        super().__init__(message)
        self.exit_time = exit_time
        self.partial = partial


class StepFailure(NhtrapError):
    """The adaptive integrator could not complete a step."""


class NoBracket(NhtrapError):
    """Root bracketing failed on the scanned interval."""


class Degenerate(NhtrapError):
    """A critical point failed the curvature test."""


class NotHyperbolic(NhtrapError):
    """Linearization does not have a real +/- exponent pair."""


class InvalidHorizon(NhtrapError):
    """Nonpositive or otherwise unusable certification horizon."""


class DegenerateCritical(NhtrapError):
    """Critical-manifold Hessian is singular beyond tolerance."""


class NewtonDiverged(NhtrapError):
    """Damped Newton iteration failed to converge."""


class GridTooCoarse(NhtrapError):
    """Sampling grid does not resolve the required scale."""


class InvalidNesting(NhtrapError):
    """Inner cutoff region is not contained in the outer one."""


class Unbounded(NhtrapError):
    """No admissible polynomial order bounds the sampled quotients."""


class UnderResolved(NhtrapError):
    """Grid resolution is below the wavelength rule."""


class ConvergenceFailure(NhtrapError):
    """Eigenvalue solve failed to certify; carries the failing shift."""

    def __init__(self, message: str, shift=None):
        super().__init__(message)
        self.shift = shift


class SingularMatrix(NhtrapError):
    """Shifted matrix is singular to working precision."""


class ConfigError(NhtrapError):
    """Base class for configuration problems (CLI exit code 2)."""


class ParseError(ConfigError):
    """Malformed config text; carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ValidationError(ConfigError):
    """A parsed key failed validation; carries the dotted key path."""

    def __init__(self, message: str, key: str):
        super().__init__(f"{key}: {message}")
        self.key = key
