"""Exception hierarchy shared across the package.

Exit-code policy for the CLI: validation-type errors map to exit 1,
numerical/convergence failures to exit 2, a failed verification test
to exit 3, and usage errors to exit 64.
"""


class SupercltError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(SupercltError):
    """Config text is not well-formed (bad JSON, missing/unknown keys)."""


class ValidationError(SupercltError):
    """A structural model invariant is violated; message names the first one."""


class ConfigError(SupercltError):
    """A run configuration (grid, horizon, subspace choice, ...) is inconsistent."""


class DomainError(SupercltError):
    """An argument lies outside the mathematical domain of the operation."""


class NotSupercritical(SupercltError):
    """The principal decay rate is >= 0; limit-theorem machinery does not apply."""


class NumericalError(SupercltError):
    """A numerical routine exceeded its residual tolerance."""


class SimulationDiverged(SupercltError):
    """A simulated mass coordinate exceeded the configured cap."""


class NoConvergence(SupercltError):
    """An iterative limit (e.g. the extinction ladder) failed to saturate."""


class ManifestMismatch(SupercltError):
    """Report inputs were produced from different configs/tools."""
