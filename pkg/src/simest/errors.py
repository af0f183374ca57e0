"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit with 2,
geometry/numerical failures with 3.
"""


class ConfigError(ValueError):
    """A scenario document or override violates the configuration schema."""


class GeometryError(ValueError):
    """Physically invalid geometry, e.g. coincident points in a coefficient."""


class NumericalError(ArithmeticError):
    """A numerical degeneracy the caller cannot recover from, e.g. a zero
    channel-energy denominator."""
