"""Exception types raised across the package."""


class HamShadowError(Exception):
    """Base class for all package errors."""


class DomainError(HamShadowError, ValueError):
    """An argument lies outside the domain an operation is defined on."""


class ContractError(HamShadowError, ValueError):
    """An input violates a structural precondition (e.g. non-Hermitian matrix)."""


class ChannelNotInvertibleError(HamShadowError, ValueError):
    """The measure-and-prepare channel is (numerically) singular at this time."""

    def __init__(self, t, dim, min_time):
        self.t = t
        self.dim = dim
        self.min_time = min_time
        super().__init__(
            f"channel is not invertible at t={t!r} for D={dim}: the off-diagonal "
            f"transmission rate vanishes; use t >= {min_time:g}"
        )


class NumericalHealthError(HamShadowError, ArithmeticError):
    """A numerical result is too far from its exact-arithmetic contract."""


class SnapshotParseError(HamShadowError, ValueError):
    """A snapshot stream record could not be parsed."""

    def __init__(self, lineno, message):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}")


class FitError(HamShadowError, ValueError):
    """Least-squares design matrix is rank deficient."""


class ConfigError(HamShadowError, ValueError):
    """An experiment configuration is invalid."""
