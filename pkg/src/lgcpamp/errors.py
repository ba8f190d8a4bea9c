"""Exception hierarchy shared across the package.

Recoverable numerical failures (subclasses of RecoverableNumericalError) are
mapped to proposal rejections by the MCMC engines; everything else is fatal.
"""


class LgcpError(Exception):
    pass


class ConfigError(LgcpError):
    """Invalid configuration or arguments."""


class EmptyDomain(ConfigError):
    """No block survives masking."""


class OutOfDomain(LgcpError):
    """A location falls outside the domain, mask or raster extent."""


class DimensionMismatch(LgcpError):
    pass


class Overflow(LgcpError):
    """A Poisson cell mean exceeds the simulator's sanity bound."""


class TooShort(LgcpError):
    """A chain column is too short for the requested diagnostic."""


class IoError(LgcpError):
    """A file is missing, unreadable, or malformed."""


class Diverged(LgcpError):
    """Gradient ascent kept decreasing the objective (step sizes too large)."""


class RecoverableNumericalError(LgcpError):
    """Numerical failure that an MCMC engine treats as a rejected proposal."""


class NotPositiveDefinite(RecoverableNumericalError):
    """Cholesky factorization failed even after the jitter ladder."""


class MomentMismatch(RecoverableNumericalError):
    """Count moments cannot be expressed by a log-normal mixing density."""


class NoConvergence(RecoverableNumericalError):
    """Mode search did not reach the gradient tolerance."""
