"""Exception types shared across the package."""


class AqgdError(Exception):
    """Base class for all package errors."""


class NotSchurStable(AqgdError):
    """A matrix expected to have spectral radius < 1 does not."""


class NoConvergence(AqgdError):
    """A fixed-point iteration hit its cap without meeting tolerance."""


class Overflow(AqgdError):
    """A vector handed to a quantizer exceeded the active range."""


class Unstabilizing(AqgdError):
    """A controller yields an unstable closed loop (infinite cost)."""


class Divergence(AqgdError):
    """An optimization run blew past the divergence guard."""


class ConfigError(AqgdError):
    """An experiment configuration is invalid or inconsistent."""
