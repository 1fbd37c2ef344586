"""Exception hierarchy shared by every module of the package."""


class CempcError(Exception):
    """Base class for all errors raised by the package."""


class InvalidInputError(CempcError, ValueError):
    """Malformed argument: wrong shape, non-finite entries, bad index."""


class DomainError(CempcError, ValueError):
    """Argument outside the mathematical domain (asymmetric, not positive definite)."""


class InstabilityError(CempcError):
    """A matrix expected to be Schur stable is not."""


class NotStabilizableError(CempcError):
    """The Riccati recursion did not converge to a stabilizing solution."""


class UnsupportedDimensionError(CempcError):
    pass


class UnboundedSetError(CempcError):
    pass


class SamplingError(CempcError):
    pass


class InvalidHorizonError(InvalidInputError):
    pass


class SolverError(CempcError):
    """The active-set QP solver tripped its iteration guard."""


class DivergenceError(CempcError):
    """Closed-loop state norm blew past the divergence threshold."""


class RoaMembershipUnknownError(CempcError):
    """Horizon doubling failed to pin down V_inf before the horizon cap."""


class MissingGainError(InvalidInputError):
    pass


class InvalidBudgetError(InvalidInputError):
    pass


class ConfigError(CempcError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class SoundnessViolation(CempcError):
    """A record claims a stability certificate but its simulated cost exceeds the bound."""
