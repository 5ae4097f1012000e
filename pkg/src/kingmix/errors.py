"""Exception hierarchy shared by all kingmix modules."""


class KingmixError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(KingmixError, ValueError):
    """Invalid user-supplied configuration (maps to CLI exit code 1)."""


class NumericalError(KingmixError, ArithmeticError):
    """A numerical procedure failed (maps to CLI exit code 2)."""


class NonProbability(ConfigError):
    pass


class NoKingmanAtom(ConfigError):
    pass


class BadSupport(ConfigError):
    pass


class DomainError(ConfigError):
    pass


class UnsupportedMeasure(ConfigError):
    pass


class BadGrid(ConfigError):
    pass


class InsufficientN0(ConfigError):
    pass


class QuadratureFailure(NumericalError):
    pass


class ConvergenceFailure(NumericalError):
    pass


class OracleMismatch(NumericalError):
    """Two independent deterministic computations disagree."""
