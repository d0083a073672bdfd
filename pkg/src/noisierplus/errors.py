"""Exception hierarchy; each class carries the CLI exit code it maps to."""


class NoisierPlusError(Exception):
    exit_code = 1


class ConfigError(NoisierPlusError, ValueError):
    exit_code = 2


class DomainError(NoisierPlusError, ValueError):
    """Input samples or domain tags outside an operation's contract."""

    exit_code = 3


class DataError(NoisierPlusError):
    exit_code = 3


class CorruptCheckpoint(DataError):
    pass


class DivergenceError(NoisierPlusError, FloatingPointError):
    exit_code = 4


class CapabilityError(NoisierPlusError, RuntimeError):
    exit_code = 5
