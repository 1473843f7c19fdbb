"""Exception hierarchy shared by the library and the CLI."""


class HaadError(Exception):
    """Base class; the CLI maps subclasses to exit codes."""

    exit_code = 1


class ConfigError(HaadError, ValueError):
    exit_code = 2


class ManifestError(HaadError, ValueError):
    exit_code = 2


class ContractError(HaadError, ValueError):
    """An operation's precondition does not hold for the given data."""

    exit_code = 3


class CompatibilityError(HaadError, ValueError):
    """Checkpoint and data/config disagree on shapes (joints, DCT size, ...)."""

    exit_code = 4


class DivergenceError(HaadError, RuntimeError):
    exit_code = 5
