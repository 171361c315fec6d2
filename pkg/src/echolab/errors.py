class ConfigError(ValueError):
    """Invalid configuration; maps to CLI exit code 2."""


class DataError(RuntimeError):
    """Missing or malformed data; maps to CLI exit code 3."""
