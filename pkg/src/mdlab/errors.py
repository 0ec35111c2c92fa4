"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericalError -> 3. Everything else is a bug and propagates.
"""


class MdlabError(Exception):
    pass


class ConfigError(MdlabError):
    """Bad usage: invalid flags, unknown config keys, invalid field values."""


class ShapeError(ConfigError):
    """Shape-incompatible tensor operands; message names the offending shapes."""


class DataError(MdlabError):
    """Malformed or missing data files."""


class NumericalError(MdlabError):
    """Non-finite values where finite ones are required (diverged training etc.)."""
