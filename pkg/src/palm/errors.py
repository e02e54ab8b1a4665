"""Exception family for the package.

DataError covers bad user-supplied content (corpora, vocab files, pair
files, checkpoints); ConfigError covers bad settings. The CLI maps both to
exit code 2 and reserves exit code 1 for usage mistakes.
"""


class PalmError(Exception):
    """Base class for all errors raised by this package."""


class DataError(PalmError):
    """Malformed or inconsistent input data."""


class ConfigError(PalmError):
    """Invalid configuration key or value."""
