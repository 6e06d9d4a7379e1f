"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1 (usage),
DataError -> 2 (bad or missing input data), NumericalError -> 3
(non-finite values or a diverged computation).
"""


class ConfigError(Exception):
    """Invalid configuration: unknown field, bad value, missing preset."""


class DataError(Exception):
    """Input data is missing, malformed beyond recovery, or inconsistent."""


class NumericalError(Exception):
    """A numerical failure: non-finite loss or gradient, diverged step."""
