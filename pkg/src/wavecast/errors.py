"""Exception taxonomy shared across the library and the CLI.

The CLI maps these onto process exit codes (see ``wavecast.cli``); library
code raises them directly so callers can tell a bad configuration from bad
data from a numerical blow-up.
"""


class WavecastError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(WavecastError):
    """Invalid configuration: bad shapes, inconsistent options, unknown names."""


class DataError(WavecastError):
    """Invalid input data: unparseable cells, missing values, degenerate designs."""


class NumericError(WavecastError):
    """Numerical failure: non-finite values where finite ones are required."""


class CheckpointError(ConfigError):
    """A checkpoint file does not match the expected format or configuration."""
