"""Exception types shared across the pipeline.

The CLI maps these onto its exit-code contract: configuration/usage
problems exit 1, malformed or unreadable data exits 2, numerical
failures exit 3.
"""


class PipelineError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(PipelineError):
    """Invalid configuration: bad profile, inconsistent keys, bad CLI usage."""


class DataError(PipelineError):
    """Malformed input data: bad file headers, truncation, ragged CSV rows."""


class NumericalError(PipelineError):
    """Numerical failure: near-singular matrices, diverging training, undefined metrics."""
