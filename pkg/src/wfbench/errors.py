"""Exception hierarchy shared across the workbench.

The CLI maps ConfigError to exit code 2 and DataError to exit code 3;
everything else is a bug and escapes with a traceback.
"""


class WfbenchError(Exception):
    """Base class for all workbench errors."""


class ConfigError(WfbenchError):
    """Invalid experiment configuration or CLI arguments."""


class DataError(WfbenchError):
    """Malformed or inconsistent input data (captures, traces, logs)."""
