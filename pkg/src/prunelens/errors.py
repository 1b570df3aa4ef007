"""Exception taxonomy shared across the toolkit.

Argument/config/data problems subclass ValueError, file/bundle problems
subclass RuntimeError, so callers can catch either the specific class or
the builtin family.
"""


class ToolkitError(Exception):
    pass


class ArgumentError(ToolkitError, ValueError):
    """A caller-supplied argument violates a precondition."""


class ConfigError(ToolkitError, ValueError):
    """A configuration object is internally inconsistent."""


class DataError(ToolkitError, ValueError):
    """Input data (task file, token ids, labels) is invalid."""


class DegenerateDataError(ToolkitError, ValueError):
    """Statistic undefined on this input (e.g. constant vector)."""


class CorruptFileError(ToolkitError, RuntimeError):
    """A weight bundle failed size or checksum verification."""


class CorruptBundleError(ToolkitError, RuntimeError):
    """A trace bundle failed size or checksum verification."""


class VersionError(ToolkitError, RuntimeError):
    """A file declares a format version this build does not read."""


class CollapseError(ToolkitError, RuntimeError):
    """Iterative pruning re-triggered a collapse at the same depth.

    Carries a report dict describing where the trajectory got stuck.
    """

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report
