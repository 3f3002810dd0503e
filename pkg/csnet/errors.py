"""
Exception types raised by the engine.

Every error derives from :class:`CsnError` and from the closest builtin, so a
caller may catch either ``CsnError`` or e.g. ``ValueError``.
"""


class CsnError(Exception):
    """Base class for all engine errors."""


class DimensionError(CsnError, ValueError):
    """Tensor extents do not fit the operation."""


class ContractError(CsnError, ValueError):
    """A caller broke an operation's precondition."""


class StateError(CsnError, RuntimeError):
    """An object is not in the state the operation needs."""


class LabelError(CsnError, IndexError):
    """A class label lies outside the distribution."""


class ConfigError(CsnError, ValueError):
    """A configuration record is invalid or inconsistent."""


class SamplingError(CsnError, ValueError):
    """A split cannot supply the requested episode shape."""


class IngestionError(CsnError, OSError):
    """Dataset files are missing or cannot be decoded."""

    def __init__(self, message, paths=()):
        self.paths = list(paths)
        if self.paths:
            shown = ", ".join(str(p) for p in self.paths[:10])
            more = len(self.paths) - 10
            if more > 0:
                shown += f" (+{more} more)"
            message = f"{message}: {shown}"
        super().__init__(message)


class IntegrityError(CsnError, ValueError):
    """A dataset violates a structural guarantee."""


class SelectionError(CsnError, ValueError):
    """Not enough checkpoints to select from."""


class StatisticsError(CsnError, ValueError):
    """Too few values for a statistic."""


class FormatError(CsnError, ValueError):
    """A binary container has the wrong magic or version."""
