"""Exception types raised across the package."""


class MasfsError(Exception):
    """Base class for all package errors."""


class ParseError(MasfsError, ValueError):
    pass


class MissingEntry(ParseError):
    """A layer lacks a cost row for one of the SA kinds."""

    def __init__(self, model, layer, kind):
        super().__init__(f"missing cost entry: model={model!r} layer={layer} sa_kind={kind}")
        self.model = model
        self.layer = layer
        self.kind = kind


class CycleError(ParseError):
    """Layer dependencies of a model do not form a DAG."""


class InconsistentTrace(MasfsError, ValueError):
    pass


class SchedulerContract(MasfsError, RuntimeError):
    """A scheduler returned an assignment that does not cover the ready set."""


class NotConfigured(MasfsError, ValueError):
    pass


class EmptyInput(MasfsError, ValueError):
    pass


class TooLarge(MasfsError, ValueError):
    pass


class DimensionMismatch(MasfsError, ValueError):
    pass


class ConfigError(MasfsError, ValueError):
    """Invalid experiment configuration; ``key`` names the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key
