"""Exception types shared across the package."""


class FedCostError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(FedCostError):
    """Invalid configuration value or combination."""


class DimensionError(FedCostError):
    """Vector/matrix dimensions do not line up."""


class NumericError(FedCostError):
    """A computation produced a non-finite value."""


class WeightNormError(FedCostError):
    """Averaging weights are negative or do not sum to one."""


class EmptyRoundError(FedCostError):
    """A round was asked to aggregate zero client updates."""


class MissingHistoryError(FedCostError):
    """A client has no recorded cost from the previous round."""


class InvalidCostError(FedCostError):
    """A reported cost is non-positive or non-finite."""


class BarrierViolationError(FedCostError):
    """The synchronous round barrier was not satisfied."""


class ProtocolError(FedCostError):
    """Malformed or unexpected wire message (bad magic, version, or type)."""


class FrameError(FedCostError):
    """A wire frame was truncated or internally inconsistent."""


class OversizeError(FedCostError):
    """A frame declared a payload larger than the configured maximum."""
