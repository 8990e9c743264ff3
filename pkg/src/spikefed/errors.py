"""Exception hierarchy shared across the package."""


class SpikeFedError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(SpikeFedError):
    """Invalid configuration, shape, or argument combination."""


class FormatError(SpikeFedError):
    """Malformed, truncated, or incompatible on-disk data."""


class NumericError(SpikeFedError):
    """Non-finite values where finite numerics are required."""


class TrainingError(SpikeFedError):
    """Local training diverged; carries the last finite loss seen."""

    def __init__(self, message: str, last_finite_loss: float | None = None):
        super().__init__(message)
        self.last_finite_loss = last_finite_loss


class AggregationError(SpikeFedError):
    """Parameter vectors with mismatched layouts cannot be aggregated."""


class EvaluationError(SpikeFedError):
    """Evaluation set cannot support the requested metric."""


class FederationError(SpikeFedError):
    """A federated round failed; identifies the offending round and device."""

    def __init__(self, message: str, round_index: int, device_id: int):
        super().__init__(message)
        self.round_index = round_index
        self.device_id = device_id
