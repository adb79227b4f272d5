class GfrError(Exception):
    """Base class for library errors."""


class DimensionError(GfrError, ValueError):
    pass


class ContractError(GfrError, RuntimeError):
    pass


class EmptyLossError(GfrError, ValueError):
    """No position is eligible for the loss."""


class NonFiniteError(GfrError, FloatingPointError):
    pass


class LengthError(GfrError, ValueError):
    """Sequence longer than the model's context."""


class ConfigError(GfrError, ValueError):
    pass


class StateError(GfrError, RuntimeError):
    pass


class FormatError(GfrError, ValueError):
    """Checkpoint magic or version mismatch."""


class CorruptionError(GfrError, ValueError):
    """Checkpoint is truncated or has trailing bytes."""
