"""
Exception hierarchy for the IEE sparse-training engine
"""


class IeeError(Exception):
    """Base class for every error raised by this package"""

    exit_code = 1


class ConfigError(IeeError):
    """Invalid or inconsistent experiment configuration"""

    exit_code = 2


class DataFormatError(IeeError):
    """Dataset file does not match its declared binary format"""

    exit_code = 3


class RunDivergedError(IeeError):
    """Training loss stayed non-finite past the divergence threshold"""

    exit_code = 4


class ShapeError(IeeError):
    """Tensor shapes are incompatible for the requested operation"""


class StateError(IeeError):
    """Operation invoked in the wrong lifecycle state (e.g. backward before forward)"""


class InvalidPlanError(IeeError):
    """Sparsity plan cannot be realized on the model"""


class InfeasibleBudgetError(IeeError):
    """Resource budget cannot be met under the selection constraints"""


class LatencyTableError(IeeError):
    """Latency lookup table is missing, incomplete, or malformed"""


class UnsupportedScopeError(IeeError):
    """Criterion or strategy does not support the requested scope"""


class PhaseMismatchError(IeeError):
    """Mask snapshots from different phases were compared"""


class UnknownStageError(IeeError):
    """FLOPs ledger was charged for a stage it has no rate for"""
