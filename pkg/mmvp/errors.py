"""Exception types raised across the package."""


class MmvpError(Exception):
    """Base class for every error this package raises on purpose."""


class ShapeError(MmvpError, ValueError):
    """Tensor shapes do not fit the operation."""


class MatrixStateError(MmvpError):
    """A motion matrix is in the wrong (raw / normalized) state."""


# ─── Configuration ──────────────────────────────────────────────────────────


class ConfigError(MmvpError):
    """Invalid configuration."""


class UnknownKeyError(ConfigError):
    def __init__(self, key: str):
        super().__init__(f"unknown config key: {key!r}")
        self.key = key


class ConfigTypeError(ConfigError):
    def __init__(self, key: str, expected: str, value):
        super().__init__(f"config key {key!r} expects {expected}, got {value!r}")
        self.key = key


class ConfigInvariantError(ConfigError):
    """Config values are individually valid but inconsistent."""


# ─── Dataset files ──────────────────────────────────────────────────────────


class DatasetError(MmvpError):
    """Problem reading or writing a dataset file."""


class BadMagicError(DatasetError):
    pass


class TruncatedPayloadError(DatasetError):
    pass


class UnsupportedVersionError(DatasetError):
    pass


class UnsupportedDtypeError(DatasetError):
    pass


# ─── Checkpoints ────────────────────────────────────────────────────────────


class CheckpointError(MmvpError):
    """Problem reading or writing a checkpoint."""


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    def __init__(self, name: str, expected, found):
        super().__init__(
            f"tensor {name!r} has shape {tuple(found)}, config expects {tuple(expected)}"
        )
        self.name = name


# ─── Training ───────────────────────────────────────────────────────────────


class OptimizerError(MmvpError):
    pass


class TrainingError(MmvpError):
    def __init__(self, epoch: int, batch: int, cause: Exception):
        super().__init__(f"epoch {epoch} batch {batch}: {cause}")
        self.epoch = epoch
        self.batch = batch
        self.cause = cause
