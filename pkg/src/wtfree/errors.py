"""Exception types shared across the package."""


class WtfreeError(Exception):
    """Base class for every error this package raises on purpose."""


class DimensionError(WtfreeError):
    """Operand shapes are inconsistent with an operation's contract."""


class ContractError(WtfreeError):
    """A value-level precondition was violated (empty box, bad label, ...)."""


class TapeError(WtfreeError):
    """A backward tape was consumed more than once."""


class ConfigError(WtfreeError):
    """Invalid or mutually inconsistent configuration."""


class DataFormatError(WtfreeError):
    """A dataset file does not conform to its binary format."""


class CheckpointError(WtfreeError):
    """A checkpoint file is corrupt, truncated, or inconsistent."""


class CheckpointVersionError(CheckpointError):
    """The checkpoint format version is not supported by this build."""


class TrainingDivergedError(WtfreeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(
            f"training diverged: non-finite loss {loss!r} at epoch {epoch}, batch {batch}"
        )
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
