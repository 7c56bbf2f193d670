"""Error taxonomy shared across the package.

Every failure mode raised by this library maps onto one of these types so
the command line front end can translate them into stable exit codes.
"""


class VerifyError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(VerifyError):
    """Malformed byte stream: PGM image, model container, or cache file."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DimensionError(VerifyError):
    """Image or vector dimensions violate an operation's contract."""


class ShapeError(VerifyError):
    """Tensor shape mismatch inside the network engine."""


class DataError(VerifyError):
    """Dataset-level violation: single-class pair set, impossible pair count."""


class ContractError(VerifyError):
    """API misuse: stale cache, mismatched model config, misaligned inputs."""


class TrainingDiverged(VerifyError):
    """Loss became non-finite during training."""

    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(
            f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}"
        )
        self.epoch = epoch
        self.batch = batch
