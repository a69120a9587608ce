"""Exception types shared across the codec, trainer and CLI."""


class TaskCodecError(Exception):
    """Base class for all library errors."""


class RejectedInputError(TaskCodecError):
    """Input image violates the codec's geometry or value contract."""


class ShapeMismatchError(TaskCodecError):
    """Tensor shapes are inconsistent with the requested operation."""


class ParameterDomainError(TaskCodecError):
    """A model parameter is outside its valid domain (e.g. scale <= 0)."""


class BitstreamError(TaskCodecError):
    """Base class for bitstream encode/decode failures."""


class EncodeError(BitstreamError):
    """A latent could not be entropy coded."""


class DecodeError(BitstreamError):
    """A bitstream is truncated, corrupt or structurally invalid."""


class WrongModelError(DecodeError):
    """Bitstream was produced under different entropy parameters."""


class IngestionError(TaskCodecError):
    """Dataset directory is malformed; carries the offending paths."""

    def __init__(self, message: str, offenders: list[str] | None = None):
        self.offenders = offenders or []
        if self.offenders:
            message = f"{message}: {', '.join(self.offenders)}"
        super().__init__(message)


class TrainingAbortError(TaskCodecError):
    """Training hit a non-finite loss; carries the last good checkpoint."""

    def __init__(self, term: str, epoch: int, checkpoint=None):
        self.term = term
        self.epoch = epoch
        self.checkpoint = checkpoint
        super().__init__(f"non-finite loss in term '{term}' at epoch {epoch}")
