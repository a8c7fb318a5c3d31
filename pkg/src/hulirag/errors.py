"""Exception types shared across the engine."""

from __future__ import annotations


class HuliragError(Exception):
    """Base class for all engine errors."""


class CorpusFormatError(HuliragError):
    """A record in a corpus/query/detection file failed validation."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}:"
            if line is not None:
                prefix += f"{line}:"
            prefix += " "
        super().__init__(prefix + message)


class DimensionMismatchError(HuliragError):
    """Two embeddings (or an embedding and its corpus) disagree on dimensionality."""


class DegenerateEmbeddingError(HuliragError):
    """A zero-norm embedding reached an operation that needs a direction."""


class CalibrationDivergedError(HuliragError):
    """Gradient descent produced a non-finite loss."""

    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"calibration diverged at epoch {epoch} (loss={loss!r})")


class RatingParseError(HuliragError):
    """Judge output did not contain a usable rating."""


class ServiceError(HuliragError):
    """A remote judge/generator call failed.

    ``permanent`` marks failures that retrying cannot fix (4xx, malformed
    replies); transient ones are retried by the caller.
    """

    def __init__(self, message: str, permanent: bool = False):
        self.permanent = permanent
        super().__init__(message)


class PipelineStageError(HuliragError):
    """A pipeline stage aborted; carries the stage name for diagnostics."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")
