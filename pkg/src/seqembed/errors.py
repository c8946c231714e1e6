"""Exception hierarchy shared across the package."""


class SeqEmbedError(Exception):
    """Base class for all package errors."""


class ConfigError(SeqEmbedError, ValueError):
    """Invalid architecture or run configuration."""


class PreconditionError(SeqEmbedError, ValueError):
    """An input violates a layer or operation precondition."""


class CodecError(SeqEmbedError, ValueError):
    """Invalid nucleotide symbol or malformed one-hot matrix."""


class SequenceLengthError(SeqEmbedError, ValueError):
    def __init__(self, seq_id: str, length: int, limit: int, message: str | None = None):
        self.seq_id = seq_id
        self.length = length
        self.limit = limit
        super().__init__(message or f"sequence {seq_id!r} has length {length} > max_len {limit}")


class IngestionError(SeqEmbedError, ValueError):
    """Problem reading FASTA or label files. Carries the line number when known."""

    def __init__(self, message: str, path=None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class DatasetError(SeqEmbedError, ValueError):
    """Dataset cannot satisfy a sampling or splitting request."""


class GenerationError(SeqEmbedError, ValueError):
    """Synthetic family generation is infeasible."""


class ProtocolError(SeqEmbedError, ValueError):
    """Evaluation protocol violated (e.g. duplicate class among recall pairs)."""


class CheckpointError(SeqEmbedError):
    """Base class for checkpoint load failures."""


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class ChecksumMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass
