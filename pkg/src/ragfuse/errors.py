"""Exception taxonomy.

Every error raised by this package derives from :class:`RagfuseError` so
callers (and the CLI exit-code mapping) can distinguish our failures from
genuine bugs. The class names mirror the contract language used throughout
the public API docstrings.
"""


class RagfuseError(Exception):
    """Base class for all package errors."""


# --- numeric / distribution errors -------------------------------------

class AllZeroWeights(RagfuseError):
    """Every weight is zero; no distribution can be formed."""


class NonFiniteValues(RagfuseError):
    """NaN or Inf encountered where finite values are required."""


class LengthMismatch(RagfuseError):
    """Two aligned vectors have different lengths."""


class DimensionMismatch(RagfuseError):
    """Embedding dimension differs from the declared index dimension."""


# --- index / file-format errors ----------------------------------------

class EmptyIndex(RagfuseError):
    """Operation requires at least one index record."""


class BadMagic(RagfuseError):
    """File does not start with the expected magic bytes."""


class VersionMismatch(RagfuseError):
    """File format version is not supported by this build."""


class TruncatedFile(RagfuseError):
    """File ended before the declared payload was read."""


# --- reader errors ------------------------------------------------------

class ReaderError(RagfuseError):
    """Base class for reader-side failures (CLI exit code 4)."""


class RemoteUnavailable(ReaderError):
    """Remote reader endpoint could not be reached."""


class RemoteMalformedResponse(ReaderError):
    """Remote reader replied with an unparseable or misaligned body."""


class OpenQuestionUnsupported(ReaderError):
    """Open-ended questions carry no class vocabulary to score."""


class CorruptCache(ReaderError):
    """Score cache failed an integrity check on load."""


class VocabMismatch(ReaderError):
    """Score cache was produced under a different class vocabulary."""


class CacheMiss(ReaderError):
    """Requested row is absent and no backing reader is configured."""


# --- training errors ----------------------------------------------------

class DivergedLoss(RagfuseError):
    """Training loss became non-finite."""


# --- analysis errors ----------------------------------------------------

class MissingCandidates(RagfuseError):
    """A prediction row carries no per-candidate labels."""


class UnsupportedTask(RagfuseError):
    """Operation is undefined for this task kind."""


class ChoiceOutOfRange(RagfuseError):
    """Reranker chose a candidate index outside the row's range."""


class EmptyEvalSet(RagfuseError):
    """Metrics requested over zero predictions."""


# --- generator errors ---------------------------------------------------

class InfeasibleRate(RagfuseError):
    """Corpus too small to realize the requested inconsistency rate."""


# --- inference errors ---------------------------------------------------

class UnsupportedMode(RagfuseError):
    """Inference mode is incompatible with the configured reader."""


# --- configuration / orchestration errors --------------------------------

class ConfigInvalid(RagfuseError):
    """Run configuration failed validation (CLI exit code 2)."""


class ArtifactMissing(RagfuseError):
    """A required input artifact does not exist (CLI exit code 3)."""
