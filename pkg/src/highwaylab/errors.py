"""Exception types shared across the package."""

from __future__ import annotations


class HighwaylabError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(HighwaylabError):
    """Invalid experiment configuration (unknown key, bad value, broken invariant)."""


class EnvStateError(HighwaylabError):
    """Environment was used before reset()."""


class EpisodeFinishedError(HighwaylabError):
    """step() was called on an episode that already terminated or truncated."""


class TrainingDivergenceError(HighwaylabError):
    """Non-finite values showed up in losses, gradients, or network outputs."""


class CheckpointError(HighwaylabError):
    """Base class for checkpoint read/write failures."""


class CheckpointFormatError(CheckpointError):
    """File is not a recognizable checkpoint."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an incompatible format version."""


class CheckpointTruncatedError(CheckpointError):
    """File ends before its declared payload does."""


class CheckpointChecksumError(CheckpointError):
    """Stored CRC32 does not match the file contents."""


class CheckpointMismatchError(CheckpointError):
    """Checkpoint contents do not match the requested agent or network."""
