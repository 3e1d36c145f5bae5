"""Exception types shared across the toolkit."""


class Face2VoiceError(Exception):
    """Base class for all toolkit errors."""


class InvalidInput(Face2VoiceError, ValueError):
    """An argument violates an operation's preconditions."""


class ManifestError(Face2VoiceError, ValueError):
    """A corpus manifest is missing, unreadable, or malformed.

    Carries the 1-based line number of the offending record when known.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class AlignmentInfeasible(Face2VoiceError):
    """No monotonic alignment exists (fewer frames than phonemes)."""


class TrainingDiverged(Face2VoiceError, RuntimeError):
    """A training loss became non-finite.  Carries the failing step."""

    def __init__(self, message, step):
        super().__init__(f"{message} (step {step})")
        self.step = step


class DegenerateVector(Face2VoiceError, ValueError):
    """A zero-norm vector reached a cosine computation."""


class CheckpointError(Face2VoiceError, ValueError):
    """A checkpoint file is malformed, corrupted, or incompatible."""
