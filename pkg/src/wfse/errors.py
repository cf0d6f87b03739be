"""Exception taxonomy shared by all wfse modules.

Every error raised on purpose derives from WfseError so the CLI can map
failures to stable exit codes.  Subclasses are grouped by the kind of
failure, not by the module that raises them.
"""


class WfseError(Exception):
    """Base class for all toolkit errors."""


# --- file and container problems -------------------------------------------

class IoFailure(WfseError):
    """OS-level read/write failure."""


class CorruptHeader(WfseError):
    """RIFF/WAVE container is structurally broken."""


class UnsupportedFormat(WfseError):
    """File is readable but not PCM-16 / mono / 16 kHz."""


class VersionMismatch(WfseError):
    """Binary artifact carries an unknown magic/version."""


class ChecksumMismatch(WfseError):
    """Binary artifact is truncated or its payload digest does not match."""


# --- shape and validation problems ------------------------------------------

class LengthMismatch(WfseError):
    """Vectors that must align bin-for-bin have different lengths."""


class ShapeMismatch(WfseError):
    """Tensor does not match the model topology."""


class SampleRateMismatch(WfseError):
    """Utterance sample rate differs from the pipeline's 16 kHz contract."""


class FrameCountMismatch(WfseError):
    """Mask trace and spectrogram disagree on the number of frames."""


class TooFewExamples(WfseError):
    """Statistics requested over fewer than two examples."""


class ConfigError(WfseError):
    """Run configuration failed validation."""


# --- numeric problems --------------------------------------------------------

class ZeroPowerClean(WfseError):
    """Clean utterance has zero mean-square power; SNR mixing undefined."""


class ZeroPowerNoise(WfseError):
    """Noise segment has zero mean-square power; SNR mixing undefined."""


class SingularAutocorrelation(WfseError):
    """Levinson recursion met a reflection coefficient with |k| >= 1."""


class SilentFrame(WfseError):
    """Frame energy too low for LP analysis."""


class StaleCache(WfseError):
    """Backward pass given a cache that does not match the model state."""


class NonFiniteGradient(WfseError):
    """A parameter gradient contains NaN or infinity."""


class NoActiveFrames(WfseError):
    """Voice-activity gate left no frames to average over."""


class ZeroNoiseComponent(WfseError):
    """Filtered noise component has zero energy; SNR undefined."""
