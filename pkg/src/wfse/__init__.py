"""Speech enhancement toolkit with a CELP-style perceptual weighting
filter loss, built from first principles: own STFT, LP analysis, dense
network, and optimizer."""

from .audio import Utterance, load_wav, mix_at_snr, save_wav
from .dsp import StftConfig, istft, stft
from .neural import Model, Topology, load_model, save_model
from .percept import WeightConfig, weighted_loss, weighted_loss_grad
from .pipeline import TrainConfig, enhance, extract_examples, train

__version__ = "0.1.0"

__all__ = [
    "Model",
    "StftConfig",
    "Topology",
    "TrainConfig",
    "Utterance",
    "WeightConfig",
    "enhance",
    "extract_examples",
    "istft",
    "load_model",
    "load_wav",
    "mix_at_snr",
    "save_model",
    "save_wav",
    "stft",
    "train",
    "weighted_loss",
    "weighted_loss_grad",
    "__version__",
]
