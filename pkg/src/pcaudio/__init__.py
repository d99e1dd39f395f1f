"""Point-cloud representations of audio spectra and Set Transformer classifiers."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    EmptyClipError,
    EmptyCloudError,
    GradientError,
    ParameterError,
    ShapeError,
    TrainingDiverged,
    UnsupportedInput,
)
from . import kernels  # noqa: E402,F401
from .models import ModelSpec, build_model, load_checkpoint, preset, save_checkpoint  # noqa: E402
from .pointcloud import PointCloud, ScaleConfig, batch, frame_to_cloud, spectrogram_to_cloud, subsample  # noqa: E402
from .signal import AudioClip, make_bandpass_noise, resample, stft  # noqa: E402
from .tensor import Tensor, backward, grad_check  # noqa: E402
from .train import TrainConfig, count_macs, count_params, evaluate, train  # noqa: E402

__all__ = [
    "AudioClip", "EmptyClipError", "EmptyCloudError", "GradientError", "ModelSpec", "ParameterError",
    "PointCloud", "ScaleConfig", "ShapeError", "Tensor", "TrainConfig", "TrainingDiverged", "UnsupportedInput",
    "backward", "batch", "build_model", "count_macs", "count_params", "evaluate", "frame_to_cloud",
    "grad_check", "load_checkpoint", "make_bandpass_noise", "preset", "resample", "save_checkpoint",
    "spectrogram_to_cloud", "stft", "subsample", "train",
]
