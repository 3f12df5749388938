"""Spoken language identification from mel spectrograms with a small residual CNN."""

from .audio_io import AudioClip, decode_wav, encode_wav, extract_clips, read_wav, resample
from .augment import AugmentPolicy, freq_mask, time_mask
from .dataset import Batch, Manifest, ManifestEntry, batches, ingest, split
from .dsp import (
    MelFilterbank,
    Spectrogram,
    SpectrogramConfig,
    fft,
    hz_to_mel,
    mel_filterbank,
    mel_to_hz,
    melspectrogram,
    power_to_db,
    render_image,
    stft,
)
from . import synth
from .errors import LifasError
from .evaluation import ConfusionMatrix, accuracy, evaluate, per_class_accuracy, predict
from .nn import Model, ModelSpec, init_model, load_checkpoint, model_backward, model_forward, save_checkpoint
from .train import OneCycleSchedule, TrainConfig, TrainHistory, fit, lr_at, sgd_step

__version__ = "0.1.0"
