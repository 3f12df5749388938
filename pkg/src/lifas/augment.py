"""SpecAugment-style frequency and time masking (no time warping)."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .dsp import Spectrogram
from .errors import LifasError

FILL_MODES = ("mean", "min")


@dataclass(frozen=True)
class AugmentPolicy:
    freq_mask_param: int = 0
    time_mask_param: int = 0
    n_freq_masks: int = 0
    n_time_masks: int = 0
    mask_fill: str = "mean"

    def __post_init__(self):
        for name in ("freq_mask_param", "time_mask_param", "n_freq_masks", "n_time_masks"):
            if getattr(self, name) < 0:
                raise LifasError(f"{name} must be >= 0")
        if self.mask_fill not in FILL_MODES:
            raise LifasError(f"mask_fill must be one of {FILL_MODES}, got {self.mask_fill!r}")

    @property
    def is_identity(self) -> bool:
        return (self.freq_mask_param == 0 or self.n_freq_masks == 0) and (
            self.time_mask_param == 0 or self.n_time_masks == 0
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentPolicy":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def fill_value(values: np.ndarray, mode: str) -> float:
    return float(values.mean()) if mode == "mean" else float(values.min())


def draw_masks(rng: np.random.Generator, n_masks: int, max_width: int, size: int):
    """(start, width) pairs: width ~ U{0..max_width}, start ~ U{0..size - width}."""
    masks = []
    for _ in range(n_masks):
        w = int(rng.integers(0, max_width + 1))
        start = int(rng.integers(0, size - w + 1))
        masks.append((start, w))
    return masks


def apply_masks(values: np.ndarray, axis: int, masks, fill: float) -> np.ndarray:
    out = np.array(values, copy=True)
    view = out if axis == 0 else out.T
    for start, w in masks:
        view[start:start + w] = fill
    return out


def _check(spec: Spectrogram, policy: AugmentPolicy):
    n_mels, n_frames = spec.values.shape
    if policy.freq_mask_param > n_mels:
        raise LifasError(f"freq_mask_param={policy.freq_mask_param} exceeds n_mels={n_mels}")
    if policy.time_mask_param > n_frames:
        raise LifasError(f"time_mask_param={policy.time_mask_param} exceeds n_frames={n_frames}")


def freq_mask(spec: Spectrogram, policy: AugmentPolicy, rng_seed: int) -> Spectrogram:
    _check(spec, policy)
    masks = draw_masks(np.random.default_rng(rng_seed), policy.n_freq_masks, policy.freq_mask_param,
                       spec.values.shape[0])
    fill = fill_value(spec.values, policy.mask_fill)
    return Spectrogram(apply_masks(spec.values, 0, masks, fill), spec.config)


def time_mask(spec: Spectrogram, policy: AugmentPolicy, rng_seed: int) -> Spectrogram:
    _check(spec, policy)
    masks = draw_masks(np.random.default_rng(rng_seed), policy.n_time_masks, policy.time_mask_param,
                       spec.values.shape[1])
    fill = fill_value(spec.values, policy.mask_fill)
    return Spectrogram(apply_masks(spec.values, 1, masks, fill), spec.config)


def augment(spec: Spectrogram, policy: AugmentPolicy, rng_seed: int) -> Spectrogram:
    """Frequency masks then time masks, with independent streams derived from one seed.

    Both kinds of mask use the fill value of the unmasked input.
    """
    _check(spec, policy)
    f_seed, t_seed = np.random.SeedSequence(rng_seed).generate_state(2)
    n_mels, n_frames = spec.values.shape
    fill = fill_value(spec.values, policy.mask_fill)
    out = apply_masks(spec.values, 0, draw_masks(np.random.default_rng(int(f_seed)), policy.n_freq_masks,
                                                 policy.freq_mask_param, n_mels), fill)
    out = apply_masks(out, 1, draw_masks(np.random.default_rng(int(t_seed)), policy.n_time_masks,
                                         policy.time_mask_param, n_frames), fill)
    return Spectrogram(out, spec.config)
