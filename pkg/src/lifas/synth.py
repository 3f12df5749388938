"""Synthetic stand-in corpora: one class per noise band and amplitude-modulation rate.

Clips are written in the VoxForge layout (``<class>/<speaker>-<date>-synth/NNN.wav``)
so that ingestion and splitting run unchanged on them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .audio_io import AudioClip, encode_wav
from .dataset import Manifest, ingest
from .errors import LifasError
from .fileio import atomic_write_bytes


@dataclass(frozen=True)
class SyntheticClass:
    name: str
    band_hz: tuple  # (lo, hi)
    am_rate_hz: float


@dataclass(frozen=True)
class SyntheticTaskSpec:
    classes: tuple
    train_per_class: int = 200
    val_per_class: int = 50
    clip_len_samples: int = 60000
    sample_rate_hz: int = 16000
    clips_per_speaker: int = 10
    am_depth: float = 0.5
    seed: int = 0
    # per-speaker gain range; clip peak = gain
    gain_range: tuple = field(default=(0.3, 0.9))
    # per-clip shift of the class band, uniform in [-band_jitter_hz, +band_jitter_hz]
    band_jitter_hz: float = 0.0
    # broadband white noise added before normalisation; None disables it
    noise_snr_db: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(
            c if isinstance(c, SyntheticClass) else SyntheticClass(c["name"], tuple(c["band_hz"]), c["am_rate_hz"])
            for c in self.classes
        ))
        nyquist = self.sample_rate_hz / 2
        if len(self.classes) < 2:
            raise LifasError("a synthetic task needs at least two classes")
        for c in self.classes:
            lo, hi = c.band_hz
            lo, hi = lo - self.band_jitter_hz, hi + self.band_jitter_hz
            if not 0 < lo < hi < nyquist:
                raise LifasError(f"class {c.name}: band {c.band_hz} must lie inside (0, {nyquist})")
        keys = [(tuple(c.band_hz), c.am_rate_hz) for c in self.classes]
        if len(set(keys)) != len(keys) or len({c.name for c in self.classes}) != len(keys):
            raise LifasError("synthetic classes must have distinct names and band/AM combinations")
        if not 0 <= self.am_depth < 1:
            raise LifasError("am_depth must be in [0, 1)")

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticTaskSpec":
        d = dict(d)
        n = d.pop("n_classes", None)
        spec = cls(**d)
        if n is not None and n != spec.n_classes:
            raise LifasError(f"n_classes={n} but {spec.n_classes} classes are defined")
        return spec

    @classmethod
    def load(cls, path) -> "SyntheticTaskSpec":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except OSError as exc:
            raise LifasError(f"cannot read task spec {path}: {exc.strerror}") from exc
        except (json.JSONDecodeError, TypeError, KeyError) as exc:
            raise LifasError(f"invalid task spec {path}: {exc}") from exc


def binary_task(**kwargs) -> SyntheticTaskSpec:
    """Two well-separated bands with distinct AM rates."""
    classes = (
        SyntheticClass("low", (200.0, 1000.0), 3.0),
        SyntheticClass("high", (2000.0, 4000.0), 7.0),
    )
    kwargs.setdefault("band_jitter_hz", 150.0)
    return SyntheticTaskSpec(classes=classes, **kwargs)


def six_class_task(**kwargs) -> SyntheticTaskSpec:
    """Six 600 Hz bands spaced 300 Hz apart, AM rates 2-7 Hz.

    Neighbouring bands overlap and each clip's band is jittered, so some clips
    can only be told apart by their modulation rate.
    """
    classes = tuple(
        SyntheticClass(f"c{i}", (600.0 + 300 * i, 1200.0 + 300 * i), 2.0 + i) for i in range(6)
    )
    kwargs.setdefault("band_jitter_hz", 150.0)
    return SyntheticTaskSpec(classes=classes, **kwargs)


def band_noise(rng: np.random.Generator, n: int, sample_rate_hz: int, lo: float, hi: float) -> np.ndarray:
    """White noise with every FFT bin outside [lo, hi] Hz zeroed; unit RMS."""
    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate_hz)
    spectrum[(freqs < lo) | (freqs > hi)] = 0.0
    x = np.fft.irfft(spectrum, n)
    return x / np.sqrt(np.mean(x * x))


def clip_band(task: SyntheticTaskSpec, class_idx: int, clip_idx: int) -> tuple[float, float]:
    """The (possibly jittered) band actually used for one clip."""
    lo, hi = task.classes[class_idx].band_hz
    if not task.band_jitter_hz:
        return lo, hi
    rng = np.random.default_rng([task.seed, class_idx, clip_idx, 1])
    shift = rng.uniform(-task.band_jitter_hz, task.band_jitter_hz)
    return lo + shift, hi + shift


def synth_clip(task: SyntheticTaskSpec, class_idx: int, clip_idx: int, gain: float) -> np.ndarray:
    c = task.classes[class_idx]
    rng = np.random.default_rng([task.seed, class_idx, clip_idx])
    n, sr = task.clip_len_samples, task.sample_rate_hz
    lo, hi = clip_band(task, class_idx, clip_idx)
    x = band_noise(rng, n, sr, lo, hi)
    t = np.arange(n) / sr
    x *= 1.0 + task.am_depth * np.sin(2 * np.pi * c.am_rate_hz * t + rng.uniform(0, 2 * np.pi))
    if task.noise_snr_db is not None:
        rms = np.sqrt(np.mean(x * x))
        x += rng.standard_normal(n) * rms * 10.0 ** (-task.noise_snr_db / 20.0)
    return (gain * x / np.max(np.abs(x))).astype(np.float32)


def speaker_index(task: SyntheticTaskSpec, clip_idx: int) -> tuple[int, str]:
    """(speaker number, split) for one clip. Training and validation clips come
    from separate speakers, so the split is speaker-disjoint and exactly sized."""
    cps = task.clips_per_speaker
    if clip_idx < task.train_per_class:
        return clip_idx // cps, "train"
    n_train_speakers = -(-task.train_per_class // cps)
    return n_train_speakers + (clip_idx - task.train_per_class) // cps, "val"


def generate(task: SyntheticTaskSpec, out_dir) -> Manifest:
    """Write the corpus under ``out_dir`` and a split ``manifest.csv`` beside it."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise LifasError(f"cannot create output directory {out}: {exc.strerror}") from exc
    per_class = task.train_per_class + task.val_per_class
    splits = {}
    for ci, c in enumerate(task.classes):
        speaker_rng = np.random.default_rng([task.seed, ci, 1 << 20])
        gains = speaker_rng.uniform(*task.gain_range, size=speaker_index(task, per_class - 1)[0] + 1)
        counters: dict[int, int] = {}
        for k in range(per_class):
            spk, split_name = speaker_index(task, k)
            n = counters[spk] = counters.get(spk, -1) + 1
            session = out / c.name / f"{c.name}{spk:03d}-20240101-synth"
            splits[f"{c.name}{spk:03d}"] = split_name
            clip = AudioClip(synth_clip(task, ci, k, gains[spk]), task.sample_rate_hz)
            try:
                atomic_write_bytes(session / f"{n:03d}.wav", encode_wav(clip))
            except OSError as exc:
                raise LifasError(f"cannot write to {session}: {exc.strerror}") from exc
    found = ingest(out)
    manifest = Manifest([replace(e, split=splits.get(e.speaker_id)) for e in found.entries], found.labels)
    if manifest.counts("train") != {c: task.train_per_class for c in manifest.labels} or \
            manifest.counts("val") != {c: task.val_per_class for c in manifest.labels}:
        raise LifasError(f"{out} holds files from another corpus; use an empty directory")
    manifest.save(out / "manifest.csv")
    return manifest
