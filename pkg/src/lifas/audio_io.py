"""PCM16 WAV decoding/encoding, linear resampling and fixed-length clip extraction."""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import LifasError


class WavError(LifasError):
    """Base class for WAV container problems.

    ``field`` names the header field or chunk that could not be accepted.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class MalformedHeaderError(WavError):
    pass


class UnsupportedEncodingError(WavError):
    pass


class TruncatedDataError(WavError):
    pass


@dataclass
class AudioClip:
    samples: np.ndarray  # float32 mono, values in [-1, 1]
    sample_rate_hz: int
    language: Optional[str] = None
    speaker_id: Optional[str] = None
    source_path: Optional[str] = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32).reshape(-1)
        if self.samples.size == 0:
            raise ValueError("AudioClip needs at least one sample")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("AudioClip samples must be finite")
        if np.max(np.abs(self.samples)) > 1.0:
            raise ValueError("AudioClip samples must lie in [-1, 1]")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        self.sample_rate_hz = int(self.sample_rate_hz)

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def __len__(self) -> int:
        return self.samples.size


def decode_wav(data: bytes, **metadata) -> AudioClip:
    """Decode a RIFF/WAVE byte string holding 16-bit PCM (mono or stereo).

    Stereo is downmixed by averaging channels. Extra keyword arguments
    (``language``, ``speaker_id``, ``source_path``) are attached to the clip.
    """
    if len(data) < 12:
        raise MalformedHeaderError("RIFF", f"file is {len(data)} bytes, too short for a RIFF header")
    riff, _, wave = struct.unpack_from("<4sI4s", data, 0)
    if riff != b"RIFF":
        raise MalformedHeaderError("RIFF", f"expected b'RIFF' magic, found {riff!r}")
    if wave != b"WAVE":
        raise MalformedHeaderError("WAVE", f"expected b'WAVE' form type, found {wave!r}")

    fmt = None
    pcm = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id, size = struct.unpack_from("<4sI", data, pos)
        body = pos + 8
        if chunk_id == b"fmt ":
            if size < 16 or body + 16 > len(data):
                raise MalformedHeaderError("fmt", f"chunk size {size} is smaller than 16 bytes")
            fmt = struct.unpack_from("<HHIIHH", data, body)
        elif chunk_id == b"data":
            if fmt is None:
                raise MalformedHeaderError("fmt", "data chunk appears before fmt chunk")
            if body + size > len(data):
                raise TruncatedDataError(
                    "data", f"chunk declares {size} bytes but only {len(data) - body} remain"
                )
            pcm = data[body:body + size]
            break
        pos = body + size + (size & 1)

    if fmt is None:
        raise MalformedHeaderError("fmt", "no fmt chunk found")
    if pcm is None:
        raise MalformedHeaderError("data", "no data chunk found")

    audio_format, channels, rate, _, block_align, bits = fmt
    if audio_format != 1:
        raise UnsupportedEncodingError("audio_format", f"only PCM (1) is supported, got {audio_format}")
    if bits != 16:
        raise UnsupportedEncodingError("bits_per_sample", f"only 16-bit PCM is supported, got {bits}")
    if channels not in (1, 2):
        raise UnsupportedEncodingError("num_channels", f"expected 1 or 2 channels, got {channels}")
    if rate <= 0:
        raise MalformedHeaderError("sample_rate", f"sample rate must be positive, got {rate}")
    frame_bytes = 2 * channels
    if len(pcm) % frame_bytes:
        raise TruncatedDataError("data", f"{len(pcm)} bytes is not a whole number of {frame_bytes}-byte frames")
    if not pcm:
        raise TruncatedDataError("data", "data chunk holds no samples")

    ints = np.frombuffer(pcm, dtype="<i2").astype(np.float64)
    if channels == 2:
        ints = ints.reshape(-1, 2).mean(axis=1)
    return AudioClip(samples=(ints / 32768.0).astype(np.float32), sample_rate_hz=rate, **metadata)


def encode_wav(clip: AudioClip) -> bytes:
    """Serialize a clip as mono 16-bit PCM RIFF/WAVE bytes."""
    ints = np.clip(np.rint(clip.samples.astype(np.float64) * 32767.0), -32768, 32767).astype("<i2")
    pcm = ints.tobytes()
    rate = clip.sample_rate_hz
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(pcm), b"WAVE",
        b"fmt ", 16, 1, 1, rate, rate * 2, 2, 16,
        b"data", len(pcm),
    )
    return header + pcm


def read_wav(path, **metadata) -> AudioClip:
    with open(path, "rb") as fh:
        data = fh.read()
    metadata.setdefault("source_path", str(path))
    return decode_wav(data, **metadata)


def resample(clip: AudioClip, target_rate_hz: int) -> AudioClip:
    """Linear-interpolation resampling to ``target_rate_hz``.

    Output length is ``floor(len * target / source)``. Positions past the last
    input sample hold the final value.
    """
    if target_rate_hz <= 0:
        raise ValueError(f"target_rate_hz must be positive, got {target_rate_hz}")
    src = clip.sample_rate_hz
    if target_rate_hz == src:
        return replace(clip, samples=clip.samples.copy())
    n_out = (len(clip) * target_rate_hz) // src
    if n_out == 0:
        raise ValueError("resampled clip would be empty")
    positions = np.arange(n_out, dtype=np.float64) * (src / target_rate_hz)
    out = np.interp(positions, np.arange(len(clip), dtype=np.float64), clip.samples.astype(np.float64))
    return replace(clip, samples=out.astype(np.float32), sample_rate_hz=target_rate_hz)


def extract_clips(clip: AudioClip, clip_len_samples: int, stride_samples: int) -> list[AudioClip]:
    """All full windows of ``clip_len_samples`` taken every ``stride_samples``.

    The tail that does not fill a window is dropped; nothing is padded.
    """
    if clip_len_samples <= 0 or stride_samples <= 0:
        raise ValueError("clip_len_samples and stride_samples must be positive")
    starts = range(0, len(clip) - clip_len_samples + 1, stride_samples)
    return [replace(clip, samples=clip.samples[s:s + clip_len_samples].copy()) for s in starts]
