"""Mel spectrogram front end.

Everything here is deterministic numpy: a radix-2 FFT, Hann-windowed STFT
without centre padding, a peak-normalised triangular mel filterbank, dB
conversion with a dynamic-range floor, and bilinear rendering to a fixed-size
image.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from functools import lru_cache

import numpy as np

from .errors import LifasError

DB_EPS = 1e-10


@dataclass(frozen=True)
class SpectrogramConfig:
    sample_rate_hz: int = 16000
    n_fft: int = 1024
    hop_samples: int = 512
    n_mels: int = 40
    fmin_hz: float = 20.0
    fmax_hz: float = 8000.0
    power_exponent: float = 2.0
    top_db: float = 80.0
    image_width_px: int = 432
    image_height_px: int = 288

    def __post_init__(self):
        n = self.n_fft
        if n < 2 or n & (n - 1):
            raise LifasError(f"n_fft must be a power of two, got {n}")
        if not 0 < self.hop_samples <= n:
            raise LifasError(f"hop_samples must be in (0, n_fft], got {self.hop_samples}")
        if not 0 <= self.fmin_hz < self.fmax_hz:
            raise LifasError(f"need 0 <= fmin_hz < fmax_hz, got {self.fmin_hz}, {self.fmax_hz}")
        if self.fmax_hz > self.sample_rate_hz / 2:
            raise LifasError(
                f"fmax_hz={self.fmax_hz} is above the Nyquist frequency {self.sample_rate_hz / 2}"
            )
        if self.n_mels < 2:
            raise LifasError(f"n_mels must be at least 2, got {self.n_mels}")
        if self.image_width_px <= 0 or self.image_height_px <= 0:
            raise LifasError("image dimensions must be positive")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        return 1 + (n_samples - self.n_fft) // self.hop_samples

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SpectrogramConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray  # (n_mels, n_fft // 2 + 1)


@dataclass(frozen=True)
class Spectrogram:
    values: np.ndarray  # (n_mels, n_frames), dB
    config: SpectrogramConfig

    @property
    def shape(self):
        return self.values.shape


def hz_to_mel(f):
    """m = 2595 * log10(1 + f / 700). Accepts scalars or arrays."""
    f_arr = np.asarray(f, dtype=np.float64)
    if np.any(f_arr < 0):
        raise ValueError("frequency must be non-negative")
    m = 2595.0 * np.log10(1.0 + f_arr / 700.0)
    return float(m) if np.ndim(f) == 0 else m


def mel_to_hz(m):
    m_arr = np.asarray(m, dtype=np.float64)
    if np.any(m_arr < 0):
        raise ValueError("mel value must be non-negative")
    f = 700.0 * (10.0 ** (m_arr / 2595.0) - 1.0)
    return float(f) if np.ndim(m) == 0 else f


@lru_cache(maxsize=16)
def _fft_plan(n: int):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    twiddles = np.exp(-2j * np.pi * np.arange(n // 2) / n)
    return rev, twiddles


def fft(signal) -> np.ndarray:
    """Unnormalised forward DFT along the last axis, iterative radix-2 DIT.

    Leading axes are treated as a batch of independent transforms.
    """
    x = np.asarray(signal, dtype=np.complex128)
    n = x.shape[-1]
    if n < 1 or n & (n - 1):
        raise ValueError(f"fft length must be a power of two, got {n}")
    rev, twiddles = _fft_plan(n)
    batch = x.shape[:-1]
    out = x[..., rev].reshape(-1, n)
    scratch = np.empty_like(out)
    size = 2
    while size <= n:
        half = size // 2
        blocks = out.reshape(-1, n // size, size)
        dest = scratch.reshape(-1, n // size, size)
        odd = blocks[..., half:] * twiddles[:: n // size]
        np.add(blocks[..., :half], odd, out=dest[..., :half])
        np.subtract(blocks[..., :half], odd, out=dest[..., half:])
        out, scratch = scratch, out
        size *= 2
    return out.reshape(*batch, n)


def rfft(signal) -> np.ndarray:
    """First n/2 + 1 DFT bins of a real signal, via one complex FFT of length n/2."""
    x = np.asarray(signal, dtype=np.float64)
    n = x.shape[-1]
    if n < 2 or n & (n - 1):
        raise ValueError(f"rfft length must be a power of two >= 2, got {n}")
    m = n // 2
    z = fft(x[..., 0::2] + 1j * x[..., 1::2])
    zc = np.conj(np.concatenate((z[..., :1], z[..., :0:-1]), axis=-1))  # conj(Z[(m - k) % m])
    even = 0.5 * (z + zc)
    odd = -0.5j * (z - zc)
    w = np.exp(-2j * np.pi * np.arange(m) / n)
    out = np.empty(x.shape[:-1] + (m + 1,), dtype=np.complex128)
    out[..., :m] = even + w * odd
    out[..., m] = even[..., 0] - odd[..., 0]
    return out


def hann_window(n: int) -> np.ndarray:
    # symmetric form: w[n] = 0.5 (1 - cos(2 pi n / (N - 1)))
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / (n - 1)))


def stft(samples, config: SpectrogramConfig = SpectrogramConfig()) -> np.ndarray:
    """Complex STFT of shape (n_fft // 2 + 1, n_frames); frames start at 0, hop, 2*hop, ..."""
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    if x.size < config.n_fft:
        raise ValueError(f"need at least n_fft={config.n_fft} samples, got {x.size}")
    frames = np.lib.stride_tricks.sliding_window_view(x, config.n_fft)[:: config.hop_samples]
    return rfft(frames * hann_window(config.n_fft)).T


def mel_breakpoints_hz(config: SpectrogramConfig) -> np.ndarray:
    """The n_mels + 2 filter edges, equally spaced in mel between fmin and fmax."""
    mels = np.linspace(hz_to_mel(config.fmin_hz), hz_to_mel(config.fmax_hz), config.n_mels + 2)
    return mel_to_hz(mels)


def mel_filterbank(config: SpectrogramConfig = SpectrogramConfig()) -> MelFilterbank:
    edges = mel_breakpoints_hz(config) * config.n_fft / config.sample_rate_hz
    bins = np.arange(config.n_bins, dtype=np.float64)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins - lo) / (mid - lo)
    falling = (hi - bins) / (hi - mid)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    peaks = weights.max(axis=1, keepdims=True)
    if np.any(peaks == 0):
        empty = int(np.flatnonzero(peaks[:, 0] == 0)[0])
        raise LifasError(f"mel filter {empty} covers no FFT bin; raise n_fft or lower n_mels")
    return MelFilterbank(weights / peaks)


def power_to_db(S, top_db: float = 80.0) -> np.ndarray:
    """10 log10(S / max S), floored at ``top_db`` below the peak."""
    S = np.asarray(S, dtype=np.float64)
    if np.any(S < 0):
        raise ValueError("power_to_db expects a non-negative matrix")
    S = np.maximum(S, DB_EPS)
    db = 10.0 * np.log10(S / S.max())
    return np.maximum(db, db.max() - top_db)


@lru_cache(maxsize=8)
def _cached_weights(config: SpectrogramConfig) -> np.ndarray:
    w = mel_filterbank(config).weights
    w.setflags(write=False)
    return w


def melspectrogram(samples, config: SpectrogramConfig = SpectrogramConfig()) -> Spectrogram:
    mag = np.abs(stft(samples, config)) ** config.power_exponent
    S = _cached_weights(config) @ mag
    return Spectrogram(power_to_db(S, config.top_db), config)


def bilinear_resize(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Half-pixel-centre bilinear resize with edge clamping."""
    img = np.asarray(img, dtype=np.float64)

    def axis_weights(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0.0, n_in - 1)
        i0 = np.floor(pos).astype(np.intp)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, pos - i0

    r0, r1, fr = axis_weights(img.shape[0], height)
    c0, c1, fc = axis_weights(img.shape[1], width)
    rows = img[r0] * (1.0 - fr)[:, None] + img[r1] * fr[:, None]
    return rows[:, c0] * (1.0 - fc) + rows[:, c1] * fc


def render_image(spec: Spectrogram, config: SpectrogramConfig | None = None) -> np.ndarray:
    """Min-max normalise to [0, 1], put low frequencies on the bottom row, resize.

    A constant spectrogram renders as uniform 0.5.
    """
    config = config or spec.config
    v = np.asarray(spec.values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    norm = np.full_like(v, 0.5) if hi == lo else (v - lo) / (hi - lo)
    img = bilinear_resize(norm[::-1], config.image_height_px, config.image_width_px)
    return np.clip(img, 0.0, 1.0)


def spectrogram_to_csv(spec: Spectrogram) -> str:
    return "".join(",".join(f"{v:.9g}" for v in row) + "\n" for row in spec.values)


def image_to_pgm(img: np.ndarray) -> bytes:
    """8-bit binary PGM (P5), pixel = round(value * 255)."""
    h, w = img.shape
    pix = np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pix.tobytes()
