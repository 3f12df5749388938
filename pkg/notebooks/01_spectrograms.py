# %% [markdown]
# # From samples to a network input image
#
# A 3.75 s clip at 16 kHz becomes a 40-band mel spectrogram and then a
# 288 x 432 image. Every stage below is plain numpy.

# %%
import numpy as np

from lifas import AudioClip, SpectrogramConfig, melspectrogram, render_image
from lifas.dsp import fft, hz_to_mel, mel_filterbank, stft

cfg = SpectrogramConfig()
cfg

# %% [markdown]
# A chirp from 200 Hz to 4 kHz is easy to recognise in the output.

# %%
t = np.arange(60000) / cfg.sample_rate_hz
freq = 200 + (4000 - 200) * t / t[-1]
phase = 2 * np.pi * np.cumsum(freq) / cfg.sample_rate_hz
clip = AudioClip(0.5 * np.sin(phase).astype(np.float32), cfg.sample_rate_hz)
clip.duration_s

# %% [markdown]
# The FFT is an iterative radix-2 transform. A quick sanity check against numpy:

# %%
x = np.random.default_rng(0).standard_normal(1024)
np.abs(fft(x) - np.fft.fft(x)).max()

# %%
X = stft(clip.samples, cfg)
X.shape  # (n_fft / 2 + 1 bins, 116 frames)

# %% [markdown]
# Mel filters are triangles whose edges are evenly spaced on the mel scale,
# so low frequencies get narrow filters and high ones wide filters.

# %%
fb = mel_filterbank(cfg).weights
widths = (fb > 0).sum(axis=1)
widths[:5], widths[-5:], hz_to_mel(8000.0)

# %%
spec = melspectrogram(clip.samples, cfg)
spec.shape, spec.values.min(), spec.values.max()

# %% [markdown]
# The loudest band in each frame climbs as the chirp rises.

# %%
peak_band = spec.values.argmax(axis=0)
peak_band[::10]

# %%
img = render_image(spec)
img.shape, float(img.min()), float(img.max())

# %% [markdown]
# Row 0 of the image is the highest band, so the chirp appears to rise
# from bottom to top. With matplotlib installed:
#
# ```python
# import matplotlib.pyplot as plt
# plt.imshow(img, cmap="magma", aspect="auto")
# ```
