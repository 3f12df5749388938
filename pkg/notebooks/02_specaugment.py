# %% [markdown]
# # Frequency and time masking
#
# Masks replace whole mel rows or whole frames with a fill value. The
# original matrix is never modified and the same seed always gives the same
# masks.

# %%
import numpy as np

from lifas import AugmentPolicy, Spectrogram, SpectrogramConfig
from lifas.augment import augment

rng = np.random.default_rng(1)
spec = Spectrogram(rng.uniform(-80, 0, (40, 116)), SpectrogramConfig())
policy = AugmentPolicy(freq_mask_param=8, time_mask_param=20, n_freq_masks=2, n_time_masks=2)

# %%
out = augment(spec, policy, rng_seed=7)
fill = spec.values.mean()
masked_rows = np.flatnonzero((out.values == fill).all(axis=1))
masked_cols = np.flatnonzero((out.values == fill).all(axis=0))
masked_rows, masked_cols

# %% [markdown]
# Outside the masks nothing changed, bit for bit.

# %%
keep = np.ones_like(out.values, dtype=bool)
keep[masked_rows] = False
keep[:, masked_cols] = False
np.array_equal(out.values[keep], spec.values[keep])

# %% [markdown]
# Mask widths are uniform on 0..F. Over many seeds every width shows up
# about equally often.

# %%
one = AugmentPolicy(freq_mask_param=8, n_freq_masks=1)
widths = [int((augment(spec, one, s).values == fill).all(axis=1).sum()) for s in range(2000)]
np.bincount(widths)
