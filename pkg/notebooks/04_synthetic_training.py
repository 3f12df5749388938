# %% [markdown]
# # Training on a synthetic two-language corpus
#
# Each "language" is band-limited noise with its own amplitude-modulation
# rate. The corpus uses the VoxForge directory layout, so ingestion and
# splitting run exactly as they would on real data.
#
# The full run (200 + 50 clips per class, 8 epochs) takes a few minutes on
# one core. Set `SMALL = True` for a quick look.

# %%
import logging
import tempfile
from pathlib import Path

import numpy as np

from lifas import ModelSpec, SpectrogramConfig, TrainConfig, evaluate, fit, init_model, synth
from lifas.train import schedule_for

logging.basicConfig(level=logging.INFO, format="%(message)s")
SMALL = True

# %%
kwargs = dict(train_per_class=40, val_per_class=20) if SMALL else {}
task = synth.binary_task(**kwargs)
root = Path(tempfile.mkdtemp(prefix="lifas_"))
manifest = synth.generate(task, root)
manifest.counts("train"), manifest.counts("val"), manifest.is_speaker_disjoint()

# %%
cfg = SpectrogramConfig()
tconf = TrainConfig(epochs=8, batch_size=64, seed=0)
schedule = schedule_for(manifest, tconf)
spec = ModelSpec(n_classes=2, labels=tuple(manifest.labels), spectrogram=cfg.to_dict())
model = init_model(spec, seed=0)
model.n_parameters(), schedule.total_steps, schedule.peak_step

# %%
model, history = fit(model, manifest, cfg, tconf, schedule, root=root)
history.epochs

# %% [markdown]
# The learning rate ramps up for 30% of the steps and then anneals.

# %%
lrs = np.array([lr for _, lr, _ in history.steps])
losses = np.array([loss for _, _, loss in history.steps])
lrs.argmax(), lrs.max(), losses[:3], losses[-3:]

# %%
cm, acc, per_class = evaluate(model, manifest, "val", cfg, root=root)
print(cm.to_text())
acc, per_class
