# %% [markdown]
# # Checking backprop with finite differences
#
# Every layer has a hand-written backward pass. On a tiny network in float64
# the analytic gradients should agree with central differences to about
# 1e-8.

# %%
import numpy as np

from lifas import ModelSpec, init_model
from lifas.nn import model_backward

spec = ModelSpec(stem_channels=3, stage_channels=(3, 4), blocks_per_stage=(1, 1), n_classes=2,
                 input_dims=(1, 8, 8), stem_stride=1, stem_pool=1)
model = init_model(spec, seed=0, dtype=np.float64)
rng = np.random.default_rng(0)
# move away from the zero-initialised head so every path carries gradient
for name, v in model.trainable().items():
    v += 0.3 * rng.standard_normal(v.shape)

x = rng.random((4, 1, 8, 8))
labels = np.array([0, 1, 1, 0])
loss, grads = model_backward(model, x, labels)
loss, len(grads)

# %%
def fd(param, h=1e-5):
    g = np.zeros_like(param)
    for i in np.ndindex(param.shape):
        old = param[i]
        param[i] = old + h
        up = model_backward(model, x, labels)[0]
        param[i] = old - h
        down = model_backward(model, x, labels)[0]
        param[i] = old
        g[i] = (up - down) / (2 * h)
    return g


errors = {}
for name, g in grads.items():
    num = fd(model.params[name])
    errors[name] = np.linalg.norm(g - num) / max(np.linalg.norm(num), 1e-12)
max(errors.values())

# %%
sorted(errors.items(), key=lambda kv: -kv[1])[:5]
