"""Small residual CNN: stem conv, stages of basic residual blocks, global pooling, linear head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from . import ops

BN_MOMENTUM = 0.1
BN_EPSILON = 1e-5


@dataclass(frozen=True)
class ModelSpec:
    stem_channels: int = 16
    stage_channels: tuple = (16, 32, 64)
    blocks_per_stage: tuple = (1, 1, 1)
    n_classes: int = 2
    input_dims: tuple = (1, 288, 432)
    # downsampling ahead of the residual stages: the input is average-pooled by
    # stem_pool, then the stem conv runs at stem_stride
    stem_stride: int = 2
    stem_pool: int = 4
    # metadata carried in checkpoints so a saved model is self-describing
    labels: tuple = ()
    spectrogram: Optional[dict] = field(default=None, compare=False)
    clip_len_samples: int = 60000

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        object.__setattr__(self, "blocks_per_stage", tuple(int(b) for b in self.blocks_per_stage))
        object.__setattr__(self, "input_dims", tuple(int(d) for d in self.input_dims))
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.stage_channels) != len(self.blocks_per_stage) or not self.stage_channels:
            raise ValueError("stage_channels and blocks_per_stage must be non-empty and of equal length")
        positive = (self.stem_channels, self.n_classes, self.stem_stride, self.stem_pool,
                    *self.stage_channels, *self.blocks_per_stage, *self.input_dims)
        if min(positive) <= 0:
            raise ValueError("all ModelSpec sizes must be positive")
        if len(self.input_dims) != 3:
            raise ValueError(f"input_dims must be (C, H, W), got {self.input_dims}")
        if self.labels and len(self.labels) != self.n_classes:
            raise ValueError(f"{len(self.labels)} labels given for {self.n_classes} classes")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("stage_channels", "blocks_per_stage", "input_dims", "labels"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def block_names(spec: ModelSpec):
    """Yield (prefix, in_channels, out_channels, stride) for every residual block."""
    in_ch = spec.stem_channels
    for s, (out_ch, n_blocks) in enumerate(zip(spec.stage_channels, spec.blocks_per_stage)):
        for b in range(n_blocks):
            stride = 2 if (s > 0 and b == 0) else 1
            yield f"stages.{s}.{b}", in_ch, out_ch, stride
            in_ch = out_ch


def _needs_projection(in_ch, out_ch, stride):
    return stride != 1 or in_ch != out_ch


def is_trainable(name: str) -> bool:
    return not name.endswith(("running_mean", "running_var"))


class Model:
    def __init__(self, spec: ModelSpec, params: dict[str, np.ndarray]):
        self.spec = spec
        self.params = params

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def trainable(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.params.items() if is_trainable(k)}

    def n_parameters(self, trainable_only: bool = True) -> int:
        items = self.trainable() if trainable_only else self.params
        return int(sum(v.size for v in items.values()))

    def astype(self, dtype) -> "Model":
        return Model(self.spec, {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self) -> "Model":
        return Model(self.spec, {k: v.copy() for k, v in self.params.items()})

    def forward(self, x, mode: str = "eval"):
        return model_forward(self, x, mode)

    def loss_and_grads(self, x, labels):
        return model_backward(self, x, labels)


def init_model(spec: ModelSpec, seed: int = 0, dtype=np.float32) -> Model:
    """He-normal conv kernels, BN gain 1 / bias 0, zero linear head.

    The head starts at zero so the initial loss is exactly ln(n_classes);
    He-scaled head weights put it well above that on pooled ReLU features.
    """
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}

    def conv(name, k, c, size):
        std = np.sqrt(2.0 / (c * size * size))
        params[f"{name}.weight"] = rng.normal(0.0, std, (k, c, size, size))

    def bn(name, c):
        params[f"{name}.gain"] = np.ones(c)
        params[f"{name}.bias"] = np.zeros(c)
        params[f"{name}.running_mean"] = np.zeros(c)
        params[f"{name}.running_var"] = np.ones(c)

    conv("stem.conv", spec.stem_channels, spec.input_dims[0], 3)
    bn("stem.bn", spec.stem_channels)
    for prefix, in_ch, out_ch, stride in block_names(spec):
        conv(f"{prefix}.conv1", out_ch, in_ch, 3)
        bn(f"{prefix}.bn1", out_ch)
        conv(f"{prefix}.conv2", out_ch, out_ch, 3)
        bn(f"{prefix}.bn2", out_ch)
        if _needs_projection(in_ch, out_ch, stride):
            conv(f"{prefix}.shortcut.conv", out_ch, in_ch, 1)
            bn(f"{prefix}.shortcut.bn", out_ch)
    width = spec.stage_channels[-1]
    params["fc.weight"] = np.zeros((spec.n_classes, width))
    params["fc.bias"] = np.zeros(spec.n_classes)
    return Model(spec, {k: v.astype(dtype) for k, v in params.items()})


# --- forward / backward -------------------------------------------------------
#
# Each layer helper returns (out, cache); the matching *_back helper consumes the
# cache and writes parameter gradients into ``grads``.

def _conv_bn(p, name_conv, name_bn, x, stride, pad, mode):
    w = p[f"{name_conv}.weight"]
    cols, ho, wo = ops.im2col_nhwc(x, w.shape[2], w.shape[3], stride, pad)
    h = ops.conv2d_nhwc_from_cols(cols, w, x.shape[0], ho, wo)
    out, bn_cache = ops.batchnorm2d(
        h, p[f"{name_bn}.gain"], p[f"{name_bn}.bias"], mode,
        p[f"{name_bn}.running_mean"], p[f"{name_bn}.running_var"], BN_MOMENTUM, BN_EPSILON,
        channel_axis=-1,
    )
    return out, (name_conv, name_bn, x.shape, cols, stride, pad, bn_cache)


def _conv_bn_back(p, grads, dout, cache, need_input_grad=True):
    name_conv, name_bn, x_shape, cols, stride, pad, bn_cache = cache
    dh, grads[f"{name_bn}.gain"], grads[f"{name_bn}.bias"] = ops.batchnorm2d_backward(dout, bn_cache)
    dx, grads[f"{name_conv}.weight"] = ops.conv2d_nhwc_backward(
        x_shape, p[f"{name_conv}.weight"], dh, cols, stride, pad, need_input_grad
    )
    return dx


def residual_block_forward(p, prefix, x, stride, mode="eval"):
    """relu(bn2(conv2(relu(bn1(conv1(x))))) + shortcut(x)) on an NHWC tensor.

    ``p`` is the parameter map; the shortcut is the identity unless the block
    changes stride or width, in which case it is a 1x1 conv followed by BN.
    Returns (out, cache).
    """
    b1, c1 = _conv_bn(p, f"{prefix}.conv1", f"{prefix}.bn1", x, stride, 1, mode)
    r1 = ops.relu(b1)
    b2, c2 = _conv_bn(p, f"{prefix}.conv2", f"{prefix}.bn2", r1, 1, 1, mode)
    if f"{prefix}.shortcut.conv.weight" in p:
        sc, csc = _conv_bn(p, f"{prefix}.shortcut.conv", f"{prefix}.shortcut.bn", x, stride, 0, mode)
    else:
        if stride != 1 or x.shape[-1] != b2.shape[-1]:
            raise ValueError(f"{prefix}: identity shortcut needs stride 1 and equal channels")
        sc, csc = x, None
    s = b2 + sc
    return ops.relu(s), (c1, b1, c2, csc, s)


def residual_block_backward(p, grads, dout, cache):
    c1, b1, c2, csc, s = cache
    ds = ops.relu_backward(dout, s)
    dr1 = _conv_bn_back(p, grads, ds, c2)
    dx = _conv_bn_back(p, grads, ops.relu_backward(dr1, b1), c1)
    if csc is None:
        dx = dx + ds
    else:
        dx = dx + _conv_bn_back(p, grads, ds, csc)
    return dx


def _check_input(model: Model, x):
    if x.ndim != 4 or tuple(x.shape[1:]) != model.spec.input_dims:
        raise ValueError(f"expected input of shape (N, {', '.join(map(str, model.spec.input_dims))}), got {x.shape}")


def _forward(model: Model, x, mode):
    spec, p = model.spec, model.params
    _check_input(model, x)
    x = np.asarray(x, dtype=model.dtype)
    if spec.stem_pool > 1:
        x = ops.avg_pool2d(x, spec.stem_pool)
    stem_bn, stem_cache = _conv_bn(p, "stem.conv", "stem.bn", ops.to_nhwc(x), spec.stem_stride, 1, mode)
    h = ops.relu(stem_bn)
    block_caches = []
    for prefix, _, _, stride in block_names(spec):
        h, c = residual_block_forward(p, prefix, h, stride, mode)
        block_caches.append((prefix, c))
    pooled = ops.global_avg_pool(h, channel_axis=-1)
    logits = ops.linear(pooled, p["fc.weight"], p["fc.bias"])
    return logits, (stem_cache, stem_bn, block_caches, h.shape, pooled)


def model_forward(model: Model, x, mode: str = "eval"):
    """Logits of shape (N, n_classes) for an NCHW batch. Train mode updates BN running statistics."""
    return _forward(model, x, mode)[0]


def model_backward(model: Model, x, labels):
    """Train-mode forward plus backward: returns (loss, {param name: gradient})."""
    p = model.params
    logits, (stem_cache, stem_bn, block_caches, feat_shape, pooled) = _forward(model, x, "train")
    loss, dlogits = ops.softmax_cross_entropy(logits, labels)
    dlogits = dlogits.astype(model.dtype, copy=False)
    grads: dict[str, np.ndarray] = {}
    dpooled, grads["fc.weight"], grads["fc.bias"] = ops.linear_backward(dlogits, pooled, p["fc.weight"])
    dh = ops.global_avg_pool_backward(dpooled, feat_shape, channel_axis=-1)
    for prefix, c in reversed(block_caches):
        dh = residual_block_backward(p, grads, dh, c)
    _conv_bn_back(p, grads, ops.relu_backward(dh, stem_bn), stem_cache, need_input_grad=False)
    return loss, {k: grads[k] for k in p if is_trainable(k)}
