"""Layer primitives with explicit backward passes.

Tensors are numpy arrays in NCHW layout. Every op works in the dtype of its
inputs, so the same code runs in float32 for training and float64 for
finite-difference checks.
"""

from __future__ import annotations

import numpy as np


def _check_conv_shapes(x, w):
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and kernel, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"input has {x.shape[1]} channels but kernel expects {w.shape[1]}")


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def to_nhwc(x):
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1))


def to_nchw(x):
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2))


# The conv core works channel-last: im2col rows are (kernel row, kernel col,
# channel) patches, so the matmul output is already NHWC and the backward
# scatter writes contiguous channel vectors.

def im2col_nhwc(x, kh, kw, stride, pad):
    """Returns (cols of shape (N*Ho*Wo, kh*kw*C), Ho, Wo) for an NHWC input."""
    n, h, w, c = x.shape
    ho, wo = conv_output_size(h, kh, stride, pad), conv_output_size(w, kw, stride, pad)
    if ho <= 0 or wo <= 0:
        raise ValueError(f"input {h}x{w} too small for a {kh}x{kw} kernel with pad {pad}")
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    if kh == kw == 1:
        return np.ascontiguousarray(xp[:, ::stride, ::stride][:, :ho, :wo]).reshape(-1, c), ho, wo
    cols = np.empty((n, ho, wo, kh, kw, c), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j] = xp[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]
    return cols.reshape(n * ho * wo, kh * kw * c), ho, wo


def kernel_matrix(w):
    """(K, C, kh, kw) kernel as a (K, kh*kw*C) matrix matching im2col_nhwc rows."""
    return w.transpose(0, 2, 3, 1).reshape(w.shape[0], -1)


def conv2d_nhwc_from_cols(cols, w, n, ho, wo):
    return (cols @ kernel_matrix(w).T).reshape(n, ho, wo, w.shape[0])


def conv2d_nhwc_backward(x_shape, w, grad_out, cols, stride, pad, need_input_grad=True):
    n, h, wd, c = x_shape
    k, _, kh, kw = w.shape
    _, ho, wo, _ = grad_out.shape
    g = grad_out.reshape(-1, k)
    grad_w = (g.T @ cols).reshape(k, kh, kw, c).transpose(0, 3, 1, 2)
    if not need_input_grad:
        return None, grad_w
    dcols = (g @ kernel_matrix(w)).reshape(n, ho, wo, kh, kw, c)
    dxp = np.zeros((n, h + 2 * pad, wd + 2 * pad, c), dtype=grad_out.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += dcols[:, :, :, i, j]
    grad_x = dxp[:, pad:pad + h, pad:pad + wd] if pad else dxp
    return grad_x, grad_w


def conv2d_forward(x, w, stride: int = 1, pad: int = 1):
    """Zero-padded cross-correlation of an NCHW input with a (K, C, kh, kw) kernel."""
    _check_conv_shapes(x, w)
    cols, ho, wo = im2col_nhwc(to_nhwc(x), w.shape[2], w.shape[3], stride, pad)
    return to_nchw(conv2d_nhwc_from_cols(cols, w, x.shape[0], ho, wo))


def conv2d_backward(x, w, grad_out, stride: int = 1, pad: int = 1):
    """Gradients (grad_x, grad_kernel) of conv2d_forward."""
    _check_conv_shapes(x, w)
    n, _, h, wd = x.shape
    k, _, kh, kw = w.shape
    ho, wo = conv_output_size(h, kh, stride, pad), conv_output_size(wd, kw, stride, pad)
    if grad_out.shape != (n, k, ho, wo):
        raise ValueError(f"grad_out has shape {grad_out.shape}, expected {(n, k, ho, wo)}")
    xn = to_nhwc(x)
    cols, _, _ = im2col_nhwc(xn, kh, kw, stride, pad)
    grad_x, grad_w = conv2d_nhwc_backward(xn.shape, w, to_nhwc(grad_out), cols, stride, pad)
    return to_nchw(grad_x), grad_w


def batchnorm2d(x, gain, bias, mode, running_mean, running_var, momentum=0.1, epsilon=1e-5,
                channel_axis=1):
    """Per-channel batch normalisation.

    In ``"train"`` mode the batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place as ``(1 - momentum) * old + momentum * batch``
    (the running variance uses the unbiased estimate). ``"eval"`` mode uses the
    running statistics. Returns ``(out, cache)``; cache is None in eval mode.
    """
    axis = channel_axis % 4
    c = x.shape[axis] if x.ndim == 4 else None
    if c is None or gain.shape != (c,) or bias.shape != (c,):
        raise ValueError(f"batchnorm2d: input {x.shape} does not match gain {gain.shape}")
    shape = [1, 1, 1, 1]
    shape[axis] = c
    reduce_axes = tuple(a for a in range(4) if a != axis)
    if mode == "eval":
        scale = gain / np.sqrt(running_var + epsilon)
        out = (x - running_mean.reshape(shape)) * scale.reshape(shape) + bias.reshape(shape)
        return out.astype(x.dtype, copy=False), None
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")

    m = x.size // c
    mean = x.mean(axis=reduce_axes)
    centered = x - mean.reshape(shape)
    var = np.square(centered).mean(axis=reduce_axes)
    inv_std = 1.0 / np.sqrt(var + epsilon)
    xhat = centered * inv_std.reshape(shape)
    out = xhat * gain.reshape(shape) + bias.reshape(shape)

    unbiased = var * (m / (m - 1)) if m > 1 else var
    running_mean *= 1.0 - momentum
    running_mean += momentum * mean
    running_var *= 1.0 - momentum
    running_var += momentum * unbiased
    return out, (xhat, inv_std, gain, axis)


def batchnorm2d_backward(grad_out, cache):
    """Returns (grad_x, grad_gain, grad_bias)."""
    xhat, inv_std, gain, axis = cache
    shape = [1, 1, 1, 1]
    shape[axis] = gain.size
    reduce_axes = tuple(a for a in range(4) if a != axis)
    m = xhat.size // gain.size
    grad_bias = grad_out.sum(axis=reduce_axes)
    grad_gain = (grad_out * xhat).sum(axis=reduce_axes)
    correction = (grad_bias.reshape(shape) + xhat * grad_gain.reshape(shape)) / m
    grad_x = (inv_std * gain).reshape(shape) * (grad_out - correction)
    return grad_x, grad_gain, grad_bias


def relu(x):
    return np.maximum(x, 0)


def relu_backward(grad_out, x):
    return grad_out * (x > 0)


def avg_pool2d(x, k: int):
    """Non-overlapping k x k mean pooling; trailing rows/columns that do not fill a window are dropped."""
    n, c, h, w = x.shape
    ho, wo = h // k, w // k
    return x[:, :, :ho * k, :wo * k].reshape(n, c, ho, k, wo, k).mean(axis=(3, 5))


def avg_pool2d_backward(grad_out, input_shape, k: int):
    n, c, h, w = input_shape
    ho, wo = grad_out.shape[2], grad_out.shape[3]
    grad_x = np.zeros(input_shape, dtype=grad_out.dtype)
    spread = np.broadcast_to(grad_out[:, :, :, None, :, None] / (k * k), (n, c, ho, k, wo, k))
    grad_x[:, :, :ho * k, :wo * k] = spread.reshape(n, c, ho * k, wo * k)
    return grad_x


def global_avg_pool(x, channel_axis=1):
    spatial = (2, 3) if channel_axis % 4 == 1 else (1, 2)
    return x.mean(axis=spatial)


def global_avg_pool_backward(grad_out, input_shape, channel_axis=1):
    if channel_axis % 4 == 1:
        n, c, h, w = input_shape
        g = grad_out[:, :, None, None]
    else:
        n, h, w, c = input_shape
        g = grad_out[:, None, None, :]
    return np.broadcast_to(g / (h * w), input_shape).copy()


def linear(x, weight, bias):
    """x (N, D), weight (M, D), bias (M,) -> (N, M)."""
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear: input width {x.shape[1]} != weight width {weight.shape[1]}")
    return x @ weight.T + bias


def linear_backward(grad_out, x, weight):
    return grad_out @ weight, grad_out.T @ x, grad_out.sum(axis=0)


def log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(np.asarray(logits, dtype=np.float64)))


def softmax_cross_entropy(logits, label_indices):
    """Mean negative log-likelihood and its gradient with respect to the logits."""
    labels = np.asarray(label_indices, dtype=np.intp)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label index out of range [0, {k})")
    logp = log_softmax(logits)
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n
