import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lifas.nn import checkpoint
from lifas.nn.model import (
    ModelSpec,
    init_model,
    model_backward,
    model_forward,
    residual_block_backward,
    residual_block_forward,
)
from lifas.nn import ops

TINY = ModelSpec(stem_channels=3, stage_channels=(3, 4), blocks_per_stage=(1, 1), n_classes=2,
                 input_dims=(1, 8, 8), stem_stride=1, stem_pool=1)


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def numeric_grad(f, x, h=1e-5):
    """Central differences of scalar f with respect to every entry of x (modified in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def naive_conv(x, w, stride, pad):
    n, c, h, wd = x.shape
    k, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, k, ho, wo))
    for b in range(n):
        for o in range(k):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ci in range(c):
                        for di in range(kh):
                            for dj in range(kw):
                                acc += xp[b, ci, i * stride + di, j * stride + dj] * w[o, ci, di, dj]
                    out[b, o, i, j] = acc
    return out


# --- convolution -----------------------------------------------------------

def test_conv_counting_example():
    out = ops.conv2d_forward(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), 1, 1)
    np.testing.assert_array_equal(out[0, 0], [[4, 6, 4], [6, 9, 6], [4, 6, 4]])


def test_conv_identity_kernel(rng):
    x = rng.standard_normal((2, 1, 5, 6))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    np.testing.assert_allclose(ops.conv2d_forward(x, w, 1, 1), x, atol=1e-15)


@pytest.mark.parametrize("stride, pad, size", [(1, 1, 3), (2, 1, 3), (1, 0, 3), (2, 0, 1), (3, 2, 3)])
def test_conv_matches_six_loop_oracle(stride, pad, size, rng):
    x = rng.standard_normal((2, 3, 7, 9))
    w = rng.standard_normal((4, 3, size, size))
    got = ops.conv2d_forward(x, w, stride, pad)
    expected = naive_conv(x, w, stride, pad)
    assert got.shape == expected.shape
    assert got.shape[2] == (7 + 2 * pad - size) // stride + 1
    assert rel_err(got, expected) <= 1e-5


def test_conv_shape_mismatch():
    with pytest.raises(ValueError):
        ops.conv2d_forward(np.ones((1, 2, 4, 4)), np.ones((1, 3, 3, 3)))


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_backward_finite_difference(stride, rng):
    x = rng.standard_normal((2, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    g = rng.standard_normal(ops.conv2d_forward(x, w, stride, 1).shape)
    dx, dw = ops.conv2d_backward(x, w, g, stride, 1)
    f = lambda: float(np.sum(ops.conv2d_forward(x, w, stride, 1) * g))
    assert rel_err(dx, numeric_grad(f, x)) <= 1e-6
    assert rel_err(dw, numeric_grad(f, w)) <= 1e-6


def test_conv_backward_zero_and_linear(rng):
    x = rng.standard_normal((1, 2, 4, 4))
    w = rng.standard_normal((2, 2, 3, 3))
    dx, dw = ops.conv2d_backward(x, w, np.zeros((1, 2, 4, 4)))
    assert not dx.any() and not dw.any()
    g = rng.standard_normal((1, 2, 4, 4))
    dx1, dw1 = ops.conv2d_backward(x, w, g)
    dx2, dw2 = ops.conv2d_backward(x, w, 2 * g)
    np.testing.assert_allclose(dx2, 2 * dx1, rtol=1e-12)
    np.testing.assert_allclose(dw2, 2 * dw1, rtol=1e-12)


# --- batch norm ------------------------------------------------------------

def bn_train(x, gain, bias):
    c = x.shape[1]
    return ops.batchnorm2d(x, gain, bias, "train", np.zeros(c), np.ones(c))


def test_batchnorm_normalises(rng):
    x = rng.standard_normal((4, 3, 5, 5)) * 7 + 3
    out, _ = bn_train(x, np.ones(3), np.zeros(3))
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-5)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-5)


def test_batchnorm_constant_channel_gives_bias():
    x = np.full((2, 1, 3, 3), 4.2)
    out, _ = bn_train(x, np.array([2.0]), np.array([0.7]))
    np.testing.assert_allclose(out, 0.7)


def test_batchnorm_running_stats_and_eval(rng):
    x = rng.standard_normal((4, 2, 3, 3)) + np.array([1.0, -2.0])[None, :, None, None]
    rm, rv = np.zeros(2), np.ones(2)
    ops.batchnorm2d(x, np.ones(2), np.zeros(2), "train", rm, rv, momentum=0.1)
    m = x.mean(axis=(0, 2, 3))
    v = x.var(axis=(0, 2, 3), ddof=1)
    np.testing.assert_allclose(rm, 0.1 * m)
    np.testing.assert_allclose(rv, 0.9 + 0.1 * v)
    out, cache = ops.batchnorm2d(x, np.ones(2), np.zeros(2), "eval", rm, rv)
    assert cache is None
    np.testing.assert_allclose(out, (x - rm[None, :, None, None]) / np.sqrt(rv + 1e-5)[None, :, None, None])


def test_batchnorm_channel_mismatch():
    with pytest.raises(ValueError):
        bn_train(np.ones((1, 2, 2, 2)), np.ones(3), np.zeros(3))


def test_batchnorm_backward_finite_difference(rng):
    x = rng.standard_normal((3, 2, 3, 4))
    gain, bias = rng.standard_normal(2), rng.standard_normal(2)
    g = rng.standard_normal(x.shape)
    _, cache = bn_train(x, gain, bias)
    dx, dgain, dbias = ops.batchnorm2d_backward(g, cache)
    f = lambda: float(np.sum(bn_train(x, gain, bias)[0] * g))
    assert rel_err(dx, numeric_grad(f, x)) <= 1e-6
    assert rel_err(dgain, numeric_grad(f, gain)) <= 1e-6
    assert rel_err(dbias, numeric_grad(f, bias)) <= 1e-6


# --- small ops -------------------------------------------------------------

def test_softmax_cross_entropy_examples():
    loss, _ = ops.softmax_cross_entropy(np.zeros((3, 5)), [0, 2, 4])
    assert loss == pytest.approx(math.log(5))
    loss, grad = ops.softmax_cross_entropy(np.array([[100.0, -100.0]]), [0])
    assert 0 <= loss < 1e-12
    assert np.all(np.isfinite(grad))
    with pytest.raises(ValueError):
        ops.softmax_cross_entropy(np.zeros((1, 2)), [2])


def test_softmax_cross_entropy_gradient(rng):
    logits = rng.standard_normal((4, 3))
    labels = np.array([0, 2, 1, 2])
    _, grad = ops.softmax_cross_entropy(logits, labels)
    p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(grad, (p - np.eye(3)[labels]) / 4, atol=1e-15)
    f = lambda: ops.softmax_cross_entropy(logits, labels)[0]
    assert rel_err(grad, numeric_grad(f, logits)) <= 1e-6


def test_linear_pool_relu_gradients(rng):
    x = rng.standard_normal((3, 4))
    w, b = rng.standard_normal((2, 4)), rng.standard_normal(2)
    g = rng.standard_normal((3, 2))
    dx, dw, db = ops.linear_backward(g, x, w)
    f = lambda: float(np.sum(ops.linear(x, w, b) * g))
    for analytic, wrt in ((dx, x), (dw, w), (db, b)):
        assert rel_err(analytic, numeric_grad(f, wrt)) <= 1e-6

    t = rng.standard_normal((2, 3, 4, 5))
    gp = rng.standard_normal((2, 3))
    f = lambda: float(np.sum(ops.global_avg_pool(t) * gp))
    assert rel_err(ops.global_avg_pool_backward(gp, t.shape), numeric_grad(f, t)) <= 1e-6

    ga = rng.standard_normal((2, 3, 2, 2))
    f = lambda: float(np.sum(ops.avg_pool2d(t, 2) * ga))
    assert rel_err(ops.avg_pool2d_backward(ga, t.shape, 2), numeric_grad(f, t)) <= 1e-6

    r = rng.standard_normal((5, 5))
    r[np.abs(r) < 1e-3] = 0.5  # keep away from the kink
    gr = rng.standard_normal((5, 5))
    f = lambda: float(np.sum(ops.relu(r) * gr))
    assert rel_err(ops.relu_backward(gr, r), numeric_grad(f, r)) <= 1e-6


# --- residual block --------------------------------------------------------

def block_params(rng, in_ch, out_ch, projection, zero=False):
    p = {}
    def conv(name, k, c, s):
        p[f"b.{name}.weight"] = np.zeros((k, c, s, s)) if zero else rng.standard_normal((k, c, s, s)) * 0.5
    def bn(name, c):
        p[f"b.{name}.gain"] = np.ones(c) if zero else rng.uniform(0.5, 1.5, c)
        p[f"b.{name}.bias"] = np.zeros(c) if zero else rng.standard_normal(c) * 0.1
        p[f"b.{name}.running_mean"] = np.zeros(c)
        p[f"b.{name}.running_var"] = np.ones(c)
    conv("conv1", out_ch, in_ch, 3); bn("bn1", out_ch)
    conv("conv2", out_ch, out_ch, 3); bn("bn2", out_ch)
    if projection:
        conv("shortcut.conv", out_ch, in_ch, 1); bn("shortcut.bn", out_ch)
    return p


def test_block_zero_weights_is_relu_of_input(rng):
    x = rng.standard_normal((2, 4, 4, 3))  # NHWC
    out, _ = residual_block_forward(block_params(rng, 3, 3, False, zero=True), "b", x, 1, "train")
    np.testing.assert_allclose(out, np.maximum(x, 0), atol=1e-12)


@pytest.mark.parametrize("in_ch, out_ch, stride", [(3, 3, 1), (2, 4, 2), (3, 5, 1)])
def test_block_shapes_and_gradients(in_ch, out_ch, stride, rng):
    projection = stride != 1 or in_ch != out_ch
    p = block_params(rng, in_ch, out_ch, projection)
    x = rng.standard_normal((2, 5, 5, in_ch))
    out, cache = residual_block_forward(p, "b", x, stride, "train")
    assert out.shape == (2, (5 + 2 - 3) // stride + 1, (5 + 2 - 3) // stride + 1, out_ch)
    g = rng.standard_normal(out.shape)
    grads = {}
    dx = residual_block_backward(p, grads, g, cache)
    f = lambda: float(np.sum(residual_block_forward(p, "b", x, stride, "train")[0] * g))
    assert rel_err(dx, numeric_grad(f, x)) <= 1e-6
    for name, analytic in grads.items():
        assert rel_err(analytic, numeric_grad(f, p[name])) <= 1e-6, name


# --- whole model -------------------------------------------------------------

def test_default_spec_size():
    model = init_model(ModelSpec(), seed=0)
    assert 50_000 <= model.n_parameters() <= 150_000
    assert model.dtype == np.float32


def test_model_logits_shape_and_purity(rng):
    model = init_model(TINY, seed=1, dtype=np.float64)
    model.params["fc.weight"][:] = rng.standard_normal(model.params["fc.weight"].shape)
    x = rng.random((5, 1, 8, 8))
    a = model_forward(model, x, "eval")
    assert a.shape == (5, 2)
    assert np.array_equal(a, model_forward(model, x, "eval"))
    perm = rng.permutation(5)
    np.testing.assert_allclose(model_forward(model, x[perm], "eval"), a[perm], atol=1e-12)


def test_model_rejects_wrong_input():
    with pytest.raises(ValueError):
        model_forward(init_model(TINY), np.zeros((1, 1, 8, 9)))


@pytest.mark.parametrize("spec", [
    TINY,
    ModelSpec(stem_channels=2, stage_channels=(2, 3), blocks_per_stage=(2, 1), n_classes=3,
              input_dims=(1, 8, 12), stem_stride=2, stem_pool=2),
])
def test_model_gradients_every_parameter(spec, rng):
    model = init_model(spec, seed=3, dtype=np.float64)
    for name, v in model.params.items():  # leave the init point so every path is active
        if name.endswith(("weight", "bias")) or name.endswith("gain"):
            v += rng.standard_normal(v.shape) * 0.3
    x = rng.random((4, *spec.input_dims))
    labels = rng.integers(0, spec.n_classes, 4)
    _, grads = model_backward(model, x, labels)
    assert set(grads) == set(model.trainable())
    f = lambda: model_backward(model, x, labels)[0]
    for name, analytic in grads.items():
        assert rel_err(analytic, numeric_grad(f, model.params[name])) <= 1e-5, name


@pytest.mark.parametrize("k", [2, 6])
def test_initial_loss_near_ln_k(k, rng):
    spec = ModelSpec(n_classes=k, input_dims=(1, 72, 108))
    model = init_model(spec, seed=0)
    x = rng.random((16, 1, 72, 108)).astype(np.float32)
    loss, _ = model_backward(model, x, rng.integers(0, k, 16))
    assert abs(loss - math.log(k)) <= 0.1 * math.log(k)


def test_init_is_seeded():
    a, b, c = init_model(TINY, 5), init_model(TINY, 5), init_model(TINY, 6)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert not np.array_equal(a.params["stem.conv.weight"], c.params["stem.conv.weight"])


# --- checkpoints -------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, rng):
    spec = ModelSpec(n_classes=3, labels=("de", "en", "fr"), spectrogram={"n_mels": 40})
    model = init_model(spec, seed=2)
    for v in model.params.values():
        v += rng.standard_normal(v.shape).astype(np.float32)
    checkpoint.save(model, tmp_path / "a.ckpt")
    loaded = checkpoint.load(tmp_path / "a.ckpt")
    checkpoint.save(loaded, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert loaded.spec == spec and loaded.spec.spectrogram == {"n_mels": 40}
    for k, v in model.params.items():
        assert np.array_equal(loaded.params[k], v)


def test_checkpoint_layout():
    data = checkpoint.dumps(init_model(TINY))
    assert data.startswith(b"LIFASCKPT")
    assert int.from_bytes(data[9:13], "little") == 1
    n = int.from_bytes(data[13:17], "little")
    assert json.loads(data[17:17 + n])["input_dims"] == [1, 8, 8]


@pytest.mark.parametrize("mutate", [
    lambda d: b"NOTACKPT!" + d[9:],
    lambda d: d[:9] + (2).to_bytes(4, "little") + d[13:],
    lambda d: d[:-3],
    lambda d: d[:40],
])
def test_checkpoint_corruption_detected(mutate):
    data = checkpoint.dumps(init_model(TINY))
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(mutate(data))


def test_checkpoint_missing_file(tmp_path):
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.load(tmp_path / "absent.ckpt")


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 4), st.integers(2, 5), st.integers(0, 2**31))
def test_checkpoint_round_trip_property(stem, classes, seed):
    spec = ModelSpec(stem_channels=stem, stage_channels=(stem, 2), blocks_per_stage=(1, 1), n_classes=classes,
                     input_dims=(1, 8, 8), stem_pool=1)
    model = init_model(spec, seed)
    again = checkpoint.loads(checkpoint.dumps(model))
    assert checkpoint.dumps(again) == checkpoint.dumps(model)
