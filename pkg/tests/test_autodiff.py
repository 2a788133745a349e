import numpy as np
import pytest

from sarbiomass.autodiff import (
    Adam,
    BatchNorm2d,
    Conv2d,
    ConvTranspose2d,
    GraphError,
    InstanceNorm2d,
    LayerNorm2d,
    Linear,
    Tensor,
    backward,
    grad,
    grad_of_output_wrt_input,
    gradcheck,
    load_checkpoint,
    save_checkpoint,
)
from sarbiomass.autodiff import functional as F
from sarbiomass.autodiff.functional import _conv_adj_np, _conv_np


def brute_conv(x, w, stride, pad):
    b, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((b, o, ho, wo))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, :, i * stride : i * stride + k, j * stride : j * stride + k]
            out[:, :, i, j] = np.einsum("bckl,ockl->bo", patch, w)
    return out


@pytest.mark.parametrize("stride,pad,k", [(1, 0, 3), (1, 1, 3), (2, 1, 4), (1, 3, 7), (2, 0, 1)])
def test_conv_matches_direct_sum(rng, stride, pad, k):
    x = rng.normal(size=(2, 3, 9, 8))
    w = rng.normal(size=(4, 3, k, k))
    np.testing.assert_allclose(_conv_np(x, w, stride, pad), brute_conv(x, w, stride, pad), atol=1e-12)


@pytest.mark.parametrize("stride,pad,k", [(1, 1, 3), (2, 1, 4), (2, 0, 3)])
def test_conv_adjoint_identity(rng, stride, pad, k):
    x = rng.normal(size=(2, 3, 10, 10))
    w = rng.normal(size=(5, 3, k, k))
    y = _conv_np(x, w, stride, pad)
    g = rng.normal(size=y.shape)
    lhs = np.sum(y * g)
    rhs = np.sum(x * _conv_adj_np(g, w, stride, pad, x.shape[2:]))
    assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))


def test_conv_transpose_shape(rng):
    x = Tensor(rng.normal(size=(1, 4, 16, 16)))
    w = Tensor(rng.normal(size=(4, 2, 4, 4)))
    assert F.conv_transpose2d(x, w, stride=2, pad=1).shape == (1, 2, 32, 32)


def _t(rng, *shape, scale=1.0):
    return Tensor(rng.normal(size=shape) * scale, requires_grad=True)


ELEMENTWISE = {
    "exp": F.exp,
    "tanh": F.tanh,
    "sigmoid": F.sigmoid,
    "square": F.square,
    "leaky_relu": F.leaky_relu,
    "relu": F.relu,
}


@pytest.mark.parametrize("name", sorted(ELEMENTWISE))
def test_elementwise_gradcheck(rng, name):
    x = _t(rng, 3, 4)
    # keep kinks of relu-type ops away from the finite-difference stencil
    x.data[np.abs(x.data) < 1e-3] = 0.5
    assert gradcheck(ELEMENTWISE[name], [x]) < 1e-4


def test_log_sqrt_power_gradcheck(rng):
    x = Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True)
    assert gradcheck(F.log, [x]) < 1e-4
    assert gradcheck(F.sqrt, [x]) < 1e-4
    assert gradcheck(lambda t: F.power(t, 1.7), [x]) < 1e-4


def test_broadcast_arithmetic_gradcheck(rng):
    a, b = _t(rng, 2, 3, 4), _t(rng, 3, 1)
    assert gradcheck(lambda u, v: F.mul(F.add(u, v), F.sub(u, v)), [a, b]) < 1e-4
    assert gradcheck(lambda u, v: u / (F.square(v) + 1.0), [a, b]) < 1e-4


def test_concat_slice_reduce_gradcheck(rng):
    a, b = _t(rng, 2, 3, 4), _t(rng, 2, 1, 4)
    f = lambda u, v: F.mean(F.slice_axis(F.concat([u, v], axis=1), 1, 1, 4), axis=(0, 2))  # noqa: E731
    assert gradcheck(f, [a, b]) < 1e-4


def test_linear_gradcheck(rng):
    layer = Linear(5, 3, rng=rng, std=0.5)
    x = _t(rng, 4, 5)
    assert gradcheck(lambda xx, w, bb: F.linear(xx, w, bb), [x, layer.weight, layer.bias]) < 1e-4


@pytest.mark.parametrize("stride,pad,k", [(1, 1, 3), (2, 1, 4), (1, 3, 7)])
def test_conv2d_gradcheck(rng, stride, pad, k):
    x, w, b = _t(rng, 2, 2, 8, 8), _t(rng, 3, 2, k, k, scale=0.3), _t(rng, 3)
    assert gradcheck(lambda xx, ww, bb: F.conv2d(xx, ww, bb, stride, pad), [x, w, b]) < 1e-4


def test_conv_transpose2d_gradcheck(rng):
    x, w, b = _t(rng, 2, 3, 5, 5), _t(rng, 3, 2, 4, 4, scale=0.3), _t(rng, 2)
    assert gradcheck(lambda xx, ww, bb: F.conv_transpose2d(xx, ww, bb, 2, 1), [x, w, b]) < 1e-4


@pytest.mark.parametrize("cls", [BatchNorm2d, InstanceNorm2d, LayerNorm2d])
def test_norm_layers_gradcheck(rng, cls):
    layer = cls(3, rng=rng)
    x = _t(rng, 4, 3, 5, 5)
    # weight the output so the check is not trivially zero for normalised sums
    wgt = rng.normal(size=(4, 3, 5, 5))

    def f(xx, g, b):
        layer.gamma, layer.beta = g, b
        return F.mul(layer(xx), wgt)

    assert gradcheck(f, [x, layer.gamma, layer.beta]) < 1e-4


def test_losses_gradcheck(rng):
    z = _t(rng, 6)
    t = rng.normal(size=6)
    assert gradcheck(lambda u: F.bce_with_logits(u, 1.0), [z]) < 1e-4
    assert gradcheck(lambda u: F.mse_loss(u, t), [z]) < 1e-4
    z.data[np.abs(z.data - t) < 1e-3] += 0.1
    assert gradcheck(lambda u: F.l1_loss(u, t), [z]) < 1e-4


def test_bce_values():
    assert F.bce_with_logits(Tensor([0.0]), 1.0).item() == pytest.approx(np.log(2.0), abs=1e-15)
    assert F.bce_with_logits(Tensor([1e6]), 1.0).item() < 1e-12
    assert np.isfinite(F.bce_with_logits(Tensor([-1e6]), 1.0).item())


def test_second_order_through_conv_is_exact(rng):
    x = Tensor(rng.normal(size=(2, 2, 6, 6)))
    w = _t(rng, 3, 2, 3, 3, scale=0.5)
    w2 = _t(rng, 1, 3, 3, 3, scale=0.5)

    def pen(a, b):
        z = Tensor(x.data, requires_grad=True)
        o = F.conv2d(F.leaky_relu(F.conv2d(z, a, pad=1)), b, stride=2)
        g = grad_of_output_wrt_input(o, z)
        return F.mean(F.square(F.sub(F.sqrt(F.sum(F.mul(g, g), axis=(1, 2, 3))), 1.0)))

    assert gradcheck(pen, [w, w2]) < 1e-6


def test_batch_norm_refuses_double_backward(rng):
    bn = BatchNorm2d(2, rng=rng)
    z = Tensor(rng.normal(size=(3, 2, 4, 4)), requires_grad=True)
    out = F.sum(F.square(bn(z)))
    with pytest.raises(GraphError, match="batch_norm"):
        grad(out, [z], create_graph=True)


def test_grad_restricted_to_requested_inputs(rng):
    a, b = _t(rng, 3), _t(rng, 3)
    (ga,) = grad(F.sum(F.mul(a, b)), [a])
    np.testing.assert_array_equal(ga.data, b.data)
    assert b.grad is None


def test_backward_accumulates_on_leaves(rng):
    a = _t(rng, 4)
    backward(F.sum(F.mul(a, 3.0)))
    backward(F.sum(F.mul(a, 3.0)))
    np.testing.assert_array_equal(a.grad, np.full(4, 6.0))


def test_adam_first_step_is_lr_times_sign(rng):
    p = Tensor(rng.normal(size=5), requires_grad=True)
    start = p.data.copy()
    p.grad = rng.normal(size=5)
    Adam([p], lr=0.01).step()
    # bias-corrected first step: m_hat / sqrt(v_hat) = sign(g), up to eps
    np.testing.assert_allclose(start - p.data, 0.01 * np.sign(p.grad), rtol=1e-6)


def test_checkpoint_roundtrip(tmp_path, rng):
    conv = Conv2d(2, 3, 3, rng=rng)
    bn = BatchNorm2d(3, rng=rng)
    bn.running_mean[:] = [1.0, 2.0, 3.0]
    save_checkpoint(tmp_path / "ck", {"c": conv, "n": bn}, {"epoch": 7})
    conv2, bn2 = Conv2d(2, 3, 3, rng=np.random.default_rng(9)), BatchNorm2d(3, rng=np.random.default_rng(9))
    extra = load_checkpoint(tmp_path / "ck", {"c": conv2, "n": bn2})
    assert extra == {"epoch": 7}
    np.testing.assert_array_equal(conv2.weight.data, conv.weight.data)
    np.testing.assert_array_equal(bn2.running_mean, bn.running_mean)


def test_convtranspose_module_shape(rng):
    layer = ConvTranspose2d(4, 2, 4, 2, 1, rng=rng)
    assert layer(Tensor(rng.normal(size=(1, 4, 8, 8)))).shape == (1, 2, 16, 16)
