"""Differentiable operations on :class:`Tensor`.

Backward rules are expressed with the same operations so that a
``create_graph=True`` pass produces a differentiable gradient graph. The
three convolution primitives (forward, input-adjoint, weight-gradient) are
closed under differentiation, which is what makes the gradient penalty
exact for convolutional critics.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor, is_grad_enabled, make_result

LOGIT_CLIP = 30.0


def _const(arr) -> Tensor:
    return Tensor._wrap(np.asarray(arr, dtype=np.float64))


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


# ---------------------------------------------------------------------------
# shape plumbing
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    return make_result(
        x.data.reshape(shape), (x,), lambda g: (reshape(g, src),), "reshape"
    )


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    src = x.shape
    if src == shape:
        return x
    return make_result(
        np.broadcast_to(x.data, shape).copy(), (x,), lambda g: (sum_to(g, src),), "broadcast_to"
    )


def sum_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Sum a broadcast result back down to ``shape``."""
    x = as_tensor(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and x.shape[i + lead] != 1
    )
    out = x.data.sum(axis=axes, keepdims=True)
    if lead:
        out = out.reshape(out.shape[lead:])
    src = x.shape
    return make_result(out.reshape(shape), (x,), lambda g: (broadcast_to(g, src),), "sum_to")


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)
    src = x.shape
    kshape = tuple(1 if i in axes else s for i, s in enumerate(src))

    def back(g):
        return (broadcast_to(reshape(g, kshape), src),)

    return make_result(np.asarray(out), (x,), back, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return mul(sum(x, axis=axes, keepdims=keepdims), 1.0 / n)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(
            slice_axis(g, axis, int(bounds[i]), int(bounds[i + 1])) for i in range(len(tensors))
        )

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, back, "concat")


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    src = x.shape
    return make_result(
        x.data[tuple(idx)].copy(), (x,), lambda g: (embed_axis(g, axis, start, src),), "slice"
    )


def embed_axis(x: Tensor, axis: int, start: int, shape: Sequence[int]) -> Tensor:
    """Place ``x`` into a zero tensor of ``shape`` at ``start`` along ``axis``."""
    x = as_tensor(x)
    out = np.zeros(shape)
    idx = [slice(None)] * len(shape)
    stop = start + x.shape[axis]
    idx[axis] = slice(start, stop)
    out[tuple(idx)] = x.data
    return make_result(out, (x,), lambda g: (slice_axis(g, axis, start, stop),), "embed")


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_result(
        np.ascontiguousarray(x.data.transpose(axes)), (x,), lambda g: (transpose(g, inv),), "transpose"
    )


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_result(
        a.data + b.data, (a, b), lambda g: (sum_to(g, sa), sum_to(g, sb)), "add"
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_result(
        a.data - b.data, (a, b), lambda g: (sum_to(g, sa), sum_to(mul(g, -1.0), sb)), "sub"
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def back(g):
        ga = sum_to(mul(g, b), sa) if a.requires_grad else None
        gb = sum_to(mul(g, a), sb) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), back, "mul")


def reciprocal(x) -> Tensor:
    x = as_tensor(x)
    return power(x, -1.0)


def power(x, exponent: float) -> Tensor:
    x = as_tensor(x)
    e = float(exponent)
    out = np.power(x.data, e)

    def back(g):
        if e == 0.0:
            return (mul(g, 0.0),)
        return (mul(g, mul(power(x, e - 1.0), e)),)

    return make_result(out, (x,), back, "power")


def sqrt(x) -> Tensor:
    return power(x, 0.5)


def square(x) -> Tensor:
    x = as_tensor(x)
    return mul(x, x)


def exp(x) -> Tensor:
    x = as_tensor(x)
    return make_result(np.exp(x.data), (x,), lambda g: (mul(g, exp(x)),), "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    return make_result(np.log(x.data), (x,), lambda g: (mul(g, reciprocal(x)),), "log")


def abs(x) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    sign = _const(np.sign(x.data))
    return make_result(np.abs(x.data), (x,), lambda g: (mul(g, sign),), "abs")


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = _const((x.data > 0).astype(np.float64))
    return make_result(x.data * mask.data, (x,), lambda g: (mul(g, mask),), "relu")


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    factor = _const(np.where(x.data > 0, 1.0, slope))
    return make_result(x.data * factor.data, (x,), lambda g: (mul(g, factor),), "leaky_relu")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)

    def back(g):
        t = tanh(x)
        return (mul(g, sub(1.0, mul(t, t))),)

    return make_result(y, (x,), back, "tanh")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def back(g):
        s = sigmoid(x)
        return (mul(g, mul(s, sub(1.0, s))),)

    return make_result(y, (x,), back, "sigmoid")


# ---------------------------------------------------------------------------
# dense
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-D operands")

    def back(g):
        ga = matmul(g, transpose(b)) if a.requires_grad else None
        gb = matmul(transpose(a), g) if b.requires_grad else None
        return ga, gb

    return make_result(a.data @ b.data, (a, b), back, "matmul")


def linear(x, w, bias=None) -> Tensor:
    """``x @ w.T + bias`` for ``x`` of shape (B, in) and ``w`` of shape (out, in)."""
    out = matmul(x, transpose(w))
    if bias is not None:
        out = add(out, reshape(bias, (1, -1)))
    return out


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _im2col(x: np.ndarray, k: int, stride: int, pad: int) -> tuple[np.ndarray, int, int]:
    """Columns of shape (C*k*k, B*Ho*Wo), channel-major to keep copies contiguous."""
    B, C, H, W = x.shape
    Ho, Wo = _out_size(H, k, stride, pad), _out_size(W, k, stride, pad)
    if k == 1 and pad == 0:
        xs = x[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
        return xs.transpose(1, 0, 2, 3).reshape(C, B * Ho * Wo), Ho, Wo
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((C, k, k, B, Ho, Wo))
    he = stride * (Ho - 1) + 1
    we = stride * (Wo - 1) + 1
    xt = xp.transpose(1, 0, 2, 3)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xt[:, :, i : i + he : stride, j : j + we : stride]
    return cols.reshape(C * k * k, B * Ho * Wo), Ho, Wo


def _conv_np(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    B, C, H, W = x.shape
    O, Cw, k, k2 = w.shape
    if Cw != C or k != k2:
        raise ValueError(f"conv2d shape mismatch: input {x.shape}, weight {w.shape}")
    if H + 2 * pad < k or W + 2 * pad < k:
        raise ValueError(f"conv2d input {H}x{W} (pad {pad}) smaller than kernel {k}")
    cols, Ho, Wo = _im2col(x, k, stride, pad)
    out = w.reshape(O, -1) @ cols
    return out.reshape(O, B, Ho, Wo).transpose(1, 0, 2, 3).copy()


def _conv_adj_np(g: np.ndarray, w: np.ndarray, stride: int, pad: int, hw: tuple[int, int]) -> np.ndarray:
    B, O, Ho, Wo = g.shape
    _, C, k, _ = w.shape
    H, W = hw
    gm = g.transpose(1, 0, 2, 3).reshape(O, -1)
    cols = (w.reshape(O, -1).T @ gm).reshape(C, k, k, B, Ho, Wo)
    Hp = max(H + 2 * pad, (Ho - 1) * stride + k)
    Wp = max(W + 2 * pad, (Wo - 1) * stride + k)
    xp = np.zeros((C, B, Hp, Wp))
    hs = stride * (Ho - 1) + 1
    ws = stride * (Wo - 1) + 1
    for i in range(k):
        for j in range(k):
            xp[:, :, i : i + hs : stride, j : j + ws : stride] += cols[:, i, j]
    return xp[:, :, pad : pad + H, pad : pad + W].transpose(1, 0, 2, 3).copy()


def _wgrad_np(x: np.ndarray, g: np.ndarray, stride: int, pad: int, k: int) -> np.ndarray:
    C = x.shape[1]
    O = g.shape[1]
    cols, Ho, Wo = _im2col(x, k, stride, pad)
    gm = g.transpose(1, 0, 2, 3).reshape(O, -1)
    return (gm @ cols.T).reshape(O, C, k, k)


def _conv(x: Tensor, w: Tensor, stride: int, pad: int) -> Tensor:
    hw = x.shape[2:]
    k = w.shape[2]

    def back(g):
        gx = _conv_adj(g, w, stride, pad, hw) if x.requires_grad else None
        gw = _wgrad(x, g, stride, pad, k) if w.requires_grad else None
        return gx, gw

    return make_result(_conv_np(x.data, w.data, stride, pad), (x, w), back, "conv2d")


def _conv_adj(g: Tensor, w: Tensor, stride: int, pad: int, hw: tuple[int, int]) -> Tensor:
    k = w.shape[2]

    def back(h):
        gg = _conv(h, w, stride, pad) if g.requires_grad else None
        gw = _wgrad(h, g, stride, pad, k) if w.requires_grad else None
        return gg, gw

    return make_result(
        _conv_adj_np(g.data, w.data, stride, pad, tuple(hw)), (g, w), back, "conv_transpose2d"
    )


def _wgrad(x: Tensor, g: Tensor, stride: int, pad: int, k: int) -> Tensor:
    hw = x.shape[2:]

    def back(hw_grad):
        gx = _conv_adj(g, hw_grad, stride, pad, hw) if x.requires_grad else None
        gg = _conv(x, hw_grad, stride, pad) if g.requires_grad else None
        return gx, gg

    return make_result(_wgrad_np(x.data, g.data, stride, pad, k), (x, g), back, "conv2d_weight_grad")


def conv2d(x, w, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of ``x`` (B, Cin, H, W) with ``w`` (Cout, Cin, k, k)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError("conv2d expects 4-D input and weight")
    out = _conv(x, w, stride, pad)
    if bias is not None:
        out = add(out, reshape(bias, (1, -1, 1, 1)))
    return out


def conv_transpose2d(x, w, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    """Transposed convolution; ``w`` has shape (Cin, Cout, k, k).

    Output spatial size is ``(H - 1) * stride - 2 * pad + k``.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[0]:
        raise ValueError(f"conv_transpose2d shape mismatch: input {x.shape}, weight {w.shape}")
    k = w.shape[2]
    H, W = x.shape[2:]
    hw = ((H - 1) * stride - 2 * pad + k, (W - 1) * stride - 2 * pad + k)
    out = _conv_adj(x, w, stride, pad, hw)
    if bias is not None:
        out = add(out, reshape(bias, (1, -1, 1, 1)))
    return out


# ---------------------------------------------------------------------------
# normalisation
# ---------------------------------------------------------------------------

_NORM_STATS_SECOND_ORDER = True


def set_norm_second_order(exact: bool) -> None:
    """Choose how normalisation statistics behave under double backprop.

    ``True`` differentiates through the mean and variance; ``False`` holds
    them constant in the second-order pass (stop-gradient approximation).
    First-order gradients are exact either way.
    """
    global _NORM_STATS_SECOND_ORDER
    _NORM_STATS_SECOND_ORDER = bool(exact)


def _standardize(x: Tensor, axes: tuple[int, ...], eps: float, op: str, double_ok: bool) -> Tensor:
    """(x - mean) / sqrt(var + eps) over ``axes``."""
    mu = x.data.mean(axis=axes, keepdims=True)
    var = x.data.var(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xh = (x.data - mu) * inv
    xh_c, inv_c = _const(xh), _const(inv)

    def back(g):
        if is_grad_enabled() and _NORM_STATS_SECOND_ORDER and x.requires_grad:
            centred = sub(x, mean(x, axis=axes, keepdims=True))
            inv_t = power(add(mean(mul(centred, centred), axis=axes, keepdims=True), eps), -0.5)
            xh_t = mul(centred, inv_t)
        else:
            xh_t, inv_t = xh_c, inv_c
        gm = mean(g, axis=axes, keepdims=True)
        gxm = mean(mul(g, xh_t), axis=axes, keepdims=True)
        return (mul(sub(sub(g, gm), mul(xh_t, gxm)), inv_t),)

    return make_result(xh, (x,), back, op, double_ok=double_ok)


def _affine(xh: Tensor, gamma, beta) -> Tensor:
    out = xh
    if gamma is not None:
        out = mul(out, reshape(gamma, (1, -1, 1, 1)))
    if beta is not None:
        out = add(out, reshape(beta, (1, -1, 1, 1)))
    return out


def layer_norm(x, gamma=None, beta=None, eps: float = 1e-5) -> Tensor:
    """Normalise each sample over (C, H, W); per-channel affine."""
    x = as_tensor(x)
    return _affine(_standardize(x, (1, 2, 3), eps, "layer_norm", True), gamma, beta)


def instance_norm(x, gamma=None, beta=None, eps: float = 1e-5) -> Tensor:
    """Normalise each sample and channel over (H, W)."""
    x = as_tensor(x)
    return _affine(_standardize(x, (2, 3), eps, "instance_norm", True), gamma, beta)


def batch_norm(
    x,
    gamma=None,
    beta=None,
    running_mean: np.ndarray | None = None,
    running_var: np.ndarray | None = None,
    training: bool = True,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Normalise each channel over (B, H, W).

    In training mode the batch statistics are used and, when given, the
    running buffers are updated in place (unbiased variance). In eval mode
    the running buffers are used and the op is affine in ``x``.
    """
    x = as_tensor(x)
    if training:
        if running_mean is not None:
            n = x.shape[0] * x.shape[2] * x.shape[3]
            bm = x.data.mean(axis=(0, 2, 3))
            bv = x.data.var(axis=(0, 2, 3)) * (n / max(n - 1, 1))
            running_mean *= 1.0 - momentum
            running_mean += momentum * bm
            running_var *= 1.0 - momentum
            running_var += momentum * bv
        xh = _standardize(x, (0, 2, 3), eps, "batch_norm", False)
    else:
        if running_mean is None or running_var is None:
            raise ValueError("eval-mode batch_norm needs running statistics")
        rm = _const(running_mean.reshape(1, -1, 1, 1))
        rinv = _const(1.0 / np.sqrt(running_var.reshape(1, -1, 1, 1) + eps))
        xh = mul(sub(x, rm), rinv)
    return _affine(xh, gamma, beta)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def bce_with_logits(logits, target: float) -> Tensor:
    """Mean binary cross-entropy of ``logits`` against a constant label.

    Logits are clipped at +-30 before evaluation.
    """
    z = as_tensor(logits)
    zc = np.clip(z.data, -LOGIT_CLIP, LOGIT_CLIP)
    t = float(target)
    losses = np.maximum(zc, 0.0) - zc * t + np.log1p(np.exp(-np.abs(zc)))
    n = z.size
    inside = (np.abs(z.data) <= LOGIT_CLIP).astype(np.float64)
    sig = 0.5 * (1.0 + np.tanh(0.5 * zc))
    dz = _const((sig - t) * inside / n)

    def back(g):
        return (mul(g, dz),)

    return make_result(np.asarray(losses.mean()), (z,), back, "bce_with_logits", double_ok=False)


def l1_loss(a, b) -> Tensor:
    return mean(abs(sub(a, b)))


def mse_loss(a, b) -> Tensor:
    d = sub(a, b)
    return mean(mul(d, d))
