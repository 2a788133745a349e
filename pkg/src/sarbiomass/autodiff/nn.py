"""Layers, the Adam optimiser, checkpoint I/O and a gradient checker."""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor, backward


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class Module:
    """Minimal container: parameters, buffers, children and a train flag."""

    def __init__(self):
        self.training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in getattr(self, "_buffers", ()):
            yield prefix + name, getattr(self, name)
        for name, child in self.children():
            yield from child.named_buffers(prefix + name + ".")

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict()
        for name, p in self.named_parameters():
            state[name] = p.data
        for name, b in self.named_buffers():
            state[name] = b
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"missing entries in state: {sorted(missing)}")
        for name, p in self.named_parameters():
            if state[name].shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: {state[name].shape} vs {p.data.shape}")
            p.data[...] = state[name]
        for name, b in self.named_buffers():
            b[...] = state[name]


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)


def _init_weight(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


class Conv2d(Module):
    def __init__(self, cin, cout, k, stride=1, pad=0, bias=True, rng=None, std=0.02):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride, self.pad, self.k = stride, pad, k
        self.weight = parameter(_init_weight(rng, (cout, cin, k, k), std))
        self.bias = parameter(np.zeros(cout)) if bias else None

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, self.stride, self.pad)


class ConvTranspose2d(Module):
    def __init__(self, cin, cout, k, stride=1, pad=0, bias=True, rng=None, std=0.02):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride, self.pad, self.k = stride, pad, k
        self.weight = parameter(_init_weight(rng, (cin, cout, k, k), std))
        self.bias = parameter(np.zeros(cout)) if bias else None

    def forward(self, x):
        return F.conv_transpose2d(x, self.weight, self.bias, self.stride, self.pad)


class Linear(Module):
    def __init__(self, fin, fout, bias=True, rng=None, std=0.02):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = parameter(_init_weight(rng, (fout, fin), std))
        self.bias = parameter(np.zeros(fout)) if bias else None

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)


class _Norm(Module):
    def __init__(self, channels: int, eps: float = 1e-5, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.eps = eps
        self.gamma = parameter(rng.normal(1.0, 0.02, size=channels))
        self.beta = parameter(np.zeros(channels))


class BatchNorm2d(_Norm):
    _buffers = ("running_mean", "running_var")

    def __init__(self, channels, eps=1e-5, momentum=0.1, rng=None):
        super().__init__(channels, eps, rng)
        self.momentum = momentum
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def forward(self, x):
        return F.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training=self.training, momentum=self.momentum, eps=self.eps,
        )


class InstanceNorm2d(_Norm):
    def forward(self, x):
        return F.instance_norm(x, self.gamma, self.beta, self.eps)


class LayerNorm2d(_Norm):
    def forward(self, x):
        return F.layer_norm(x, self.gamma, self.beta, self.eps)


def make_norm(kind: str, channels: int, rng=None) -> Module:
    kind = kind.lower()
    if kind == "bn":
        return BatchNorm2d(channels, rng=rng)
    if kind == "in":
        return InstanceNorm2d(channels, rng=rng)
    if kind == "ln":
        return LayerNorm2d(channels, rng=rng)
    raise ValueError(f"unknown norm '{kind}'")


class ReLU(Module):
    def forward(self, x):
        return F.relu(x)


class LeakyReLU(Module):
    def __init__(self, slope: float = 0.2):
        super().__init__()
        self.slope = slope

    def forward(self, x):
        return F.leaky_relu(x, self.slope)


class Tanh(Module):
    def forward(self, x):
        return F.tanh(x)


# ---------------------------------------------------------------------------
# optimiser
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


class Adam:
    def __init__(self, params: list[Tensor], lr=2e-4, beta1=0.5, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.state = AdamState(
            lr=lr, beta1=beta1, beta2=beta2, eps=eps,
            m=[np.zeros_like(p.data) for p in self.params],
            v=[np.zeros_like(p.data) for p in self.params],
        )

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, self.state)


def adam_step(params: list[Tensor], state: AdamState) -> None:
    """Bias-corrected Adam update applied in place; parameters without a
    gradient are treated as having a zero gradient."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, modules: dict[str, Module], extra: dict | None = None) -> None:
    """Write ``<path>.json`` (name -> shape manifest) and ``<path>.bin`` (f64 LE)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = OrderedDict()
    chunks = []
    for prefix, module in modules.items():
        for name, arr in module.state_dict().items():
            key = f"{prefix}.{name}"
            manifest[key] = list(arr.shape)
            chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    header = {"dtype": "f64", "entries": manifest}
    if extra:
        header["extra"] = extra
    path.with_suffix(".json").write_text(json.dumps(header, indent=1))
    path.with_suffix(".bin").write_bytes(b"".join(chunks))


def load_checkpoint(path, modules: dict[str, Module]) -> dict:
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    payload = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f8")
    total = sum(int(np.prod(s)) for s in header["entries"].values())
    if total != payload.size:
        raise ValueError(f"checkpoint payload size mismatch: {payload.size} != {total}")
    arrays = {}
    offset = 0
    for key, shape in header["entries"].items():
        n = int(np.prod(shape))
        arrays[key] = payload[offset : offset + n].reshape(shape).astype(np.float64)
        offset += n
    for prefix, module in modules.items():
        sub = {k[len(prefix) + 1 :]: v for k, v in arrays.items() if k.startswith(prefix + ".")}
        module.load_state_dict(sub)
    return header.get("extra", {})


# ---------------------------------------------------------------------------
# gradient check
# ---------------------------------------------------------------------------

def gradcheck(
    f: Callable[..., Tensor],
    inputs: list[Tensor],
    h: float = 1e-5,
    floor: float = 1e-8,
) -> float:
    """Max element-wise relative error between backprop and central differences.

    ``f`` maps the tensors in ``inputs`` to a tensor; its sum is the scalar
    being differentiated. The relative error uses ``max(|a|, |n|, floor)`` as
    denominator.
    """
    for x in inputs:
        x.requires_grad = True
        x.grad = None
    out = f(*inputs)
    backward(F.sum(out))
    analytic = [x.grad.copy() if x.grad is not None else np.zeros_like(x.data) for x in inputs]
    worst = 0.0
    # numeric side keeps graph recording on: f may take gradients internally
    for x, a in zip(inputs, analytic):
        flat = x.data.reshape(-1)
        num = np.empty_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(*inputs).data.sum())
            flat[i] = orig - h
            fm = float(f(*inputs).data.sum())
            flat[i] = orig
            num[i] = (fp - fm) / (2 * h)
        a = a.reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(num)), floor)
        err = np.abs(a - num) / denom
        worst = max(worst, float(err.max(initial=0.0)))
    return worst
