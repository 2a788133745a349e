"""Reverse-mode automatic differentiation on float64 numpy arrays."""

from . import functional
from .nn import (
    Adam,
    AdamState,
    BatchNorm2d,
    Conv2d,
    ConvTranspose2d,
    InstanceNorm2d,
    LayerNorm2d,
    LeakyReLU,
    Linear,
    Module,
    ReLU,
    Sequential,
    Tanh,
    adam_step,
    gradcheck,
    load_checkpoint,
    make_norm,
    parameter,
    save_checkpoint,
)
from .tensor import (
    GraphError,
    NonFiniteError,
    Tensor,
    as_tensor,
    backward,
    grad,
    no_grad,
    set_finite_check,
)


def grad_of_output_wrt_input(d_output: Tensor, input: Tensor) -> Tensor:  # noqa: A002
    """Differentiable gradient of ``d_output`` (summed to a scalar) w.r.t. ``input``.

    Per-sample outputs are summed first; since samples do not interact in a
    critic without batch statistics, each sample's slice of the result is that
    sample's own input gradient.
    """
    out = d_output if d_output.size == 1 else functional.sum(d_output)
    (g,) = grad(out, [input], create_graph=True)
    return g


__all__ = [
    "Adam", "AdamState", "BatchNorm2d", "Conv2d", "ConvTranspose2d", "GraphError",
    "InstanceNorm2d", "LayerNorm2d", "LeakyReLU", "Linear", "Module", "NonFiniteError",
    "ReLU", "Sequential", "Tanh", "Tensor", "adam_step", "as_tensor", "backward",
    "functional", "grad", "grad_of_output_wrt_input", "gradcheck", "load_checkpoint",
    "make_norm", "no_grad", "parameter", "save_checkpoint", "set_finite_check",
]
