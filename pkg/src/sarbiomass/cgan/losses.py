"""Adversarial objectives: Vanilla (non-saturating), LSGAN and WGAN-GP."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import functional as F
from ..autodiff import grad_of_output_wrt_input
from ..autodiff.tensor import Tensor


@dataclass
class GanLosses:
    loss_d: Tensor | None = None
    loss_g: Tensor | None = None


def loss_vanilla(d_real=None, d_fake_for_d=None, d_fake_for_g=None) -> GanLosses:
    out = GanLosses()
    if d_real is not None and d_fake_for_d is not None:
        out.loss_d = F.add(F.bce_with_logits(d_real, 1.0), F.bce_with_logits(d_fake_for_d, 0.0))
    if d_fake_for_g is not None:
        out.loss_g = F.bce_with_logits(d_fake_for_g, 1.0)
    return out


def loss_lsgan(d_real=None, d_fake_for_d=None, d_fake_for_g=None, a=0.0, b=1.0, c=1.0) -> GanLosses:
    out = GanLosses()
    if d_real is not None and d_fake_for_d is not None:
        out.loss_d = F.add(
            F.mul(F.mse_loss(d_real, b), 0.5),
            F.mul(F.mse_loss(d_fake_for_d, a), 0.5),
        )
    if d_fake_for_g is not None:
        out.loss_g = F.mul(F.mse_loss(d_fake_for_g, c), 0.5)
    return out


def gradient_penalty(critic, sar: Tensor, real: np.ndarray, fake: np.ndarray, eps: np.ndarray) -> Tensor:
    """Mean over samples of (||grad_agb critic(sar, agb_hat)||_2 - 1)^2.

    ``agb_hat = eps * real + (1 - eps) * fake`` with one ``eps`` per sample.
    The returned tensor is differentiable w.r.t. the critic's parameters.
    """
    e = np.asarray(eps, dtype=np.float64).reshape(-1, *([1] * (real.ndim - 1)))
    interp = Tensor(e * real + (1.0 - e) * fake, requires_grad=True)
    out = critic(sar, interp)
    g = grad_of_output_wrt_input(out, interp)
    # critic output is averaged per sample, so scale the summed gradient accordingly
    per_sample = out.size // out.shape[0]
    g = F.mul(g, 1.0 / per_sample)
    norms = F.sqrt(F.sum(F.mul(g, g), axis=tuple(range(1, g.ndim))))
    return F.mean(F.square(F.sub(norms, 1.0)))


def loss_wgangp(d_real=None, d_fake=None, penalty=None, lambda_gp: float = 10.0, d_fake_for_g=None) -> GanLosses:
    out = GanLosses()
    if d_real is not None and d_fake is not None:
        loss = F.sub(F.mean(d_fake), F.mean(d_real))
        if penalty is not None:
            loss = F.add(loss, F.mul(penalty, lambda_gp))
        out.loss_d = loss
    if d_fake_for_g is not None:
        out.loss_g = F.mul(F.mean(d_fake_for_g), -1.0)
    return out
