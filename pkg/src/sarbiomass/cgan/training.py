"""Adversarial training loop and patch generation."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..autodiff import functional as F
from ..autodiff.nn import Adam, load_checkpoint, save_checkpoint
from ..autodiff.tensor import Tensor, backward, no_grad
from .losses import gradient_penalty, loss_lsgan, loss_vanilla, loss_wgangp
from .networks import Discriminator, Generator

log = logging.getLogger(__name__)

OBJECTIVES = ("vanilla", "lsgan", "wgangp")


class ConfigError(ValueError):
    pass


class TrainingError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    objective: str = "lsgan"
    epochs: int = 200
    lr: float = 2e-4
    batch_size: int = 3
    lambda_gp: float = 10.0
    lsgan_a: float = 0.0
    lsgan_b: float = 1.0
    lsgan_c: float = 1.0
    l1_weight: float = 0.0
    n_critic: int = 1
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lambda_gp < 0:
            raise ConfigError("lambda_gp must be >= 0")
        if self.n_critic < 1:
            raise ConfigError("n_critic must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")


def check_compatible(cfg: TrainConfig, disc: Discriminator) -> None:
    if cfg.objective == "wgangp" and disc.spec.norm.lower() == "bn":
        raise ConfigError(
            "wgangp needs a per-sample critic: batch normalisation in the discriminator is not allowed"
        )


@dataclass
class TrainResult:
    log_rows: list[tuple[int, int, float, float]] = field(default_factory=list)
    d_steps: int = 0
    g_steps: int = 0
    checkpoints: list[str] = field(default_factory=list)


def _d_loss(cfg: TrainConfig, disc, sar: Tensor, real: np.ndarray, fake: np.ndarray, rng) -> Tensor:
    d_real = disc(sar, Tensor._wrap(real))
    d_fake = disc(sar, Tensor._wrap(fake))
    if cfg.objective == "vanilla":
        return loss_vanilla(d_real, d_fake).loss_d
    if cfg.objective == "lsgan":
        return loss_lsgan(d_real, d_fake, a=cfg.lsgan_a, b=cfg.lsgan_b).loss_d
    eps = rng.uniform(0.0, 1.0, size=real.shape[0])
    penalty = gradient_penalty(disc, sar, real, fake, eps) if cfg.lambda_gp > 0 else None
    return loss_wgangp(d_real, d_fake, penalty, cfg.lambda_gp).loss_d


def _g_loss(cfg: TrainConfig, disc, sar: Tensor, fake: Tensor, real: np.ndarray) -> Tensor:
    d_fake = disc(sar, fake)
    if cfg.objective == "vanilla":
        loss = loss_vanilla(d_fake_for_g=d_fake).loss_g
    elif cfg.objective == "lsgan":
        loss = loss_lsgan(d_fake_for_g=d_fake, c=cfg.lsgan_c).loss_g
    else:
        loss = loss_wgangp(d_fake_for_g=d_fake).loss_g
    if cfg.l1_weight:
        loss = F.add(loss, F.mul(F.l1_loss(fake, real), cfg.l1_weight))
    return loss


def train(
    gen: Generator,
    disc: Discriminator,
    sar: np.ndarray,
    agb: np.ndarray,
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
) -> TrainResult:
    """Alternate ``n_critic`` discriminator updates with one generator update.

    ``sar`` is (N, 3, H, W) and ``agb`` is (N, 1, H, W), already scaled.
    Batches are reshuffled every epoch from a generator seeded by ``cfg.seed``.
    """
    if len(sar) == 0:
        raise ValueError("empty training dataset")
    if sar.shape[0] != agb.shape[0] or sar.shape[2:] != agb.shape[2:]:
        raise ValueError(f"unpaired dataset: sar {sar.shape} vs agb {agb.shape}")
    check_compatible(cfg, disc)
    rng = np.random.default_rng(cfg.seed)
    opt_g = Adam(gen.parameters(), cfg.lr, cfg.beta1, cfg.beta2)
    opt_d = Adam(disc.parameters(), cfg.lr, cfg.beta1, cfg.beta2)
    gen.train()
    disc.train()
    result = TrainResult()
    out_dir = Path(out_dir) if out_dir is not None else None
    n = len(sar)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = np.sort(order[start : start + cfg.batch_size])
            x = Tensor._wrap(sar[idx])
            real = agb[idx]
            fake = gen(x)
            fake_np = fake.data
            loss_d_val = math.nan
            for _ in range(cfg.n_critic):
                opt_d.zero_grad()
                loss_d = _d_loss(cfg, disc, x, real, fake_np, rng)
                loss_d_val = loss_d.item()
                if not math.isfinite(loss_d_val):
                    raise TrainingError(f"non-finite discriminator loss at epoch {epoch}, step {step}")
                backward(loss_d)
                opt_d.step()
                result.d_steps += 1
            opt_g.zero_grad()
            loss_g = _g_loss(cfg, disc, x, fake, real)
            loss_g_val = loss_g.item()
            if not math.isfinite(loss_g_val):
                raise TrainingError(f"non-finite generator loss at epoch {epoch}, step {step}")
            backward(loss_g)
            opt_g.step()
            disc.zero_grad()
            result.g_steps += 1
            result.log_rows.append((epoch, step, loss_d_val, loss_g_val))
            step += 1
        if out_dir is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            path = out_dir / f"checkpoint_epoch{epoch:04d}"
            save_checkpoint(path, {"generator": gen, "discriminator": disc}, {"epoch": epoch})
            result.checkpoints.append(str(path))
        log.debug("epoch %d done, loss_d=%.5f loss_g=%.5f", epoch, loss_d_val, loss_g_val)
    if out_dir is not None:
        path = out_dir / "checkpoint_final"
        save_checkpoint(
            path, {"generator": gen, "discriminator": disc},
            {"epoch": cfg.epochs, "train_config": asdict(cfg)},
        )
        result.checkpoints.append(str(path))
        write_loss_log(out_dir / "loss_log.csv", result.log_rows)
    return result


def write_loss_log(path, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "step", "loss_d", "loss_g"])
        for epoch, step, ld, lg in rows:
            w.writerow([epoch, step, repr(ld), repr(lg)])


def generate(gen: Generator, sar_patches: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Eval-mode forward pass. Accepts (3, H, W) or (N, 3, H, W)."""
    single = sar_patches.ndim == 3
    batch = sar_patches[None] if single else sar_patches
    was_training = gen.training
    gen.eval()
    outs = []
    with no_grad():
        for start in range(0, len(batch), batch_size):
            outs.append(gen(Tensor._wrap(np.asarray(batch[start : start + batch_size], dtype=np.float64))).data)
    gen.train(was_training)
    out = np.concatenate(outs, axis=0)
    return out[0] if single else out


def load_generator(path, gen: Generator) -> dict:
    return load_checkpoint(path, {"generator": gen})
