"""Synthetic scenes: AGB field, saturating backscatter with speckle, surrogate map and plots."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .plots import PlotRecord, area_weighted_mean, save_plots
from .raster import Raster, save_raster

log = logging.getLogger(__name__)

AGB_MAX = 213.4


@dataclass(frozen=True)
class ForwardModel:
    """sigma0 = v_inf - (v_inf - v0) * exp(-k * AGB) per polarisation."""

    vv_v0: float = 0.02
    vv_vinf: float = 0.30
    vv_k: float = 0.015
    vh_v0: float = 0.005
    vh_vinf: float = 0.10
    vh_k: float = 0.012
    looks: float = 4.0

    def backscatter(self, agb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        vv = self.vv_vinf - (self.vv_vinf - self.vv_v0) * np.exp(-self.vv_k * agb)
        vh = self.vh_vinf - (self.vh_vinf - self.vh_v0) * np.exp(-self.vh_k * agb)
        return vv, vh


@dataclass(frozen=True)
class SceneParams:
    agb_mean: float = 80.0
    agb_std: float = 50.0
    spectral_exponent: float = -3.0
    surrogate_sigma: float = 15.0
    n_plots: int = 88
    plot_radius: float = 15.0
    forward: ForwardModel = field(default_factory=ForwardModel)


@dataclass
class SceneBundle:
    agb_truth: Raster
    vv: Raster
    vh: Raster
    als_surrogate: Raster
    plots: list[PlotRecord]
    seed: int
    params: SceneParams


def gaussian_random_field(rng: np.random.Generator, height: int, width: int, exponent: float = -3.0) -> np.ndarray:
    """Zero-mean, unit-variance field with power spectrum proportional to |k|^exponent."""
    ky = np.fft.fftfreq(height)
    kx = np.fft.fftfreq(width)
    k = np.sqrt(ky[:, None] ** 2 + kx[None, :] ** 2)
    k[0, 0] = 1.0
    amp = k ** (exponent / 2.0)
    amp[0, 0] = 0.0
    noise = rng.normal(size=(height, width))
    f = np.fft.ifft2(np.fft.fft2(noise) * amp).real
    sd = f.std()
    return (f - f.mean()) / sd if sd > 0 else f - f.mean()


def gamma_speckle(rng: np.random.Generator, shape, looks: float) -> np.ndarray:
    """Unit-mean gamma multiplicative noise."""
    return rng.gamma(looks, 1.0 / looks, size=shape)


def _place_plots(rng, width_m: float, height_m: float, radius: float, n: int, max_tries: int = 200_000):
    centres: list[tuple[float, float]] = []
    lo_x, hi_x = radius, width_m - radius
    lo_y, hi_y = radius, height_m - radius
    if hi_x <= lo_x or hi_y <= lo_y:
        return centres
    tries = 0
    min_d2 = (2.0 * radius) ** 2
    while len(centres) < n and tries < max_tries:
        tries += 1
        x = float(rng.uniform(lo_x, hi_x))
        y = float(rng.uniform(lo_y, hi_y))
        if all((x - a) ** 2 + (y - b) ** 2 >= min_d2 for a, b in centres):
            centres.append((x, y))
    return centres


def gen_scene(
    seed: int,
    width: int,
    height: int,
    pixel_size: float = 26.6,
    params: SceneParams | None = None,
) -> SceneBundle:
    """Generate a complete synthetic scene from one seed.

    The grid's top-left corner sits at (0, height * pixel_size) so every
    coordinate inside the extent is non-negative.
    """
    params = params or SceneParams()
    rng = np.random.default_rng(seed)
    origin = (0.0, height * pixel_size)

    g = gaussian_random_field(rng, height, width, params.spectral_exponent)
    agb = np.clip(params.agb_mean + params.agb_std * g, 0.0, AGB_MAX)
    vv0, vh0 = params.forward.backscatter(agb)
    vv = vv0 * gamma_speckle(rng, agb.shape, params.forward.looks)
    vh = vh0 * gamma_speckle(rng, agb.shape, params.forward.looks)
    surrogate = np.maximum(agb + rng.normal(0.0, params.surrogate_sigma, size=agb.shape), 0.0)

    truth = Raster(agb, pixel_size, origin)
    centres = _place_plots(rng, width * pixel_size, height * pixel_size, params.plot_radius, params.n_plots)
    if len(centres) < params.n_plots:
        log.warning("extent fits only %d of %d non-overlapping plots", len(centres), params.n_plots)
    plots = []
    for i, (x, y) in enumerate(centres):
        stub = PlotRecord(f"P{i + 1:03d}", (x, y), params.plot_radius, 0.0)
        value = area_weighted_mean(truth, stub)
        plots.append(PlotRecord(stub.id, (x, y), params.plot_radius, value))

    return SceneBundle(
        agb_truth=truth,
        vv=Raster(vv, pixel_size, origin),
        vh=Raster(vh, pixel_size, origin),
        als_surrogate=Raster(surrogate, pixel_size, origin),
        plots=plots,
        seed=seed,
        params=params,
    )


def write_scene(bundle: SceneBundle, out_dir) -> dict[str, str]:
    """Write all rasters, the plot CSV and a scene description; return the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name in ("agb_truth", "vv", "vh", "als_surrogate"):
        save_raster(getattr(bundle, name), out / name)
        paths[name] = str(out / name)
    save_plots(bundle.plots, out / "plots.csv")
    paths["plots"] = str(out / "plots.csv")
    meta = {"seed": bundle.seed, "params": asdict(bundle.params), "paths": paths}
    (out / "scene.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return paths


def toy_translation(n: int, seed: int = 1, size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Paired (SAR-like, AGB-like) patches related by a clipped linear map.

    Returns x of shape (n, 3, size, size) and z = max(0, 0.5 + 0.4 x0 - 0.2 x1 + 0.1 x2)
    of shape (n, 1, size, size).
    """
    rng = np.random.default_rng(seed)
    x = 0.5 * np.stack([
        np.stack([gaussian_random_field(rng, size, size) for _ in range(3)]) for _ in range(n)
    ])
    z = np.maximum(0.0, 0.5 + 0.4 * x[:, 0] - 0.2 * x[:, 1] + 0.1 * x[:, 2])[:, None]
    return x, z


def toy_split(n_train: int = 32, n_test: int = 8, seed: int = 1, size: int = 64):
    """Training and held-out pairs drawn from one seeded stream."""
    x, z = toy_translation(n_train + n_test, seed, size)
    return x[:n_train], z[:n_train], x[n_train:], z[n_train:]

