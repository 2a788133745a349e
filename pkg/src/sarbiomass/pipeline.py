"""End-to-end workflows: non-sequential, baseline sequential and cGAN sequential."""

from __future__ import annotations

import json
import logging
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .cgan import (
    ConfigError,
    DiscriminatorSpec,
    GeneratorSpec,
    TrainConfig,
    build_discriminator,
    build_generator,
    generate,
    train,
)
from .autodiff import load_checkpoint
from .ols import DesignMatrix, fit_sqrt_model, kfold_cv_rmse, loocv_rmse, predict_agb
from .patches import Patch, augment_array, grid_origins, make_folds, mosaic_pnorm
from .plots import PlotRecord, extract_plots, load_plots, write_extraction
from .raster import Raster, derived_bands, load_raster, make_false_colour, save_raster, to_db
from .speckle import SpeckleConfig, refined_lee
from .synth import gen_scene

log = logging.getLogger(__name__)

MODELS = ("nonseq", "seqbase", "cgan")
SCALES = ("auto", "db", "linear")


@dataclass
class PipelineConfig:
    """Resolved settings for one workflow run.

    A run reads ``scene_dir`` when given, otherwise it synthesises a scene of
    ``width`` x ``height`` pixels from ``scene_seed`` (default: ``seed``).
    """

    model: str = "nonseq"
    out_dir: str = "out"
    seed: int = 0
    scene_dir: str | None = None
    scene_seed: int | None = None
    width: int = 256
    height: int = 256
    speckle_filter: bool = False
    speckle_window: int = 7
    force_scale: str = "auto"
    alpha: float = 0.05
    split: str = "blocked"
    validation_fraction: float = 0.2
    block_size: int = 32
    cv_k: int = 5
    folds: int = 5
    patch_size: int = 64
    train_stride: int = 32
    gen_stride: int = 32
    p_norm: float = 5.0
    augment: bool = True
    agb_scale: float = 100.0
    resnet_blocks: int = 6
    g_norm: str = "bn"
    g_width: int = 64
    d_kind: str = "pixel"
    d_norm: str = "bn"
    d_width: int = 64
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if isinstance(self.train, dict):
            try:
                self.train = TrainConfig(**self.train)
            except TypeError as exc:
                raise ConfigError(f"bad train settings: {exc}") from exc
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.force_scale not in SCALES:
            raise ConfigError(f"force_scale must be one of {SCALES}, got {self.force_scale!r}")
        if self.split not in ("blocked", "random"):
            raise ConfigError(f"split must be 'blocked' or 'random', got {self.split!r}")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction must lie in (0, 1)")
        if self.agb_scale <= 0:
            raise ConfigError("agb_scale must be positive")
        if self.gen_stride <= 0 or self.train_stride <= 0:
            raise ConfigError("strides must be positive")

    @property
    def use_db(self) -> bool:
        """dB for the cGAN and linear for the regression models, unless forced."""
        if self.force_scale == "auto":
            return self.model == "cgan"
        return self.force_scale == "db"

    def to_json(self) -> dict:
        d = asdict(self)
        d["train"] = asdict(self.train)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {unknown}")
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def generator_spec(self) -> GeneratorSpec:
        return GeneratorSpec(resnet_blocks=self.resnet_blocks, norm=self.g_norm, base_width=self.g_width)

    def discriminator_spec(self) -> DiscriminatorSpec:
        return DiscriminatorSpec(kind=self.d_kind, norm=self.d_norm, base_width=self.d_width)


@dataclass
class Scene:
    vv: Raster
    vh: Raster
    als_surrogate: Raster
    plots: list[PlotRecord]


@contextmanager
def _step(name: str):
    t0 = time.perf_counter()
    log.info("step=%s status=start", name)
    yield
    log.info("step=%s status=done seconds=%.3f", name, time.perf_counter() - t0)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def load_scene(cfg: PipelineConfig) -> Scene:
    if cfg.scene_dir is not None:
        d = Path(cfg.scene_dir)
        return Scene(
            load_raster(d / "vv"), load_raster(d / "vh"),
            load_raster(d / "als_surrogate"), load_plots(d / "plots.csv"),
        )
    seed = cfg.seed if cfg.scene_seed is None else cfg.scene_seed
    b = gen_scene(seed, cfg.width, cfg.height)
    return Scene(b.vv, b.vh, b.als_surrogate, b.plots)


def preprocess(cfg: PipelineConfig, scene: Scene) -> tuple[Raster, Raster]:
    """Optional speckle filtering of linear VV and VH (before any dB conversion)."""
    vv, vh = scene.vv, scene.vh
    if cfg.speckle_filter:
        sc = SpeckleConfig(window=cfg.speckle_window)
        vv, vh = refined_lee(vv, sc), refined_lee(vh, sc)
    return vv, vh


def _regression_bands(cfg: PipelineConfig, vv: Raster, vh: Raster) -> dict[str, Raster]:
    if cfg.use_db:
        raise ConfigError("the sqrt and square regressors need linear-scale backscatter; dB is not supported here")
    return derived_bands(vv, vh).regressors()


def _echo(cfg: PipelineConfig, out: Path) -> None:
    write_json(out / "config.json", cfg.to_json())


def _plot_report(pred: Raster, plots: list[PlotRecord], out: Path) -> ev.MetricReport:
    """Metrics against field plots, using area-weighted means of the map."""
    values = extract_plots(pred, plots)
    write_extraction(out / "plot_predictions.csv", plots, values)
    return ev.paired_metrics(values, np.array([p.agb for p in plots]))


# ---------------------------------------------------------------------------
# non-sequential
# ---------------------------------------------------------------------------

def run_nonsequential(cfg: PipelineConfig) -> dict:
    """Fit sqrt(AGB) on plot-level band means and map it wall to wall."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _echo(cfg, out)
    with _step("load"):
        scene = load_scene(cfg)
        vv, vh = preprocess(cfg, scene)
        bands = _regression_bands(cfg, vv, vh)
    with _step("extract"):
        cols = {name: extract_plots(r, scene.plots) for name, r in bands.items()}
        dm = DesignMatrix.from_columns(cols, [p.agb for p in scene.plots])
    with _step("fit"):
        model = fit_sqrt_model(dm, cfg.alpha)
        model.save(out / "model.json")
    with _step("predict"):
        pred = vv.with_data(predict_agb(model, {k: r.band(0) for k, r in bands.items()}))
        save_raster(pred, out / "prediction")
    with _step("evaluate"):
        fitted = predict_agb(model, {k: np.asarray(v) for k, v in cols.items()})
        rep = ev.paired_metrics(fitted, dm.response)
        rep.extra["loocv_rmse"] = loocv_rmse(dm, model.selected)
        summary, edges, counts = ev.distribution_summary(pred)
        rep.summary = summary
        ev.write_histogram(out / "histogram.csv", edges, counts)
        write_extraction(out / "plot_predictions.csv", scene.plots, fitted)
        write_json(out / "metrics.json", {"vs_plots": rep.to_json()})
    return {"model": model, "prediction": pred, "metrics": rep}


# ---------------------------------------------------------------------------
# baseline sequential
# ---------------------------------------------------------------------------

def split_pixels(cfg: PipelineConfig, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Flat indices of validation and test pixels.

    The blocked split assigns whole ``block_size`` squares, which limits the
    spatial autocorrelation between the two sets.
    """
    rng = np.random.default_rng(cfg.seed)
    n = height * width
    if cfg.split == "random":
        perm = rng.permutation(n)
        n_val = int(round(cfg.validation_fraction * n))
        return np.sort(perm[:n_val]), np.sort(perm[n_val:])
    bs = cfg.block_size
    by = np.arange(height) // bs
    bx = np.arange(width) // bs
    nbx = int(bx[-1]) + 1
    block_id = (by[:, None] * nbx + bx[None, :]).ravel()
    n_blocks = int(block_id.max()) + 1
    n_val = max(1, int(round(cfg.validation_fraction * n_blocks)))
    if n_val >= n_blocks:
        raise ConfigError(f"{n_blocks} block(s) cannot be split; lower block_size")
    val_blocks = rng.permutation(n_blocks)[:n_val]
    is_val = np.isin(block_id, val_blocks)
    return np.flatnonzero(is_val), np.flatnonzero(~is_val)


def run_sequential_baseline(cfg: PipelineConfig) -> dict:
    """Regress the surrogate AGB map on the six SAR bands, pixel by pixel."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _echo(cfg, out)
    with _step("load"):
        scene = load_scene(cfg)
        vv, vh = preprocess(cfg, scene)
        bands = _regression_bands(cfg, vv, vh)
        target = scene.als_surrogate
        if not target.same_grid(vv):
            raise ValueError("surrogate map is not co-registered with the SAR rasters")
        dm = DesignMatrix.from_columns({k: r.band(0).ravel() for k, r in bands.items()}, target.band(0).ravel())
    with _step("split"):
        val, test = split_pixels(cfg, vv.height, vv.width)
    with _step("fit"):
        model = fit_sqrt_model(dm.subset(val), cfg.alpha)
        model.save(out / "model.json")
    with _step("predict"):
        pred = vv.with_data(predict_agb(model, {k: r.band(0) for k, r in bands.items()}))
        save_raster(pred, out / "prediction")
    with _step("evaluate"):
        rep = ev.map_metrics(pred, target)
        rep.extra["cv_rmse"] = kfold_cv_rmse(dm.subset(test), model.selected, cfg.cv_k, cfg.seed)
        rep.extra["n_validation"] = int(val.size)
        rep.extra["n_test"] = int(test.size)
        summary, edges, counts = ev.distribution_summary(pred)
        rep.summary = summary
        ev.write_histogram(out / "histogram.csv", edges, counts)
        plot_rep = _plot_report(pred, scene.plots, out)
        write_json(out / "metrics.json", {"vs_surrogate": rep.to_json(), "vs_plots": plot_rep.to_json()})
    return {"model": model, "prediction": pred, "metrics": rep, "plot_metrics": plot_rep}


# ---------------------------------------------------------------------------
# cGAN sequential
# ---------------------------------------------------------------------------

@dataclass
class InputScaling:
    """Per-channel standardisation of the false-colour input."""

    mean: list[float]
    std: list[float]
    db: bool
    agb_scale: float

    def apply(self, fc: np.ndarray) -> np.ndarray:
        return (fc - np.asarray(self.mean)) / np.asarray(self.std)


def false_colour_input(cfg: PipelineConfig, vv: Raster, vh: Raster) -> tuple[np.ndarray, InputScaling]:
    """(H, W, 3) standardised composite and the scaling that produced it."""
    if cfg.use_db:
        vv, vh = to_db(vv), to_db(vh)
    fc = make_false_colour(vv, vh).data
    mean = fc.reshape(-1, 3).mean(0)
    std = fc.reshape(-1, 3).std(0)
    std = np.where(std > 0, std, 1.0)
    sc = InputScaling([float(v) for v in mean], [float(v) for v in std], cfg.use_db, cfg.agb_scale)
    return sc.apply(fc), sc


def _stack(arr_hwc: np.ndarray, origins, size: int) -> np.ndarray:
    chw = arr_hwc.transpose(2, 0, 1)
    return np.stack([chw[:, r : r + size, c : c + size] for c, r in origins])


def training_arrays(x: np.ndarray, z: np.ndarray, origins, size: int, augment: bool):
    xs, zs = _stack(x, origins, size), _stack(z, origins, size)
    if not augment:
        return xs, zs
    ax = np.stack([a for p in xs for a in augment_array(p)])
    az = np.stack([a for p in zs for a in augment_array(p)])
    return ax, az


def _fit_cgan(cfg: PipelineConfig, xs, zs, seed: int, out_dir=None):
    gen = build_generator(cfg.generator_spec(), seed=seed)
    disc = build_discriminator(cfg.discriminator_spec(), seed=seed + 1)
    tc = TrainConfig(**{**asdict(cfg.train), "seed": seed})
    res = train(gen, disc, xs, zs, tc, out_dir)
    return gen, res


def predict_map(gen, x: np.ndarray, cfg: PipelineConfig, template: Raster) -> Raster:
    """Generate every ``gen_stride`` patch and blend with the p-norm mosaic."""
    size = cfg.patch_size
    origins = grid_origins(template.width, template.height, size, cfg.gen_stride)
    if not origins:
        raise ValueError(f"scene smaller than one {size}x{size} patch")
    preds = generate(gen, _stack(x, origins, size))
    patches = [Patch(c, r, p * cfg.agb_scale) for (c, r), p in zip(origins, preds)]
    return mosaic_pnorm(patches, template.width, template.height, cfg.p_norm, template=template)


def run_sequential_cgan(cfg: PipelineConfig) -> dict:
    """Fold-wise cGAN training for CV-RMSE, then a final model for the map."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _echo(cfg, out)
    size = cfg.patch_size
    with _step("load"):
        scene = load_scene(cfg)
        vv, vh = preprocess(cfg, scene)
        x, scaling = false_colour_input(cfg, vv, vh)
        target = scene.als_surrogate
        if not target.same_grid(vv):
            raise ValueError("surrogate map is not co-registered with the SAR rasters")
        z = target.data / cfg.agb_scale
    with _step("folds"):
        plan = make_folds(vv.width, vv.height, cfg.folds, cfg.seed, size, cfg.train_stride)
        plan.audit()
    fold_rmse = []
    for f, fold in enumerate(plan.folds):
        with _step(f"fold{f}"):
            if not fold.train:
                raise ValueError(f"fold {f} has no training patches; enlarge the scene")
            xs, zs = training_arrays(x, z, fold.train, size, cfg.augment)
            gen, _ = _fit_cgan(cfg, xs, zs, cfg.seed + 100 * (f + 1))
            pred = generate(gen, _stack(x, fold.test, size)) * cfg.agb_scale
            ref = _stack(target.data, fold.test, size)
            fold_rmse.append(float(np.sqrt(np.mean((pred - ref) ** 2))))
    with _step("final"):
        origins = grid_origins(vv.width, vv.height, size, cfg.train_stride)
        xs, zs = training_arrays(x, z, origins, size, cfg.augment)
        gen, res = _fit_cgan(cfg, xs, zs, cfg.seed, out / "checkpoints")
        model_meta = {
            "generator": asdict(cfg.generator_spec()),
            "discriminator": asdict(cfg.discriminator_spec()),
            "scaling": asdict(scaling),
            "checkpoint": "checkpoints/checkpoint_final",
            "patch_size": size,
        }
        write_json(out / "model.json", model_meta)
    with _step("predict"):
        pred = predict_map(gen, x, cfg, vv)
        save_raster(pred, out / "prediction")
    with _step("evaluate"):
        rep = ev.map_metrics(pred, target)
        rep.extra["cv_rmse"] = float(np.mean(fold_rmse))
        for f, v in enumerate(fold_rmse):
            rep.extra[f"fold{f}_rmse"] = v
        summary, edges, counts = ev.distribution_summary(pred)
        rep.summary = summary
        ev.write_histogram(out / "histogram.csv", edges, counts)
        plot_rep = _plot_report(pred, scene.plots, out)
        write_json(out / "metrics.json", {"vs_surrogate": rep.to_json(), "vs_plots": plot_rep.to_json()})
    return {"prediction": pred, "metrics": rep, "plot_metrics": plot_rep, "train": res, "fold_rmse": fold_rmse}


def load_cgan_model(model_dir) -> tuple[object, InputScaling, dict]:
    d = Path(model_dir)
    meta = json.loads((d / "model.json").read_text())
    gen = build_generator(GeneratorSpec(**meta["generator"]), seed=0)
    load_checkpoint(d / meta["checkpoint"], {"generator": gen})
    return gen, InputScaling(**meta["scaling"]), meta


def run_predict_map(cfg: PipelineConfig, model_dir) -> Raster:
    """Map a scene with a previously trained generator, reusing its input scaling."""
    gen, scaling, meta = load_cgan_model(model_dir)
    scene = load_scene(cfg)
    vv, vh = preprocess(cfg, scene)
    if scaling.db:
        vv, vh = to_db(vv), to_db(vh)
    x = scaling.apply(make_false_colour(vv, vh).data)
    run_cfg = PipelineConfig(**{**cfg.to_json(), "agb_scale": scaling.agb_scale, "patch_size": meta["patch_size"]})
    pred = predict_map(gen, x, run_cfg, vv)
    out = Path(cfg.out_dir)
    save_raster(pred, out / "prediction")
    _echo(cfg, out)
    return pred


# ---------------------------------------------------------------------------
# evaluation and calibration
# ---------------------------------------------------------------------------

def run_evaluate(pred: Raster, out_dir, reference: Raster | None = None, plots: list[PlotRecord] | None = None) -> dict:
    """Metrics of a map against a reference map and/or field plots."""
    out = Path(out_dir)
    report = {}
    if reference is not None:
        report["vs_reference"] = ev.map_metrics(pred, reference).to_json()
    if plots:
        report["vs_plots"] = _plot_report(pred, plots, out).to_json()
    summary, edges, counts = ev.distribution_summary(pred)
    report["summary"] = summary
    ev.write_histogram(out / "histogram.csv", edges, counts)
    write_json(out / "metrics.json", report)
    return report


def run_calibrate(pred: Raster, plots: list[PlotRecord], method: str, out_dir) -> dict:
    """Fit a calibration of plot-level predictions to plot AGB and apply it to the map."""
    out = Path(out_dir)
    values = extract_plots(pred, plots)
    z = np.array([p.agb for p in plots])
    model = ev.fit_calibration(values, z, method)
    calibrated = pred.with_data(ev.apply_calibration(model, pred.data))
    save_raster(calibrated, out / "calibrated")
    before = ev.paired_metrics(values, z)
    after = ev.paired_metrics(ev.apply_calibration(model, values), z)
    report = {"calibration": model.to_json(), "before": before.to_json(), "after": after.to_json()}
    write_json(out / "calibration.json", report)
    return {"model": model, "calibrated": calibrated, "before": before, "after": after}


RUNNERS = {"nonseq": run_nonsequential, "seqbase": run_sequential_baseline, "cgan": run_sequential_cgan}

