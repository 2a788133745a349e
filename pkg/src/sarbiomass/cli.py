"""Command-line interface.

Settings resolve as defaults < ``--config`` JSON < explicit flags. Exit codes:
0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("sarbiomass")


def _on_off(v: str) -> bool:
    if v not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return v == "on"


def _scene_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scene", help="scene directory (vv, vh, als_surrogate rasters and plots.csv)")
    p.add_argument("--width", type=int, help="synthetic scene width when --scene is absent")
    p.add_argument("--height", type=int, help="synthetic scene height when --scene is absent")
    p.add_argument("--speckle-filter", type=_on_off, dest="speckle_filter", metavar="{on,off}")
    p.add_argument("--speckle-window", type=int, dest="speckle_window")
    p.add_argument("--force-scale", choices=("db", "linear"), dest="force_scale")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with pipeline settings")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="BLAS / OpenMP thread count")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="sarbiomass", description="SAR-based above-ground biomass mapping")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic scene")
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--pixel-size", type=float, default=26.6, dest="pixel_size")

    p = sub.add_parser("preprocess", parents=[common], help="speckle filtering, dB and false colour")
    _scene_args(p)

    p = sub.add_parser("fit-nonseq", parents=[common], help="plot-level sqrt-AGB regression")
    _scene_args(p)
    p.add_argument("--alpha", type=float)

    p = sub.add_parser("fit-seqbase", parents=[common], help="pixel-level regression on the surrogate map")
    _scene_args(p)
    p.add_argument("--alpha", type=float)
    p.add_argument("--split", choices=("random", "blocked"))

    p = sub.add_parser("train-cgan", parents=[common], help="cGAN sequential model with fold CV and map")
    _scene_args(p)
    p.add_argument("--objective", choices=("vanilla", "lsgan", "wgangp"))
    p.add_argument("--resnet", type=int, choices=(4, 5, 6), dest="resnet_blocks")
    p.add_argument("--disc", choices=("pixel", "patch16", "patch34"), dest="d_kind")
    p.add_argument("--norm", choices=("bn", "in"), dest="g_norm")
    p.add_argument("--d-norm", choices=("bn", "in", "ln"), dest="d_norm")
    p.add_argument("--bs", type=int, dest="batch_size")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--l1", type=float, dest="l1_weight")
    p.add_argument("--lambda-gp", type=float, dest="lambda_gp")
    p.add_argument("--n-critic", type=int, dest="n_critic")
    p.add_argument("--g-width", type=int, dest="g_width")
    p.add_argument("--d-width", type=int, dest="d_width")
    p.add_argument("--folds", type=int)
    p.add_argument("--p-norm", type=float, dest="p_norm")
    p.add_argument("--augment", type=_on_off, metavar="{on,off}")

    p = sub.add_parser("predict-map", parents=[common], help="map a scene with a trained generator")
    _scene_args(p)
    p.add_argument("--model", required=True, help="output directory of train-cgan")
    p.add_argument("--p-norm", type=float, dest="p_norm")
    p.add_argument("--stride", type=int, dest="gen_stride")

    p = sub.add_parser("evaluate", parents=[common], help="agreement metrics")
    p.add_argument("--pred", required=True, help="raster base path or CSV")
    p.add_argument("--ref", help="raster base path or CSV")
    p.add_argument("--plots", help="plots CSV")
    p.add_argument("--quartiles", action="store_true")
    p.add_argument("--calibrate", choices=("linear", "gamma", "exponential", "nth-root", "logarithmic"))

    p = sub.add_parser("calibrate", parents=[common], help="post-hoc calibration against plots")
    p.add_argument("--pred", required=True, help="prediction raster base path")
    p.add_argument("--plots", required=True)
    p.add_argument("--method", default="linear", choices=("linear", "gamma", "exponential", "nth-root", "logarithmic"))
    return ap


_PIPELINE_KEYS = (
    "seed", "width", "height", "speckle_filter", "speckle_window", "force_scale", "alpha", "split",
    "resnet_blocks", "d_kind", "g_norm", "d_norm", "g_width", "d_width", "folds", "p_norm", "augment",
    "gen_stride",
)
_TRAIN_KEYS = ("objective", "batch_size", "epochs", "lr", "l1_weight", "lambda_gp", "n_critic")


def resolve_config(args, model: str):
    from .pipeline import PipelineConfig

    obj: dict = {}
    if args.config:
        obj = json.loads(Path(args.config).read_text())
    obj["model"] = model
    train = dict(obj.get("train", {}))
    for k in _PIPELINE_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            obj[k] = v
    for k in _TRAIN_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            train[k] = v
    if model == "cgan" and train.get("objective") == "wgangp" and "d_norm" not in obj:
        obj["d_norm"] = "ln"
    obj["train"] = train
    if getattr(args, "scene", None):
        obj["scene_dir"] = args.scene
    if args.out:
        obj["out_dir"] = args.out
    return PipelineConfig.from_json(obj)


def _read_values(path: str):
    """Raster band 0 (flattened) or the last column of a CSV with a header."""
    import numpy as np

    from .raster import load_raster

    if path.endswith(".csv"):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        return None, np.array([float(r[-1]) for r in rows[1:] if r])
    r = load_raster(path)
    return r, r.band(0).ravel()


def _cmd_synth(args) -> None:
    from .synth import gen_scene, write_scene

    seed = 0 if args.seed is None else args.seed
    b = gen_scene(seed, args.width, args.height, args.pixel_size)
    paths = write_scene(b, args.out or "scene")
    log.info("wrote scene seed=%d to %s", seed, paths["plots"])


def _cmd_preprocess(args) -> None:
    from .pipeline import load_scene, preprocess, write_json
    from .plots import save_plots
    from .raster import make_false_colour, save_raster, to_db

    cfg = resolve_config(args, "cgan")
    scene = load_scene(cfg)
    vv, vh = preprocess(cfg, scene)
    out = Path(cfg.out_dir)
    save_raster(vv, out / "vv")
    save_raster(vh, out / "vh")
    # carry the response data along so the output works as a scene directory
    save_raster(scene.als_surrogate, out / "als_surrogate")
    save_plots(scene.plots, out / "plots.csv")
    if cfg.use_db:
        vv, vh = to_db(vv), to_db(vh)
    save_raster(make_false_colour(vv, vh), out / "false_colour")
    write_json(out / "config.json", cfg.to_json())


def _cmd_fit(args, model: str) -> None:
    from .pipeline import RUNNERS

    cfg = resolve_config(args, model)
    res = RUNNERS[model](cfg)
    log.info("%s done: %s", model, res["metrics"].to_json())


def _cmd_predict_map(args) -> None:
    from .pipeline import run_predict_map

    cfg = resolve_config(args, "cgan")
    run_predict_map(cfg, args.model)


def _cmd_evaluate(args) -> None:
    from . import evaluation as ev
    from .pipeline import run_calibrate, run_evaluate, write_json
    from .plots import load_plots
    from .raster import load_raster

    out = Path(args.out or "evaluation")
    plots = load_plots(args.plots) if args.plots else None
    pred_r, pred_v = _read_values(args.pred)
    report = {}
    if args.calibrate:
        if pred_r is None or plots is None:
            raise ValueError("--calibrate needs a prediction raster and --plots")
        cal = run_calibrate(pred_r, plots, args.calibrate, out)
        pred_r = cal["calibrated"]
        pred_v = pred_r.band(0).ravel()
        report["calibration"] = cal["model"].to_json()
    if pred_r is not None and (args.ref is None or not args.ref.endswith(".csv")):
        ref_r = load_raster(args.ref) if args.ref else None
        report.update(run_evaluate(pred_r, out, ref_r, plots))
        if ref_r is not None:
            mask = pred_r.valid_mask() & ref_r.valid_mask()
            ev.write_pairs(out / "pairs.csv", pred_r.band(0)[mask], ref_r.band(0)[mask])
    else:
        if args.ref is None:
            raise ValueError("a CSV prediction needs --ref")
        _, ref_v = _read_values(args.ref)
        rep = ev.paired_metrics(pred_v, ref_v)
        if args.quartiles:
            rep.quartile_rmse = ev.quartile_rmse(ref_v, pred_v)
        report["vs_reference"] = rep.to_json()
        ev.write_pairs(out / "pairs.csv", pred_v, ref_v)
    if not args.quartiles and "vs_reference" in report:
        report["vs_reference"].pop("quartile_rmse", None)
    write_json(out / "metrics.json", report)
    print(json.dumps(report, indent=2, sort_keys=True, default=float))


def _cmd_calibrate(args) -> None:
    from .pipeline import run_calibrate
    from .plots import load_plots
    from .raster import load_raster

    res = run_calibrate(load_raster(args.pred), load_plots(args.plots), args.method, args.out or "calibration")
    log.info("calibration %s: rmse %.4f -> %.4f", args.method, res["before"].rmse, res["after"].rmse)


def _set_threads(n: int | None) -> None:
    if n is None:
        return
    if n < 1:
        raise ValueError("--threads must be >= 1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )
    import numpy as np

    from .cgan import ConfigError, TrainingError
    from .ols import RankDeficientError
    from .plots import PlotError
    from .raster import RasterError

    try:
        _set_threads(args.threads)
        cmd = args.command
        if cmd == "synth":
            _cmd_synth(args)
        elif cmd == "preprocess":
            _cmd_preprocess(args)
        elif cmd == "fit-nonseq":
            _cmd_fit(args, "nonseq")
        elif cmd == "fit-seqbase":
            _cmd_fit(args, "seqbase")
        elif cmd == "train-cgan":
            _cmd_fit(args, "cgan")
        elif cmd == "predict-map":
            _cmd_predict_map(args)
        elif cmd == "evaluate":
            _cmd_evaluate(args)
        elif cmd == "calibrate":
            _cmd_calibrate(args)
    except (ConfigError, json.JSONDecodeError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (TrainingError, RankDeficientError, FloatingPointError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except (RasterError, PlotError, OSError, ValueError, KeyError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
