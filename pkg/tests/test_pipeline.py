import json

import numpy as np
import pytest

from sarbiomass.cgan import ConfigError
from sarbiomass.cli import main
from sarbiomass.pipeline import (
    PipelineConfig,
    run_calibrate,
    run_nonsequential,
    run_sequential_baseline,
    split_pixels,
)
from sarbiomass.plots import load_plots
from sarbiomass.raster import load_raster

BAND_NAMES = {"VV", "VH", "sqrtVV", "sqrtVH", "VV2", "VH2"}


def test_scale_rule():
    assert PipelineConfig(model="cgan").use_db
    assert not PipelineConfig(model="nonseq").use_db
    assert not PipelineConfig(model="seqbase").use_db
    assert not PipelineConfig(model="cgan", force_scale="linear").use_db
    with pytest.raises(ConfigError):
        PipelineConfig(model="gbm")
    with pytest.raises(ConfigError):
        PipelineConfig.from_json({"modle": "cgan"})


def test_nonsequential_artifacts_and_floor(tmp_path):
    res = run_nonsequential(PipelineConfig(model="nonseq", out_dir=str(tmp_path), seed=1, width=128, height=128))
    for name in ("model.json", "prediction.json", "prediction.bin", "metrics.json", "config.json"):
        assert (tmp_path / name).exists()
    assert res["prediction"].data.min() >= res["model"].mse
    assert "loocv_rmse" in res["metrics"].extra


def test_split_fractions_and_disjointness():
    cfg = PipelineConfig(model="seqbase", seed=3)
    val, test = split_pixels(cfg, 128, 128)
    assert np.intersect1d(val, test).size == 0
    assert val.size + test.size == 128 * 128
    assert val.size == round(0.2 * 16) * 32 * 32
    rnd = PipelineConfig(model="seqbase", seed=3, split="random")
    v2, _ = split_pixels(rnd, 128, 128)
    assert v2.size == round(0.2 * 128 * 128)


def test_baseline_outputs_and_plot_audit(tmp_path):
    cfg = PipelineConfig(model="seqbase", out_dir=str(tmp_path), seed=2, width=128, height=128)
    res = run_sequential_baseline(cfg)
    assert set(res["model"].selected) <= BAND_NAMES
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert "cv_rmse" in metrics["vs_surrogate"]["extra"]
    # plot values are area-weighted means of the map, not nearest pixels
    from sarbiomass.plots import extract_plots
    from sarbiomass.synth import gen_scene

    plots = gen_scene(2, 128, 128).plots
    rows = (tmp_path / "plot_predictions.csv").read_text().splitlines()[1:]
    got = np.array([float(r.split(",")[1]) for r in rows])
    np.testing.assert_array_equal(got, extract_plots(res["prediction"], plots))


def test_config_echo_reproduces_run(tmp_path):
    cfg = PipelineConfig(model="seqbase", out_dir=str(tmp_path / "a"), seed=5, width=96, height=96)
    run_sequential_baseline(cfg)
    echoed = json.loads((tmp_path / "a" / "config.json").read_text())
    echoed["out_dir"] = str(tmp_path / "b")
    run_sequential_baseline(PipelineConfig.from_json(echoed))
    for name in ("model.json", "prediction.bin", "metrics.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_linear_calibration_does_not_increase_plot_rmse(tmp_path):
    res = run_nonsequential(PipelineConfig(model="nonseq", out_dir=str(tmp_path), seed=1, width=96, height=96))
    from sarbiomass.synth import gen_scene

    cal = run_calibrate(res["prediction"], gen_scene(1, 96, 96).plots, "linear", tmp_path / "cal")
    assert cal["after"].rmse <= cal["before"].rmse


def test_cli_end_to_end(tmp_path):
    scene = tmp_path / "scene"
    assert main(["synth", "--seed", "1", "--width", "128", "--height", "128", "--out", str(scene)]) == 0
    assert main(["preprocess", "--scene", str(scene), "--speckle-filter", "on", "--out", str(tmp_path / "pp")]) == 0
    fc = load_raster(tmp_path / "pp" / "false_colour")
    assert fc.channels == 3 and fc.data[..., :2].max() < 0  # VV and VH in dB are below 0
    assert main(["fit-nonseq", "--scene", str(scene), "--out", str(tmp_path / "ns")]) == 0
    assert main(["fit-seqbase", "--scene", str(scene), "--split", "random", "--out", str(tmp_path / "sb")]) == 0
    cg = tmp_path / "cg"
    args = [
        "train-cgan", "--scene", str(scene), "--objective", "lsgan", "--resnet", "4", "--disc", "pixel",
        "--bs", "3", "--epochs", "1", "--g-width", "2", "--d-width", "2", "--folds", "2",
        "--augment", "off", "--seed", "3", "--out", str(cg),
    ]
    assert main(args) == 0
    pred = load_raster(cg / "prediction")
    assert pred.data.min() >= 0
    assert (cg / "checkpoints" / "loss_log.csv").exists()
    assert main(["predict-map", "--scene", str(scene), "--model", str(cg), "--out", str(tmp_path / "pm")]) == 0
    np.testing.assert_array_equal(load_raster(tmp_path / "pm" / "prediction").data, pred.data)
    plots = str(scene / "plots.csv")
    ev = tmp_path / "ev"
    assert main(["evaluate", "--pred", str(cg / "prediction"), "--ref", str(scene / "als_surrogate"),
                 "--plots", plots, "--quartiles", "--out", str(ev)]) == 0
    report = json.loads((ev / "metrics.json").read_text())
    assert len(report["vs_reference"]["quartile_rmse"]) == 4
    assert main(["evaluate", "--pred", str(cg / "prediction"), "--plots", plots,
                 "--calibrate", "linear", "--out", str(tmp_path / "evc")]) == 0
    cal = json.loads((tmp_path / "evc" / "calibration.json").read_text())
    assert cal["after"]["rmse"] <= cal["before"]["rmse"]
    assert main(["calibrate", "--pred", str(cg / "prediction"), "--plots", plots, "--method", "gamma",
                 "--out", str(tmp_path / "cal")]) in (0, 3)
    assert len(load_plots(plots)) == 88


def test_cli_exit_codes(tmp_path):
    assert main(["fit-nonseq", "--scene", str(tmp_path / "missing"), "--out", str(tmp_path / "x")]) == 3
    assert main(["fit-nonseq", "--force-scale", "db", "--width", "64", "--height", "64",
                 "--out", str(tmp_path / "y")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"not_a_key": 1}')
    assert main(["fit-seqbase", "--config", str(bad), "--out", str(tmp_path / "z")]) == 2
    with pytest.raises(SystemExit) as e:
        main(["train-cgan", "--objective", "hinge"])
    assert e.value.code == 2
