import numpy as np
import pytest

from sarbiomass.plots import area_weighted_mean
from sarbiomass.synth import AGB_MAX, ForwardModel, gamma_speckle, gen_scene, toy_split, write_scene


@pytest.fixture(scope="module")
def scene():
    return gen_scene(1, 192, 160)


def test_same_seed_identical():
    a, b = gen_scene(4, 64, 64), gen_scene(4, 64, 64)
    for name in ("agb_truth", "vv", "vh", "als_surrogate"):
        np.testing.assert_array_equal(getattr(a, name).data, getattr(b, name).data)
    assert a.plots == b.plots


def test_invariants(scene):
    agb = scene.agb_truth.data
    assert agb.min() >= 0 and agb.max() <= AGB_MAX
    assert (agb == 0).any()
    assert scene.vv.data.min() > 0 and scene.vh.data.min() > 0
    assert scene.als_surrogate.data.min() >= 0
    assert len(scene.plots) == 88
    xmin, ymin, xmax, ymax = scene.agb_truth.extent
    for p in scene.plots:
        assert xmin + p.radius <= p.centre[0] <= xmax - p.radius
        assert ymin + p.radius <= p.centre[1] <= ymax - p.radius


def test_plots_do_not_overlap(scene):
    c = np.array([p.centre for p in scene.plots])
    d = np.sqrt(((c[:, None] - c[None]) ** 2).sum(-1))
    assert d[np.triu_indices(len(c), 1)].min() >= 30.0


def test_plot_agb_matches_extraction_oracle(scene):
    for p in scene.plots[:10]:
        assert p.agb == area_weighted_mean(scene.agb_truth, p)


def test_forward_model_monotone_and_flat_at_k0():
    agb = np.linspace(0, 213.4, 50)
    vv, vh = ForwardModel().backscatter(agb)
    assert np.all(np.diff(vv) >= 0) and np.all(np.diff(vh) >= 0)
    vv0, _ = ForwardModel(vv_k=0.0).backscatter(agb)
    np.testing.assert_allclose(vv0, 0.02, rtol=1e-14)


def test_speckle_has_unit_mean():
    s = gamma_speckle(np.random.default_rng(0), 100_000, 4.0)
    assert abs(s.mean() - 1.0) < 0.01


def test_small_extent_reduces_plot_count(caplog):
    b = gen_scene(0, 4, 4)
    assert len(b.plots) < 88
    assert "non-overlapping plots" in caplog.text


def test_write_scene(tmp_path, scene):
    paths = write_scene(scene, tmp_path)
    for name in ("agb_truth", "vv", "vh", "als_surrogate"):
        assert (tmp_path / f"{name}.json").exists() and (tmp_path / f"{name}.bin").exists()
    assert paths["plots"].endswith("plots.csv")


def test_toy_split_shapes():
    xtr, ztr, xte, zte = toy_split(6, 2, seed=1, size=16)
    assert xtr.shape == (6, 3, 16, 16) and zte.shape == (2, 1, 16, 16)
    np.testing.assert_array_equal(ztr, np.maximum(0, 0.5 + 0.4 * xtr[:, 0] - 0.2 * xtr[:, 1] + 0.1 * xtr[:, 2])[:, None])
