import numpy as np
import pytest

from sarbiomass.raster import Raster, RasterError
from sarbiomass.speckle import SpeckleConfig, directional_masks, refined_lee, refined_lee_components


def test_masks_are_half_windows_through_centre():
    m = directional_masks(7)
    assert m.shape == (8, 7, 7)
    assert np.all(m[:, 3, 3] == 1)
    # each half window keeps the centre line: 4 of 7 columns, or the triangle with its diagonal
    np.testing.assert_array_equal(m.sum(axis=(1, 2)), [28] * 8)
    np.testing.assert_array_equal(m[0] + m[1] - 1 >= 0, True)


@pytest.mark.parametrize("value", [0.0, 0.05, 1.0, 123.456])
def test_constant_raster_unchanged(value):
    r = Raster(np.full((20, 20), value), 10.0)
    np.testing.assert_array_equal(refined_lee(r).data, r.data)


def test_variance_reduction_on_flat_speckled_field():
    rng = np.random.default_rng(7)
    x = 0.1 * rng.gamma(4.0, 0.25, size=(96, 96))
    out = refined_lee(Raster(x, 10.0), SpeckleConfig(7, 0.5)).band(0)
    assert out.var() <= x.var() / 3.0
    assert abs(out.mean() - x.mean()) < 0.02 * x.mean()


def test_step_edge_is_kept():
    x = np.full((30, 30), 0.05)
    x[:, 15:] = 0.5
    out = refined_lee(Raster(x, 10.0)).band(0)
    np.testing.assert_allclose(out[:, :14], 0.05, atol=1e-12)
    np.testing.assert_allclose(out[:, 16:], 0.5, atol=1e-12)


def test_gain_bounds_and_mask_indices():
    rng = np.random.default_rng(3)
    x = rng.gamma(4.0, 0.25, size=(32, 32))
    mean, k, idx = refined_lee_components(x, SpeckleConfig())
    assert k.min() >= 0 and k.max() <= 1
    assert set(np.unique(idx)) <= set(range(8))


def test_invalid_inputs():
    with pytest.raises(ValueError):
        SpeckleConfig(window=6)
    with pytest.raises(RasterError):
        refined_lee(Raster(np.ones((5, 5)), 1.0))
    with pytest.raises(RasterError):
        refined_lee(Raster(np.ones((8, 8, 2)), 1.0))
    with pytest.raises(RasterError):
        refined_lee(Raster(-np.ones((8, 8)), 1.0))
