"""Raster data model, exchange-format I/O, band math and resampling."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

BAND_NAMES = ("VV", "VH", "sqrtVV", "sqrtVH", "VV2", "VH2")


class RasterError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Raster:
    """Georeferenced grid stored as a (height, width, channels) float64 array.

    ``origin`` is the (easting, northing) of the top-left corner in metres;
    rows run southwards. The array is made read-only on construction.
    """

    data: np.ndarray
    pixel_size: float
    origin: tuple[float, float] = (0.0, 0.0)
    nodata: float = float("nan")

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise RasterError(f"raster data must be 2-D or 3-D, got shape {arr.shape}")
        h, w, _ = arr.shape
        if h < 1 or w < 1:
            raise RasterError("raster width and height must be >= 1")
        if not (self.pixel_size > 0 and math.isfinite(self.pixel_size)):
            raise RasterError(f"pixel_size must be positive and finite, got {self.pixel_size}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "pixel_size", float(self.pixel_size))
        object.__setattr__(self, "nodata", float(self.nodata))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) in metres."""
        x0, y0 = self.origin
        return (x0, y0 - self.height * self.pixel_size, x0 + self.width * self.pixel_size, y0)

    def band(self, i: int = 0) -> np.ndarray:
        return self.data[:, :, i]

    def valid_mask(self, channel: int = 0) -> np.ndarray:
        v = self.data[:, :, channel]
        if math.isnan(self.nodata):
            return ~np.isnan(v)
        return (v != self.nodata) & ~np.isnan(v)

    def with_data(self, data: np.ndarray) -> "Raster":
        """Same geo-registration, new values."""
        return replace(self, data=data)

    def same_grid(self, other: "Raster") -> bool:
        return (
            self.width == other.width
            and self.height == other.height
            and self.pixel_size == other.pixel_size
            and self.origin == other.origin
        )


@dataclass(frozen=True)
class BandSet:
    """Linear-scale regressor bands derived from co-registered VV and VH."""

    VV: Raster
    VH: Raster
    sqrtVV: Raster
    sqrtVH: Raster
    VV2: Raster
    VH2: Raster
    VV_minus_VH: Raster = field(repr=False, default=None)

    def regressors(self) -> dict[str, Raster]:
        return {name: getattr(self, name) for name in BAND_NAMES}


# ---------------------------------------------------------------------------
# exchange format
# ---------------------------------------------------------------------------

def _pair_paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".json", ".bin"):
        p = p.with_suffix("")
    return p.with_name(p.name + ".json"), p.with_name(p.name + ".bin")


def save_raster(r: Raster, path) -> None:
    """Write ``<path>.json`` header and ``<path>.bin`` little-endian f32 payload."""
    head, payload = _pair_paths(path)
    head.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "width": r.width,
        "height": r.height,
        "channels": r.channels,
        "pixel_size_m": r.pixel_size,
        "origin_x_m": r.origin[0],
        "origin_y_m": r.origin[1],
        "nodata": None if math.isnan(r.nodata) else r.nodata,
        "dtype": "f32",
    }
    head.write_text(json.dumps(header, indent=1))
    payload.write_bytes(np.ascontiguousarray(r.data, dtype="<f4").tobytes())


def load_raster(path) -> Raster:
    head, payload = _pair_paths(path)
    if not head.exists():
        raise FileNotFoundError(f"raster header not found: {head}")
    if not payload.exists():
        raise FileNotFoundError(f"raster payload not found: {payload}")
    header = json.loads(head.read_text())
    try:
        w, h, c = int(header["width"]), int(header["height"]), int(header["channels"])
        ps = float(header["pixel_size_m"])
        ox, oy = float(header["origin_x_m"]), float(header["origin_y_m"])
    except (KeyError, TypeError, ValueError) as exc:
        raise RasterError(f"malformed raster header {head}: {exc}") from exc
    nodata = header.get("nodata")
    nodata = float("nan") if nodata is None else float(nodata)
    if not all(math.isfinite(v) for v in (ps, ox, oy)):
        raise RasterError(f"non-finite field in raster header {head}")
    if header.get("dtype", "f32") != "f32":
        raise RasterError(f"unsupported dtype {header.get('dtype')!r}")
    values = np.frombuffer(payload.read_bytes(), dtype="<f4")
    if values.size != w * h * c:
        raise RasterError(
            f"payload size mismatch: header declares {w}x{h}x{c}={w * h * c} values, payload has {values.size}"
        )
    return Raster(values.astype(np.float64).reshape(h, w, c), ps, (ox, oy), nodata)


# ---------------------------------------------------------------------------
# band math
# ---------------------------------------------------------------------------

def to_db(r: Raster) -> Raster:
    """10 * log10(v); every finite value must be strictly positive."""
    d = r.data
    bad = np.isfinite(d) & (d <= 0)
    if bad.any():
        row, col, ch = np.argwhere(bad)[0]
        raise RasterError(f"non-positive value {d[row, col, ch]} at pixel (row={row}, col={col}, channel={ch})")
    with np.errstate(invalid="ignore"):
        return r.with_data(10.0 * np.log10(d))


def from_db(r: Raster) -> Raster:
    return r.with_data(np.power(10.0, r.data / 10.0))


def _check_pair(a: Raster, b: Raster) -> None:
    if a.channels != 1 or b.channels != 1:
        raise RasterError("expected single-channel rasters")
    if not a.same_grid(b):
        raise RasterError(
            f"rasters are not co-registered: {a.width}x{a.height}@{a.origin} vs {b.width}x{b.height}@{b.origin}"
        )


def make_false_colour(vv: Raster, vh: Raster) -> Raster:
    """Three-channel composite (VV, VH, VV - VH)."""
    _check_pair(vv, vh)
    a, b = vv.band(0), vh.band(0)
    return vv.with_data(np.stack([a, b, a - b], axis=-1))


def derived_bands(vv: Raster, vh: Raster) -> BandSet:
    _check_pair(vv, vh)
    a, b = vv.band(0), vh.band(0)
    if np.any(a < 0) or np.any(b < 0):
        raise RasterError("derived bands need non-negative linear-scale backscatter")
    return BandSet(
        VV=vv, VH=vh,
        sqrtVV=vv.with_data(np.sqrt(a)), sqrtVH=vh.with_data(np.sqrt(b)),
        VV2=vv.with_data(a * a), VH2=vh.with_data(b * b),
        VV_minus_VH=vv.with_data(a - b),
    )


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def cubic_kernel(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys cubic-convolution kernel."""
    t = np.abs(t)
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


def _axis_weights(n_src: int, n_out: int, scale: float, a: float):
    # output centre j maps to source coordinate (j + 0.5) * scale - 0.5
    u = (np.arange(n_out) + 0.5) * scale - 0.5
    base = np.floor(u).astype(int)
    offsets = np.arange(-1, 3)
    idx = base[:, None] + offsets[None, :]
    w = cubic_kernel(u[:, None] - idx, a)
    return np.clip(idx, 0, n_src - 1), w


def resample_cubic(r: Raster, target_pixel_size: float, a: float = -0.5) -> Raster:
    """Separable cubic-convolution resampling onto a grid with the same origin.

    Source coordinates outside the grid are clamped to the edge pixels.
    """
    if not target_pixel_size > 0:
        raise RasterError("target_pixel_size must be positive")
    if r.width < 4 or r.height < 4:
        raise RasterError("raster smaller than the 4x4 cubic kernel support")
    scale = target_pixel_size / r.pixel_size
    n_w = max(1, int(round(r.width / scale)))
    n_h = max(1, int(round(r.height / scale)))
    ix, wx = _axis_weights(r.width, n_w, scale, a)
    iy, wy = _axis_weights(r.height, n_h, scale, a)
    d = r.data
    tmp = np.einsum("hjkc,jk->hjc", d[:, ix, :], wx)
    out = np.einsum("ikjc,ik->ijc", tmp[iy, :, :], wy)
    return Raster(out, target_pixel_size, r.origin, r.nodata)
