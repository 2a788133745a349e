"""Circular field plots and area-weighted extraction of raster values."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .raster import Raster

PLOT_HEADER = ["plot_id", "center_x_m", "center_y_m", "radius_m", "agb_mg_ha"]
AGB_CEILING = 500.0


class PlotError(ValueError):
    pass


@dataclass(frozen=True)
class PlotRecord:
    id: str
    centre: tuple[float, float]
    radius: float = 15.0
    agb: float = 0.0

    def __post_init__(self):
        if not self.radius > 0:
            raise PlotError(f"plot {self.id}: radius must be positive")
        if not (0.0 <= self.agb <= AGB_CEILING):
            raise PlotError(f"plot {self.id}: AGB {self.agb} outside [0, {AGB_CEILING}]")

    @property
    def area(self) -> float:
        return math.pi * self.radius**2


def load_plots(path, ceiling: float = AGB_CEILING) -> list[PlotRecord]:
    records = []
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return records
        if [h.strip() for h in header] != PLOT_HEADER:
            raise PlotError(f"unexpected plot CSV header {header}, expected {PLOT_HEADER}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(PLOT_HEADER):
                raise PlotError(f"line {lineno}: expected {len(PLOT_HEADER)} columns, got {len(row)}")
            try:
                x, y, rad, agb = (float(v) for v in row[1:])
            except ValueError as exc:
                raise PlotError(f"line {lineno}: non-numeric field ({exc})") from exc
            if agb < 0:
                raise PlotError(f"line {lineno}: negative AGB {agb}")
            if agb > ceiling:
                raise PlotError(f"line {lineno}: AGB {agb} above ceiling {ceiling}")
            records.append(PlotRecord(row[0].strip(), (x, y), rad, agb))
    return records


def save_plots(plots: list[PlotRecord], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PLOT_HEADER)
        for p in plots:
            w.writerow([p.id, repr(p.centre[0]), repr(p.centre[1]), repr(p.radius), repr(p.agb)])


def pixel_coverage(r: Raster, centre, radius: float, subsamples: int = 32):
    """Rows, cols and covered area (m^2) of every raster pixel the circle touches.

    Each candidate pixel is split into ``subsamples x subsamples`` cells; a
    cell counts when its centre lies inside the circle.
    """
    ps = r.pixel_size
    x0, y0 = r.origin
    cx, cy = centre
    c_lo = max(int(math.floor((cx - radius - x0) / ps)), 0)
    c_hi = min(int(math.floor((cx + radius - x0) / ps)), r.width - 1)
    r_lo = max(int(math.floor((y0 - (cy + radius)) / ps)), 0)
    r_hi = min(int(math.floor((y0 - (cy - radius)) / ps)), r.height - 1)
    if c_lo > c_hi or r_lo > r_hi:
        return np.empty(0, int), np.empty(0, int), np.empty(0)
    rows = np.arange(r_lo, r_hi + 1)
    cols = np.arange(c_lo, c_hi + 1)
    frac = (np.arange(subsamples) + 0.5) / subsamples
    # sub-cell centre coordinates, shape (n_rows, s) and (n_cols, s)
    xs = x0 + (cols[:, None] + frac[None, :]) * ps
    ys = y0 - (rows[:, None] + frac[None, :]) * ps
    dx2 = (xs - cx) ** 2
    dy2 = (ys - cy) ** 2
    inside = dy2[:, None, :, None] + dx2[None, :, None, :] <= radius * radius
    counts = inside.sum(axis=(2, 3))
    cell_area = (ps / subsamples) ** 2
    rr, cc = np.nonzero(counts)
    return rows[rr], cols[cc], counts[rr, cc] * cell_area


def area_weighted_mean(r: Raster, p: PlotRecord, channel: int = 0, subsamples: int = 32) -> float:
    rows, cols, area = pixel_coverage(r, p.centre, p.radius, subsamples)
    if rows.size == 0:
        raise PlotError(f"plot {p.id} lies wholly outside the raster")
    values = r.data[rows, cols, channel]
    valid = r.valid_mask(channel)[rows, cols]
    if not valid.any():
        raise PlotError(f"plot {p.id}: all intersecting pixels are nodata")
    a = area[valid]
    return float(np.sum(a * values[valid]) / np.sum(a))


def extract_plots(r: Raster, plots: list[PlotRecord], channel: int = 0, subsamples: int = 32) -> np.ndarray:
    return np.array([area_weighted_mean(r, p, channel, subsamples) for p in plots])


def write_extraction(path, plots: list[PlotRecord], values: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["plot_id", "weighted_value"])
        for p, v in zip(plots, values):
            w.writerow([p.id, repr(float(v))])
