"""Patch grids, D4 augmentation, spatially disjoint folds and p-norm mosaicking."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .raster import Raster

log = logging.getLogger(__name__)

PATCH_SIZE = 64


@dataclass(frozen=True)
class Patch:
    col: int
    row: int
    data: np.ndarray  # (channels, size, size)

    @property
    def size(self) -> int:
        return self.data.shape[-1]

    @property
    def origin(self) -> tuple[int, int]:
        return (self.col, self.row)

    def footprint(self) -> tuple[int, int, int, int]:
        """(row0, row1, col0, col1), half-open."""
        return (self.row, self.row + self.size, self.col, self.col + self.size)


def grid_origins(width: int, height: int, size: int = PATCH_SIZE, stride: int = PATCH_SIZE) -> list[tuple[int, int]]:
    """Row-major (col, row) origins of every full window."""
    if width < size or height < size:
        return []
    rows = range(0, height - size + 1, stride)
    cols = range(0, width - size + 1, stride)
    return [(c, r) for r in rows for c in cols]


def extract_grid(r: Raster | np.ndarray, size: int = PATCH_SIZE, stride: int = PATCH_SIZE) -> list[Patch]:
    """Cut full ``size`` windows at ``stride``; trailing partial windows are dropped."""
    arr = r.data if isinstance(r, Raster) else np.asarray(r)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w, _ = arr.shape
    chw = arr.transpose(2, 0, 1)
    return [
        Patch(c, rr, np.ascontiguousarray(chw[:, rr : rr + size, c : c + size]))
        for c, rr in grid_origins(w, h, size, stride)
    ]


def augment_array(a: np.ndarray) -> list[np.ndarray]:
    """The 8 elements of D4 applied to the last two axes."""
    out = []
    for flip in (False, True):
        base = a[..., ::-1] if flip else a
        for k in range(4):
            out.append(np.ascontiguousarray(np.rot90(base, k, axes=(-2, -1))))
    return out


def augment(p: Patch) -> list[Patch]:
    return [Patch(p.col, p.row, d) for d in augment_array(p.data)]


def augment_pair(sar: np.ndarray, agb: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Apply identical D4 transforms to a SAR patch and its AGB patch."""
    return augment_array(sar), augment_array(agb)


def _overlaps(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> bool:
    return a[0] < b[1] and b[0] < a[1] and a[2] < b[3] and b[2] < a[3]


@dataclass
class Fold:
    test: list[tuple[int, int]]
    train: list[tuple[int, int]]


@dataclass
class FoldPlan:
    k: int
    size: int
    grid: list[tuple[int, int]]
    assignment: list[int]
    folds: list[Fold] = field(default_factory=list)

    def audit(self) -> None:
        """Raise if any fold's test and training footprints share a pixel."""
        seen: set[tuple[int, int]] = set()
        for i, fold in enumerate(self.folds):
            for t in fold.test:
                if t in seen:
                    raise AssertionError(f"grid patch {t} appears in more than one test fold")
                seen.add(t)
                tf = (t[1], t[1] + self.size, t[0], t[0] + self.size)
                for tr in fold.train:
                    if _overlaps(tf, (tr[1], tr[1] + self.size, tr[0], tr[0] + self.size)):
                        raise AssertionError(f"fold {i}: training patch {tr} overlaps test patch {t}")
        if seen != set(self.grid):
            raise AssertionError("test folds do not cover the patch grid")


def make_folds(
    width: int,
    height: int,
    k: int = 5,
    seed: int = 0,
    size: int = PATCH_SIZE,
    train_stride: int | None = None,
) -> FoldPlan:
    """Randomly split the non-overlapping grid into ``k`` test folds.

    Each fold trains on the half-overlapping patches whose footprint avoids
    all of that fold's test patches.
    """
    grid = grid_origins(width, height, size, size)
    if len(grid) < k:
        raise ValueError(f"{len(grid)} grid patches is fewer than k={k}")
    train_stride = train_stride or size // 2
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(grid))
    assignment = [0] * len(grid)
    for f, chunk in enumerate(np.array_split(perm, k)):
        for i in chunk:
            assignment[int(i)] = f
    overlap = grid_origins(width, height, size, train_stride)
    plan = FoldPlan(k, size, grid, assignment)
    for f in range(k):
        test = [g for g, a in zip(grid, assignment) if a == f]
        test_fp = [(t[1], t[1] + size, t[0], t[0] + size) for t in test]
        train = [
            o for o in overlap
            if not any(_overlaps((o[1], o[1] + size, o[0], o[0] + size), fp) for fp in test_fp)
        ]
        plan.folds.append(Fold(test, train))
    return plan


def border_distance(size: int) -> np.ndarray:
    """Distance in pixels from each pixel to the nearest patch border (0 on the edge)."""
    i = np.arange(size)
    d1 = np.minimum(i, size - 1 - i)
    return np.minimum(d1[:, None], d1[None, :]).astype(np.float64)


def mosaic_pnorm(
    patches: list[Patch],
    width: int,
    height: int,
    p: float = 5.0,
    template: Raster | None = None,
) -> Raster | np.ndarray:
    """Blend overlapping patches as a weighted average with weights (1 + d)^p.

    ``d`` is a pixel's distance to its patch's nearest border, so patch
    interiors dominate. Uncovered pixels get NaN and are counted in a warning.
    Returns a Raster on ``template``'s grid when given, else an (H, W, C) array.
    """
    if not patches:
        raise ValueError("no patches to mosaic")
    size = patches[0].size
    channels = patches[0].data.shape[0]
    weight = (1.0 + border_distance(size)) ** p
    num = np.zeros((channels, height, width))
    den = np.zeros((height, width))
    count = np.zeros((height, width), dtype=int)
    last = np.zeros((channels, height, width))
    for pt in patches:
        r0, r1, c0, c1 = pt.footprint()
        if r1 > height or c1 > width or r0 < 0 or c0 < 0:
            raise ValueError(f"patch at {pt.origin} falls outside the {width}x{height} mosaic")
        num[:, r0:r1, c0:c1] += weight * pt.data
        den[r0:r1, c0:c1] += weight
        count[r0:r1, c0:c1] += 1
        last[:, r0:r1, c0:c1] = pt.data
    covered = den > 0
    out = np.full((channels, height, width), np.nan)
    out[:, covered] = num[:, covered] / den[covered]
    single = count == 1
    out[:, single] = last[:, single]
    uncovered = int((~covered).sum())
    if uncovered:
        log.warning("mosaic: %d pixel(s) not covered by any patch set to nodata", uncovered)
    arr = out.transpose(1, 2, 0)
    if template is not None:
        return Raster(arr, template.pixel_size, template.origin)
    return arr
