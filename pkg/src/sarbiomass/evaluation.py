"""Agreement metrics, distribution summaries and post-hoc calibration."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .raster import Raster

log = logging.getLogger(__name__)

CALIBRATION_METHODS = ("linear", "gamma", "exponential", "nth-root", "logarithmic")


@dataclass
class MetricReport:
    r: float
    rmse: float
    mae: float
    n: int
    quartile_rmse: list[float] | None = None
    summary: dict[str, float] | None = None
    extra: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def pearson_r(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    da, db = a - a.mean(), b - b.mean()
    denom = math.sqrt(float(da @ da) * float(db @ db))
    if denom == 0:
        return float("nan")
    return float(np.clip((da @ db) / denom, -1.0, 1.0))


def paired_metrics(a, b) -> MetricReport:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise ValueError("need at least two pairs")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("non-finite values in metric input")
    d = a - b
    if np.array_equal(a, b):
        r = 1.0
    else:
        r = pearson_r(a, b)
    return MetricReport(r=r, rmse=float(np.sqrt(np.mean(d * d))), mae=float(np.mean(np.abs(d))), n=int(a.size))


def quartile_edges(reference) -> np.ndarray:
    return np.quantile(np.asarray(reference, dtype=np.float64), [0.25, 0.5, 0.75], method="linear")


def quartile_rmse(reference, predicted) -> list[float]:
    """RMSE in the four bins (-inf, Q1], (Q1, Q2], (Q2, Q3], (Q3, inf) of the reference.

    Empty bins give NaN.
    """
    ref = np.asarray(reference, dtype=np.float64).ravel()
    pred = np.asarray(predicted, dtype=np.float64).ravel()
    if ref.shape != pred.shape:
        raise ValueError("reference and prediction lengths differ")
    edges = quartile_edges(ref)
    bins = np.searchsorted(edges, ref, side="left")
    out = []
    for q in range(4):
        sel = bins == q
        out.append(float(np.sqrt(np.mean((pred[sel] - ref[sel]) ** 2))) if sel.any() else float("nan"))
    return out


def quartile_counts(reference) -> list[int]:
    ref = np.asarray(reference, dtype=np.float64).ravel()
    bins = np.searchsorted(quartile_edges(ref), ref, side="left")
    return [int((bins == q).sum()) for q in range(4)]


def _valid_pairs(m1: Raster, m2: Raster, channel: int = 0):
    if m1.width != m2.width or m1.height != m2.height:
        raise ValueError("maps are not co-registered")
    mask = m1.valid_mask(channel) & m2.valid_mask(channel)
    return m1.band(channel)[mask], m2.band(channel)[mask]


def map_correlation(m1: Raster, m2: Raster) -> float:
    a, b = _valid_pairs(m1, m2)
    return pearson_r(a, b)


def map_metrics(pred: Raster, ref: Raster, quartiles: bool = True) -> MetricReport:
    p, r = _valid_pairs(pred, ref)
    rep = paired_metrics(p, r)
    if quartiles:
        rep.quartile_rmse = quartile_rmse(r, p)
    return rep


def distribution_summary(r: Raster, bins: int = 50, channel: int = 0):
    """Mean, median, min and max of valid pixels plus a histogram (edges, counts)."""
    v = r.band(channel)[r.valid_mask(channel)]
    if v.size == 0:
        raise ValueError("raster has no valid pixels")
    summary = {
        "mean": float(v.mean()),
        "median": float(np.median(v)),
        "min": float(v.min()),
        "max": float(v.max()),
    }
    counts, edges = np.histogram(v, bins=bins)
    return summary, edges, counts


def write_histogram(path, edges, counts) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_low", "bin_high", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c)])


def write_pairs(path, a, b, names=("pred", "ref")) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(names))
        for x, y in zip(np.ravel(a), np.ravel(b)):
            w.writerow([repr(float(x)), repr(float(y))])


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------

@dataclass
class CalibrationModel:
    method: str
    params: dict[str, float]
    sse: float
    converged: bool = True

    def to_json(self) -> dict:
        return asdict(self)


def _model_values(method: str, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    if method == "linear":
        return theta[0] * x + theta[1]
    if method == "gamma":
        return theta[0] * np.power(x, theta[1])
    if method == "exponential":
        return theta[0] * np.exp(theta[1] * x)
    if method == "nth-root":
        return theta[0] * np.power(x, 1.0 / theta[2]) + theta[1]
    if method == "logarithmic":
        return theta[0] * np.log(x) + theta[1]
    raise ValueError(f"unknown calibration method {method!r}")


def _jacobian(method: str, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    if method == "gamma":
        xp = np.power(x, theta[1])
        return np.column_stack([xp, theta[0] * xp * np.log(x)])
    if method == "exponential":
        e = np.exp(theta[1] * x)
        return np.column_stack([e, theta[0] * x * e])
    if method == "nth-root":
        xr = np.power(x, 1.0 / theta[2])
        return np.column_stack([xr, np.ones_like(x), -theta[0] * xr * np.log(x) / theta[2] ** 2])
    raise ValueError(method)


_PARAM_NAMES = {
    "linear": ("a", "b"),
    "gamma": ("a", "gamma"),
    "exponential": ("a", "b"),
    "nth-root": ("a", "b", "n"),
    "logarithmic": ("a", "b"),
}


def _sse(method, theta, x, z) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        r = z - _model_values(method, theta, x)
    v = float(r @ r)
    return v if math.isfinite(v) else math.inf


def _grid_start(method: str, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Best grid point over the nonlinear parameter, linear ones solved exactly."""
    best, best_sse = None, math.inf
    if method == "gamma":
        for g in np.linspace(0.05, 3.0, 60):
            basis = np.power(x, g)
            a = float(basis @ z / (basis @ basis))
            th = np.array([a, g])
            s = _sse(method, th, x, z)
            if s < best_sse:
                best, best_sse = th, s
    elif method == "exponential":
        span = max(float(np.ptp(x)), 1e-12)
        for b in np.linspace(-5.0, 5.0, 81) / span:
            with np.errstate(over="ignore"):
                basis = np.exp(b * x)
            if not np.all(np.isfinite(basis)):
                continue
            a = float(basis @ z / (basis @ basis))
            th = np.array([a, b])
            s = _sse(method, th, x, z)
            if s < best_sse:
                best, best_sse = th, s
    elif method == "nth-root":
        for n in np.linspace(0.5, 6.0, 56):
            A = np.column_stack([np.power(x, 1.0 / n), np.ones_like(x)])
            (a, b), *_ = np.linalg.lstsq(A, z, rcond=None)
            th = np.array([a, b, n])
            s = _sse(method, th, x, z)
            if s < best_sse:
                best, best_sse = th, s
    return best


def fit_calibration(pred, z, method: str, max_iter: int = 100, tol: float = 1e-10) -> CalibrationModel:
    """Least-squares fit of ``z`` as a function of ``pred``.

    Linear and logarithmic forms are solved directly. The others start from
    the best point of a coarse grid over the exponent or rate and are refined
    by damped Gauss-Newton; a fit that fails to improve on the grid keeps the
    grid point and is flagged as not converged.
    """
    if method not in CALIBRATION_METHODS:
        raise ValueError(f"unknown calibration method {method!r}; choose from {CALIBRATION_METHODS}")
    x = np.asarray(pred, dtype=np.float64).ravel()
    z = np.asarray(z, dtype=np.float64).ravel()
    if x.shape != z.shape or x.size < 2:
        raise ValueError("need two equal-length arrays with at least two values")
    if method in ("gamma", "nth-root", "logarithmic") and np.any(x <= 0):
        raise ValueError(f"{method} calibration needs strictly positive predictions")
    names = _PARAM_NAMES[method]
    if method in ("linear", "logarithmic"):
        basis = x if method == "linear" else np.log(x)
        A = np.column_stack([basis, np.ones_like(x)])
        theta, *_ = np.linalg.lstsq(A, z, rcond=None)
        return CalibrationModel(method, dict(zip(names, map(float, theta))), _sse(method, theta, x, z))

    theta = _grid_start(method, x, z)
    sse = _sse(method, theta, x, z)
    converged = False
    for _ in range(max_iter):
        J = _jacobian(method, theta, x)
        r = z - _model_values(method, theta, x)
        step, *_ = np.linalg.lstsq(J, r, rcond=None)
        t = 1.0
        while t > 1e-8:
            cand = theta + t * step
            if method == "nth-root" and cand[2] <= 0:
                t *= 0.5
                continue
            s = _sse(method, cand, x, z)
            if s <= sse:
                break
            t *= 0.5
        else:
            break
        improvement = sse - s
        theta, sse = cand, s
        if improvement <= tol * max(sse, 1.0):
            converged = True
            break
    if not converged:
        log.warning("%s calibration did not converge; keeping best point found", method)
    if method == "gamma" and theta[1] <= 0:
        raise ArithmeticError("gamma calibration produced a non-positive exponent")
    return CalibrationModel(method, dict(zip(names, map(float, theta))), float(sse), converged)


def apply_calibration(m: CalibrationModel, pred) -> np.ndarray:
    """Apply the fitted form element-wise and clamp at zero."""
    theta = np.array([m.params[k] for k in _PARAM_NAMES[m.method]])
    x = np.asarray(pred, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = _model_values(m.method, theta, x)
    return np.maximum(out, 0.0)
