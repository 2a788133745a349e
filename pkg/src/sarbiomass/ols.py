"""Least squares with stepwise forward selection and the square-root AGB model.

The AGB model regresses sqrt(AGB) on a subset of backscatter bands and
back-transforms predictions as ``(b0 + sum b_j x_j)^2 + MSE``, where MSE is
the residual mean square of the square-root fit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg

RANK_TOL = 1e-10


class RankDeficientError(np.linalg.LinAlgError):
    def __init__(self, column: str):
        super().__init__(f"design matrix is rank deficient: column '{column}' is collinear with earlier columns")
        self.column = column


@dataclass
class DesignMatrix:
    names: list[str]
    values: np.ndarray  # (n, m) candidate regressors, no intercept column
    response: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(len(self.response), -1)
        self.response = np.asarray(self.response, dtype=np.float64)
        if self.values.shape[1] != len(self.names):
            raise ValueError(f"{self.values.shape[1]} columns but {len(self.names)} names")
        if not (np.all(np.isfinite(self.values)) and np.all(np.isfinite(self.response))):
            raise ValueError("design matrix contains non-finite entries")

    @property
    def n(self) -> int:
        return len(self.response)

    def columns(self, names: Sequence[str]) -> np.ndarray:
        idx = [self.names.index(nm) for nm in names]
        return self.values[:, idx]

    def subset(self, rows) -> "DesignMatrix":
        return DesignMatrix(list(self.names), self.values[rows], self.response[rows])

    @classmethod
    def from_columns(cls, columns: Mapping[str, np.ndarray], response) -> "DesignMatrix":
        names = list(columns)
        vals = np.column_stack([np.asarray(columns[k], dtype=np.float64).ravel() for k in names]) if names else np.empty((len(response), 0))
        return cls(names, vals, np.asarray(response, dtype=np.float64).ravel())


@dataclass
class OLSFit:
    coefficients: np.ndarray  # intercept first
    rss: float
    mse: float
    df: int
    names: list[str] = field(default_factory=list)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64).reshape(-1, len(self.coefficients) - 1)
        return self.coefficients[0] + X @ self.coefficients[1:]


def fit_ols(X: np.ndarray, y: np.ndarray, names: Sequence[str] | None = None) -> OLSFit:
    """Least squares with an intercept, via column-pivoted QR.

    Columns are scaled to unit norm before the decomposition so the rank
    test does not depend on the units of each band.
    """
    y = np.asarray(y, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64).reshape(len(y), -1)
    n, m = X.shape
    names = list(names) if names is not None else [f"x{i}" for i in range(m)]
    A = np.column_stack([np.ones(n), X])
    all_names = ["(intercept)"] + names
    p = m + 1
    if n < p:
        raise RankDeficientError(all_names[n] if n < len(all_names) else all_names[-1])
    scale = np.linalg.norm(A, axis=0)
    scale[scale == 0] = 1.0
    Q, R, piv = linalg.qr(A / scale, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag[0] == 0 or np.any(diag < RANK_TOL * diag[0]):
        bad = int(np.argmax(diag < RANK_TOL * max(diag[0], 1e-300)))
        # report the latest (by original order) column among those past the rank
        rank_cols = sorted(piv[bad:])
        raise RankDeficientError(all_names[rank_cols[-1]])
    z = linalg.solve_triangular(R, Q.T @ y)
    beta = np.empty(p)
    beta[piv] = z
    beta /= scale
    resid = y - A @ beta
    rss = float(resid @ resid)
    df = n - p
    mse = rss / df if df > 0 else float("nan")
    return OLSFit(beta, rss, mse, df, names)


# ---------------------------------------------------------------------------
# F test
# ---------------------------------------------------------------------------

def _betacf(a: float, b: float, x: float, max_iter: int = 500, eps: float = 1e-16) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_regularized(a: float, b: float, x: float) -> float:
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def f_sf(F: float, d1: float, d2: float) -> float:
    """Upper tail P(F(d1, d2) > F)."""
    if F <= 0:
        return 1.0
    if math.isinf(F):
        return 0.0
    return betainc_regularized(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * F))


@dataclass(frozen=True)
class FTest:
    F: float
    p_value: float


def partial_f_test(rss_reduced: float, rss_full: float, n: int, p_full: int) -> FTest:
    """F test for adding one regressor; ``p_full`` counts the intercept."""
    df = n - p_full
    if df <= 0:
        raise ValueError(f"non-positive residual degrees of freedom ({df})")
    gain = max(rss_reduced - rss_full, 0.0)
    if rss_full <= 0.0:
        return FTest(math.inf, 0.0) if gain > 0 else FTest(0.0, 1.0)
    F = gain / (rss_full / df)
    return FTest(F, f_sf(F, 1, df))


# ---------------------------------------------------------------------------
# selection
# ---------------------------------------------------------------------------

def stepwise_forward(dm: DesignMatrix, alpha: float = 0.05, response: np.ndarray | None = None) -> list[str]:
    """Greedy forward selection by partial F; ties go to the earlier name."""
    if not dm.names:
        raise ValueError("no candidate regressors")
    y = dm.response if response is None else response
    selected: list[str] = []
    current = fit_ols(np.empty((dm.n, 0)), y)
    remaining = sorted(dm.names)
    while remaining:
        best = None
        for cand in remaining:
            cols = selected + [cand]
            if dm.n - (len(cols) + 1) < 1:
                continue
            try:
                fit = fit_ols(dm.columns(cols), y, cols)
            except RankDeficientError:
                continue
            test = partial_f_test(current.rss, fit.rss, dm.n, len(cols) + 1)
            if best is None or test.F > best[1].F:
                best = (cand, test, fit)
        if best is None or not best[1].p_value < alpha:
            break
        cand, _, fit = best
        selected.append(cand)
        remaining.remove(cand)
        current = fit
    return selected


# ---------------------------------------------------------------------------
# square-root model
# ---------------------------------------------------------------------------

@dataclass
class SqrtRegressionModel:
    intercept: float
    coefficients: dict[str, float]
    mse: float
    selected: list[str]

    def to_json(self) -> dict:
        return {
            "intercept": self.intercept,
            "coefficients": dict(self.coefficients),
            "mse": self.mse,
            "selected": list(self.selected),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SqrtRegressionModel":
        return cls(float(obj["intercept"]), {k: float(v) for k, v in obj["coefficients"].items()},
                   float(obj["mse"]), list(obj["selected"]))

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> "SqrtRegressionModel":
        return cls.from_json(json.loads(Path(path).read_text()))


def _model_from_fit(fit: OLSFit, selected: list[str]) -> SqrtRegressionModel:
    coefs = {name: float(b) for name, b in zip(selected, fit.coefficients[1:])}
    mse = fit.mse if math.isfinite(fit.mse) else 0.0
    return SqrtRegressionModel(float(fit.coefficients[0]), coefs, float(mse), list(selected))


def fit_sqrt_model(dm: DesignMatrix, alpha: float = 0.05, selected: Sequence[str] | None = None) -> SqrtRegressionModel:
    """Fit sqrt(AGB) by stepwise OLS (or on a fixed ``selected`` set)."""
    if np.any(dm.response < 0):
        raise ValueError("AGB response must be non-negative")
    root = np.sqrt(dm.response)
    cols = list(selected) if selected is not None else stepwise_forward(dm, alpha, response=root)
    fit = fit_ols(dm.columns(cols), root, cols)
    return _model_from_fit(fit, cols)


def predict_agb(m: SqrtRegressionModel, regressors: Mapping[str, np.ndarray | float]):
    """Bias-corrected back-transform ``(b0 + sum b_j x_j)^2 + MSE``."""
    missing = [name for name in m.selected if name not in regressors]
    if missing:
        raise KeyError(f"missing regressor(s): {missing}")
    lin = m.intercept
    for name in m.selected:
        lin = lin + m.coefficients[name] * np.asarray(regressors[name], dtype=np.float64)
    out = np.square(lin) + m.mse
    return float(out) if np.ndim(out) == 0 else out


def _predict_rows(m: SqrtRegressionModel, dm: DesignMatrix, rows) -> np.ndarray:
    return predict_agb(m, {nm: dm.columns([nm])[rows, 0] for nm in m.selected})


def loocv_predictions(dm: DesignMatrix, selected: Sequence[str]) -> np.ndarray:
    n = dm.n
    if n < len(selected) + 2:
        raise ValueError(f"LOOCV needs at least {len(selected) + 2} observations, got {n}")
    preds = np.empty(n)
    for i in range(n):
        keep = np.arange(n) != i
        m = fit_sqrt_model(dm.subset(keep), selected=selected)
        preds[i] = _predict_rows(m, dm, [i])[0]
    return preds


def loocv_rmse(dm: DesignMatrix, selected: Sequence[str]) -> float:
    """Leave-one-out RMSE on the arithmetic AGB scale with a fixed column set."""
    preds = loocv_predictions(dm, selected)
    return float(np.sqrt(np.mean((preds - dm.response) ** 2)))


def kfold_indices(n: int, k: int, seed: int) -> list[np.ndarray]:
    if k < 2 or k > n:
        raise ValueError(f"k must lie in [2, n={n}], got {k}")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def kfold_predictions(dm: DesignMatrix, selected: Sequence[str], k: int = 5, seed: int = 0):
    """Held-out predictions and fold index lists."""
    folds = kfold_indices(dm.n, k, seed)
    preds = np.empty(dm.n)
    for test in folds:
        train = np.setdiff1d(np.arange(dm.n), test)
        m = fit_sqrt_model(dm.subset(train), selected=selected)
        preds[test] = _predict_rows(m, dm, test)
    return preds, folds


def kfold_cv_rmse(dm: DesignMatrix, selected: Sequence[str], k: int = 5, seed: int = 0) -> float:
    """Mean of the per-fold RMSEs (arithmetic AGB scale)."""
    preds, folds = kfold_predictions(dm, selected, k, seed)
    per_fold = [np.sqrt(np.mean((preds[f] - dm.response[f]) ** 2)) for f in folds]
    return float(np.mean(per_fold))
