"""Performance measures reported for each trained network.

All functions take plain arrays. Matrices are exemplars x outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np


class UndefinedMetricError(ValueError):
    """The metric has no finite value for this input (zero denominator)."""


def _pair(desired, output):
    d = np.asarray(desired, dtype=float)
    y = np.asarray(output, dtype=float)
    if d.ndim == 1:
        d = d[:, None]
    if y.ndim == 1:
        y = y[:, None]
    if d.shape != y.shape:
        raise ValueError(f"shape mismatch: {d.shape} vs {y.shape}")
    if d.size == 0:
        raise ValueError("empty input")
    return d, y


def mse(desired, output) -> float:
    d, y = _pair(desired, output)
    return float(np.sum((d - y) ** 2) / d.size)


def nmse(desired, output) -> float:
    """MSE scaled by the spread of the desired signal.

    ``P * N * MSE / sum_j (sum_i d_ij^2 - (sum_i d_ij)^2 / N)``
    """
    d, y = _pair(desired, output)
    n, p = d.shape
    denom = float(np.sum(np.sum(d**2, axis=0) - np.sum(d, axis=0) ** 2 / n))
    if denom <= 0.0:
        raise UndefinedMetricError("desired signal has no variance; NMSE undefined")
    return p * (n * mse(d, y)) / denom


def mae_paper(actual, forecast) -> float:
    """Signed mean relative error ``mean((A - F) / A)``.

    No absolute value is taken, so over- and under-forecasts cancel. Use
    :func:`mae_abs` for the usual magnitude.
    """
    a = np.ravel(np.asarray(actual, dtype=float))
    f = np.ravel(np.asarray(forecast, dtype=float))
    if a.shape != f.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {f.shape}")
    if a.size == 0:
        raise ValueError("empty input")
    if np.any(a == 0):
        raise UndefinedMetricError("actual value of 0 makes the relative error undefined")
    with np.errstate(over="ignore"):
        return float(np.mean((a - f) / a))


def mae_abs(actual, forecast) -> float:
    a = np.ravel(np.asarray(actual, dtype=float))
    f = np.ravel(np.asarray(forecast, dtype=float))
    if a.shape != f.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {f.shape}")
    if a.size == 0:
        raise ValueError("empty input")
    return float(np.mean(np.abs(a - f)))


def pearson_r(x, y) -> float:
    x = np.ravel(np.asarray(x, dtype=float))
    y = np.ravel(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.size < 2:
        raise ValueError("need at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    # r ignores positive rescaling; unit max-norm keeps the sums in range
    mx, my = float(np.max(np.abs(dx))), float(np.max(np.abs(dy)))
    if mx == 0.0 or my == 0.0:
        raise UndefinedMetricError("zero variance; correlation undefined")
    dx, dy = dx / mx, dy / my
    denom = math.sqrt(float(dx @ dx) * float(dy @ dy))
    r = float(dx @ dy) / denom
    return min(1.0, max(-1.0, r))


def trend_accuracy(desired, actual) -> tuple[np.ndarray, float]:
    """Per-item agreement ``100 * min(d, a) / max(d, a)`` and its mean."""
    d = np.ravel(np.asarray(desired, dtype=float))
    a = np.ravel(np.asarray(actual, dtype=float))
    if d.shape != a.shape:
        raise ValueError(f"shape mismatch: {d.shape} vs {a.shape}")
    if d.size == 0:
        raise ValueError("empty input")
    if np.any(d <= 0) or np.any(a <= 0) or not (np.all(np.isfinite(d)) and np.all(np.isfinite(a))):
        raise ValueError("trend accuracy needs finite positive values")
    per = 100.0 * np.minimum(d, a) / np.maximum(d, a)
    return per, float(per.mean())


@dataclass
class EvalReport:
    """Metric bundle for one evaluation split. Undefined metrics are NaN."""

    mse: float
    nmse: float
    mae_paper: float
    mae_abs: float
    min_abs_err: float
    max_abs_err: float
    r_per_output: list[float]
    r_mean: float
    n_exemplars: int
    n_outputs: int

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        return cls(**data)


def _or_nan(fn, *args) -> float:
    try:
        return fn(*args)
    except UndefinedMetricError:
        return float("nan")


def evaluate(desired, output) -> EvalReport:
    d, y = _pair(desired, output)
    err = np.abs(d - y)
    r = [_or_nan(pearson_r, d[:, j], y[:, j]) if d.shape[0] >= 2 else float("nan")
         for j in range(d.shape[1])]
    finite_r = [v for v in r if not math.isnan(v)]
    return EvalReport(
        mse=mse(d, y),
        nmse=_or_nan(nmse, d, y),
        mae_paper=_or_nan(mae_paper, d, y),
        mae_abs=mae_abs(d, y),
        min_abs_err=float(err.min()),
        max_abs_err=float(err.max()),
        r_per_output=r,
        r_mean=float(np.mean(finite_r)) if finite_r else float("nan"),
        n_exemplars=d.shape[0],
        n_outputs=d.shape[1],
    )
