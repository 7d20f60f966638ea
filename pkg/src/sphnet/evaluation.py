"""Price-scale regression metrics, directional classification, baselines and
the smoothing/correlation quantities used for plots."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .dataio import CLOSE, ScalerParams, inverse

UP, DOWN = 1, 0


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class RegressionMetrics:
    mse: float
    r2: float
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ClassificationMetrics:
    precision: float
    accuracy: float
    recall: float
    precision_defined: bool = True
    accuracy_defined: bool = True
    recall_defined: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


def _pair(y, yhat, min_len: int = 1):
    y = np.asarray(y, dtype=np.float64).ravel()
    yhat = np.asarray(yhat, dtype=np.float64).ravel()
    if y.shape != yhat.shape:
        raise MetricError(f"length mismatch: {y.size} vs {yhat.size}")
    if y.size < min_len:
        raise MetricError(f"need at least {min_len} values, got {y.size}")
    return y, yhat


def mean_squared_error(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    d = y - yhat
    return float(np.mean(d * d))


def r2_score(y, yhat) -> float:
    y, yhat = _pair(y, yhat, min_len=2)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise MetricError("R² undefined: observed values have zero variance")
    return 1.0 - float(np.sum((y - yhat) ** 2)) / ss_tot


def regression_metrics(y, yhat) -> RegressionMetrics:
    y, yhat = _pair(y, yhat, min_len=2)
    return RegressionMetrics(mse=mean_squared_error(y, yhat), r2=r2_score(y, yhat), n=int(y.size))


def direction_labels(actual, predicted, prev):
    """UP where the close rises strictly above ``prev``; a flat move counts as DOWN."""
    actual = np.asarray(actual, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    prev = np.asarray(prev, dtype=np.float64)
    if not (actual.shape == predicted.shape == prev.shape):
        raise MetricError(f"length mismatch: actual {actual.shape}, predicted {predicted.shape}, "
                          f"prev {prev.shape}")
    return (np.where(actual - prev > 0, UP, DOWN),
            np.where(predicted - prev > 0, UP, DOWN))


def confusion(actual_dirs, predicted_dirs, positive: int = UP) -> ConfusionCounts:
    a = np.asarray(actual_dirs) == positive
    p = np.asarray(predicted_dirs) == positive
    if a.shape != p.shape:
        raise MetricError(f"length mismatch: {a.shape} vs {p.shape}")
    return ConfusionCounts(tp=int(np.sum(a & p)), tn=int(np.sum(~a & ~p)),
                           fp=int(np.sum(~a & p)), fn=int(np.sum(a & ~p)))


def _ratio(num: int, den: int) -> tuple[float, bool]:
    return (num / den, True) if den else (0.0, False)


def classification_metrics(c: ConfusionCounts) -> ClassificationMetrics:
    if c.total < 1:
        raise MetricError("classification metrics need at least one evaluated step")
    precision, p_ok = _ratio(c.tp, c.tp + c.fp)
    recall, r_ok = _ratio(c.tp, c.tp + c.fn)
    return ClassificationMetrics(precision=precision, accuracy=(c.tp + c.tn) / c.total,
                                 recall=recall, precision_defined=p_ok, recall_defined=r_ok)


def directional_metrics(actual, predicted, prev):
    counts = confusion(*direction_labels(actual, predicted, prev))
    return counts, classification_metrics(counts)


def sma(series, window: int = 20) -> np.ndarray:
    x = np.asarray(series, dtype=np.float64)
    if not 1 <= window <= x.size:
        raise MetricError(f"SMA window {window} outside [1, {x.size}]")
    return np.lib.stride_tricks.sliding_window_view(x, window).mean(axis=-1)


def ema_alpha(span: int = 20) -> float:
    if span < 1:
        raise MetricError(f"EMA span must be >= 1, got {span}")
    return 2.0 / (span + 1)


def ema(series, alpha: float | None = None) -> np.ndarray:
    x = np.asarray(series, dtype=np.float64)
    alpha = ema_alpha() if alpha is None else alpha
    if not 0 < alpha <= 1:
        raise MetricError(f"EMA alpha must lie in (0, 1], got {alpha}")
    if x.size == 0:
        raise MetricError("EMA of an empty series")
    out = np.empty_like(x)
    out[0] = x[0]
    for t in range(1, x.size):
        out[t] = alpha * x[t] + (1 - alpha) * out[t - 1]
    return out


def pearson_matrix(features):
    """Pairwise Pearson correlations of the columns.

    Returns ``(matrix, degenerate)`` where ``degenerate[j]`` marks a constant
    column; such a column correlates 0 with the others and 1 with itself.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise MetricError(f"need at least 2 rows, got shape {x.shape}")
    xc = x - x.mean(axis=0)
    norms = np.sqrt(np.sum(xc * xc, axis=0))
    degenerate = norms == 0
    safe = np.where(degenerate, 1.0, norms)
    u = xc / safe
    m = u.T @ u
    m = np.clip((m + m.T) / 2, -1.0, 1.0)
    m[degenerate, :] = 0.0
    m[:, degenerate] = 0.0
    np.fill_diagonal(m, 1.0)
    return m, degenerate


def persistence_baseline(samples, scaler: ScalerParams | None = None) -> np.ndarray:
    """Predict each next close as the window's last close, in price units if ``scaler`` is given."""
    if not samples:
        raise MetricError("persistence baseline needs at least one sample")
    prev = np.array([s.prev_close for s in samples], dtype=np.float64)
    return inverse(prev, scaler, CLOSE) if scaler is not None else prev
