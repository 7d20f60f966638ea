"""OHLCV ingestion, cleaning, MinMax scaling, sliding windows and patching."""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

FEATURES = ("Open", "High", "Low", "Close", "Adj Close", "Volume")
HEADER = ("Date",) + FEATURES
CLOSE = FEATURES.index("Close")


class DataFormatError(ValueError):
    """CSV header or contents do not follow the declared format."""


class EmptyInputError(ValueError):
    pass


class ImputationError(ValueError):
    pass


class InsufficientDataError(ValueError):
    pass


class SplitError(ValueError):
    pass


class DivisibilityError(ValueError):
    pass


@dataclass(frozen=True)
class PriceSeries:
    """Dated rows of the six features; NaN marks a missing cell."""

    ticker: str
    dates: tuple[dt.date, ...]
    features: np.ndarray  # (L, 6)

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape != (len(self.dates), len(FEATURES)):
            raise DataFormatError(
                f"features must be {len(self.dates)}x{len(FEATURES)}, got {feats.shape}")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise DataFormatError("dates must be strictly increasing")
        feats.flags.writeable = False
        object.__setattr__(self, "features", feats)

    def __len__(self) -> int:
        return len(self.dates)

    def column(self, name: str) -> np.ndarray:
        return self.features[:, FEATURES.index(name)]

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.features)


def _parse_float(cell: str) -> float:
    cell = cell.strip()
    if not cell:
        return math.nan
    try:
        value = float(cell)
    except ValueError:
        return math.nan
    return value if math.isfinite(value) else math.nan


def load_ohlcv(path, ticker: str | None = None) -> PriceSeries:
    """Read a ``Date,Open,High,Low,Close,Adj Close,Volume`` CSV.

    Rows are sorted by date; duplicate dates are rejected. Blank or unparseable
    numeric cells become NaN.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = tuple(h.strip() for h in next(reader))
        except StopIteration:
            raise EmptyInputError(f"{path}: file is empty") from None
        if header != HEADER:
            missing = [c for c in HEADER if c not in header]
            detail = f"; missing {','.join(missing)}" if missing else ""
            raise DataFormatError(
                f"{path}: header must be {','.join(HEADER)}{detail}, got {','.join(header)}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(HEADER):
                raise DataFormatError(f"{path}:{lineno}: expected {len(HEADER)} cells, got {len(rec)}")
            try:
                day = dt.date.fromisoformat(rec[0].strip())
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: bad date {rec[0]!r}") from None
            rows.append((day, [_parse_float(c) for c in rec[1:]]))
    if not rows:
        raise EmptyInputError(f"{path}: no data rows")
    rows.sort(key=lambda r: r[0])
    for (a, _), (b, _) in zip(rows, rows[1:]):
        if a == b:
            raise DataFormatError(f"{path}: duplicate date {a.isoformat()}")
    return PriceSeries(
        ticker=ticker or path.stem,
        dates=tuple(r[0] for r in rows),
        features=np.array([r[1] for r in rows], dtype=np.float64),
    )


def write_ohlcv(series: PriceSeries, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for day, row in zip(series.dates, series.features):
            w.writerow([day.isoformat()] + ["" if math.isnan(v) else repr(float(v)) for v in row])


def forward_fill(s: PriceSeries) -> PriceSeries:
    feats = np.array(s.features)
    for j, name in enumerate(FEATURES):
        col = feats[:, j]
        if math.isnan(col[0]):
            raise ImputationError(f"no predecessor for {name} at row 0")
        for i in range(1, len(col)):
            if math.isnan(col[i]):
                col[i] = col[i - 1]
    return replace(s, features=feats)


@dataclass(frozen=True)
class ScalerParams:
    minimum: np.ndarray
    maximum: np.ndarray

    @property
    def span(self) -> np.ndarray:
        return self.maximum - self.minimum


def fit_scaler(rows) -> ScalerParams:
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if rows.size == 0 or rows.shape[0] == 0:
        raise EmptyInputError("cannot fit a scaler on zero rows")
    return ScalerParams(rows.min(axis=0), rows.max(axis=0))


def transform(rows, scaler: ScalerParams) -> np.ndarray:
    """Affine map sending each fitted range to [0, 1]; constant features go to 0."""
    rows = np.asarray(rows, dtype=np.float64)
    span = scaler.span
    safe = np.where(span > 0, span, 1.0)
    out = (rows - scaler.minimum) / safe
    return np.where(span > 0, out, 0.0)


def inverse(v, scaler: ScalerParams, feature: int = CLOSE):
    """Map normalized values of one feature back to its original scale."""
    return np.asarray(v, dtype=np.float64) * scaler.span[feature] + scaler.minimum[feature]


def inverse_rows(rows, scaler: ScalerParams) -> np.ndarray:
    return np.asarray(rows, dtype=np.float64) * scaler.span + scaler.minimum


@dataclass(frozen=True)
class WindowSample:
    input: np.ndarray  # (T, 6)
    target: float
    target_date: dt.date
    prev_close: float


def make_windows(s: PriceSeries, T: int) -> list[WindowSample]:
    """Stride-1 windows: sample ``i`` sees rows ``[i, i+T)`` and targets Close at ``i+T``."""
    L = len(s)
    if T < 1:
        raise ValueError(f"window length must be positive, got {T}")
    if L <= T:
        raise InsufficientDataError(f"series length L={L} too short for window T={T}")
    feats = s.features
    return [
        WindowSample(
            input=feats[i:i + T].copy(),
            target=float(feats[i + T, CLOSE]),
            target_date=s.dates[i + T],
            prev_close=float(feats[i + T - 1, CLOSE]),
        )
        for i in range(L - T)
    ]


@dataclass(frozen=True)
class DatasetSplit:
    train: list[WindowSample]
    test: list[WindowSample]
    scaler: ScalerParams | None = None
    window: int = field(default=0)


def split_point(n: int, ratio: float) -> int:
    if not 0 < ratio < 1:
        raise SplitError(f"split ratio must lie in (0, 1), got {ratio}")
    if n < 2:
        raise SplitError(f"need at least 2 samples to split, got {n}")
    k = math.floor(ratio * n)
    if k == 0 or k == n:
        raise SplitError(f"ratio {ratio} on {n} samples leaves an empty side ({k}/{n - k})")
    return k


def chrono_split(samples, ratio: float, scaler: ScalerParams | None = None) -> DatasetSplit:
    """First ``floor(ratio*N)`` samples train, the rest test, order preserved."""
    samples = list(samples)
    k = split_point(len(samples), ratio)
    window = samples[0].input.shape[0]
    return DatasetSplit(train=samples[:k], test=samples[k:], scaler=scaler, window=window)


def prepare_dataset(series: PriceSeries, T: int, ratio: float) -> DatasetSplit:
    """Clean, scale on the training date range only, window and split.

    The training range is every row seen by a training window, including the
    last training target.
    """
    clean = forward_fill(series)
    n = len(clean) - T
    if n < 1:
        raise InsufficientDataError(f"series length L={len(clean)} too short for window T={T}")
    k = split_point(n, ratio)
    scaler = fit_scaler(clean.features[:k + T])
    normalized = replace(clean, features=transform(clean.features, scaler))
    return chrono_split(make_windows(normalized, T), ratio, scaler)


def stack_inputs(samples) -> np.ndarray:
    return np.stack([s.input for s in samples])


def stack_targets(samples) -> np.ndarray:
    return np.array([s.target for s in samples], dtype=np.float64)


def patchify(x, P: int) -> np.ndarray:
    """Split ``(..., T, d)`` into ``P`` patches of ``T/P`` consecutive rows each.

    Each patch is flattened row-major, giving ``(..., P, T/P*d)``.
    """
    x = np.asarray(x)
    T, d = x.shape[-2:]
    if P < 1 or T % P:
        raise DivisibilityError(f"{P} does not divide {T}")
    return x.reshape(x.shape[:-2] + (P, (T // P) * d))


def unpatchify(patches, d: int) -> np.ndarray:
    patches = np.asarray(patches)
    P, width = patches.shape[-2:]
    return patches.reshape(patches.shape[:-2] + (P * width // d, d))
