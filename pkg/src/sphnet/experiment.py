"""End-to-end experiments: synthetic fixtures, single runs, ablation sweeps
and plot-ready output files."""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace, asdict
from pathlib import Path

import numpy as np

from . import dataio
from .dataio import CLOSE, FEATURES, DatasetSplit, PriceSeries, inverse, stack_inputs
from .evaluation import (ema, ema_alpha, directional_metrics, pearson_matrix,
                         persistence_baseline, regression_metrics, sma)
from .model import ConfigError, ModelConfig, param_count, predict
from .train import TrainConfig, save_checkpoint, train

log = logging.getLogger(__name__)

REGIMES = ("linear-trend", "sinusoid-plus-trend", "random-walk")
MIN_SYNTHETIC_LENGTH = 64
REPORT_VERSION = 1

SINUSOID = {"drift": 0.02, "amplitude": 10.0, "period": 40.0, "noise": 0.3}
INTRADAY = 0.002
VOLUME = {"shock": 0.3, "persistence": 0.0}


# ---------------------------------------------------------------- synthetic data

def _business_days(n: int, start: dt.date = dt.date(2010, 1, 4)) -> list[dt.date]:
    days, d = [], start
    while len(days) < n:
        if d.weekday() < 5:
            days.append(d)
        d += dt.timedelta(days=1)
    return days


def synthetic_series(seed: int, length: int, regime: str) -> PriceSeries:
    """Deterministic OHLCV series with Adj Close equal to Close.

    ``linear-trend`` is noiseless, every column affine in time with a
    strictly increasing close;
    ``sinusoid-plus-trend`` adds a 40-day cycle and small noise to a slow
    drift; ``random-walk`` is a geometric walk.
    """
    if length < MIN_SYNTHETIC_LENGTH:
        raise ConfigError(f"synthetic length must be >= {MIN_SYNTHETIC_LENGTH}, got {length}")
    if regime not in REGIMES:
        raise ConfigError(f"regime must be one of {REGIMES}, got {regime!r}")
    rng = np.random.default_rng(seed)
    t = np.arange(length, dtype=np.float64)
    if regime == "linear-trend":
        slope = 0.25
        close = 50.0 + slope * t
        open_ = close - slope / 2
        high = close + slope / 4
        low = open_ - slope / 4
        volume = 1e6 + 1e3 * t
    else:
        if regime == "sinusoid-plus-trend":
            close = 100.0 + SINUSOID["drift"] * t \
                + SINUSOID["amplitude"] * np.sin(2 * np.pi * t / SINUSOID["period"]) \
                + rng.normal(0.0, SINUSOID["noise"], length)
        else:
            close = 100.0 * np.exp(np.cumsum(rng.normal(0.0, 0.01, length)))
        close = np.round(close, 4)
        scale = INTRADAY * close
        prev = np.concatenate([[close[0]], close[:-1]])
        open_ = np.round(prev + rng.normal(0.0, 1.0, length) * scale, 4)
        high = np.round(np.maximum(open_, close) + np.abs(rng.normal(0.0, 1.0, length)) * scale, 4)
        low = np.round(np.minimum(open_, close) - np.abs(rng.normal(0.0, 1.0, length)) * scale, 4)
        # log-volume follows an AR(1) process (white noise at persistence 0)
        shocks = rng.normal(0.0, VOLUME["shock"], length)
        logv = np.zeros(length)
        for i in range(1, length):
            logv[i] = VOLUME["persistence"] * logv[i - 1] + shocks[i]
        volume = np.round(1e6 * np.exp(logv))
    feats = np.column_stack([open_, high, low, close, close, volume])
    return PriceSeries(ticker=f"synthetic-{regime}-{seed}", dates=tuple(_business_days(length)),
                       features=feats)


def gen_synthetic(seed: int, length: int, regime: str, path) -> Path:
    """Write a synthetic fixture CSV and return its path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dataio.write_ohlcv(synthetic_series(seed, length, regime), path)
    return path


# ---------------------------------------------------------------- configuration

@dataclass(frozen=True)
class SyntheticSpec:
    regime: str = "sinusoid-plus-trend"
    length: int = 600
    seed: int = 0


@dataclass(frozen=True)
class EmitFlags:
    history: bool = True
    predictions: bool = True
    correlations: bool = True
    moving_averages: bool = True
    checkpoint: bool = True


PROFILES = {
    "paper": (ModelConfig(), TrainConfig()),
    "desk": (ModelConfig(d_model=32, vit_layers=2, trf_layers=2, heads=8, ffn_dim=128),
             TrainConfig(learning_rate=3e-4, batch_size=4, epochs=30)),
}


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig = field(default_factory=lambda: PROFILES["desk"][0])
    train: TrainConfig = field(default_factory=lambda: PROFILES["desk"][1])
    data: str | None = None
    synthetic: SyntheticSpec | None = None
    split_ratio: float = 0.7
    out_dir: str | None = None
    emit: EmitFlags = field(default_factory=EmitFlags)
    sma_window: int = 20
    ema_span: int = 20

    def validate(self) -> "ExperimentConfig":
        self.model.validate()
        try:
            self.train.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if (self.data is None) == (self.synthetic is None):
            raise ConfigError("exactly one of 'data' and 'synthetic' must be given")
        if not 0 < self.split_ratio < 1:
            raise ConfigError(f"split_ratio must lie in (0, 1), got {self.split_ratio}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict, profile: str | None = None) -> "ExperimentConfig":
        d = dict(d)
        profile = profile or d.pop("profile", None) or "desk"
        d.pop("profile", None)
        if profile not in PROFILES:
            raise ConfigError(f"profile must be one of {sorted(PROFILES)}, got {profile!r}")
        base_model, base_train = PROFILES[profile]
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown experiment config fields: {sorted(unknown)}")
        try:
            model = replace(base_model, **d.pop("model", {}))
            train_cfg = replace(base_train, **d.pop("train", {}))
            synthetic = d.pop("synthetic", None)
            emit = EmitFlags(**d.pop("emit", {}))
        except TypeError as e:
            raise ConfigError(str(e)) from None
        return cls(model=model, train=train_cfg, emit=emit,
                   synthetic=SyntheticSpec(**synthetic) if synthetic is not None else None,
                   **d).validate()

    @classmethod
    def from_json(cls, path, profile: str | None = None) -> "ExperimentConfig":
        with Path(path).open(encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh), profile)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, model=replace(self.model, seed=seed),
                       train=replace(self.train, shuffle_seed=seed))


# ---------------------------------------------------------------- runs

@dataclass
class RunArtifacts:
    """Arrays behind the plot files; not part of report.json."""

    series: PriceSeries
    test_dates: list[dt.date]
    actual: np.ndarray
    predicted: np.ndarray
    baseline: np.ndarray
    params: dict


@dataclass
class ExperimentReport:
    dataset: dict
    config: dict
    regression: dict
    classification: dict
    confusion: dict
    baseline: dict
    history: dict
    seconds: float = 0.0
    artifacts: RunArtifacts | None = None

    def to_dict(self) -> dict:
        return {"version": REPORT_VERSION, "dataset": self.dataset, "config": self.config,
                "regression": self.regression, "classification": self.classification,
                "confusion": self.confusion, "baseline": self.baseline, "history": self.history}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def load_dataset(cfg: ExperimentConfig):
    """Return the raw series and a JSON-ready description of where it came from."""
    if cfg.synthetic is not None:
        s = cfg.synthetic
        series = synthetic_series(s.seed, s.length, s.regime)
        source = {"synthetic": asdict(s)}
    else:
        path = Path(cfg.data)
        series = dataio.load_ohlcv(path)
        source = {"path": cfg.data, "sha256": hashlib.sha256(path.read_bytes()).hexdigest()}
    return series, source


def _metrics_block(actual, predicted, prev):
    counts, cls = directional_metrics(actual, predicted, prev)
    return regression_metrics(actual, predicted).to_dict(), cls.to_dict(), counts.to_dict()


def run_on_split(cfg: ExperimentConfig, series: PriceSeries, split: DatasetSplit,
                 source: dict) -> ExperimentReport:
    """Train and evaluate on an already prepared dataset."""
    start = time.perf_counter()
    params, history = train(cfg.model, cfg.train, split)
    scaler = split.scaler
    test = split.test
    actual = inverse([s.target for s in test], scaler, CLOSE)
    prev = inverse([s.prev_close for s in test], scaler, CLOSE)
    predicted = inverse(predict(cfg.model, params, stack_inputs(test)), scaler, CLOSE)
    baseline = persistence_baseline(test, scaler)

    regression, classification, counts = _metrics_block(actual, predicted, prev)
    b_reg, b_cls, b_counts = _metrics_block(actual, baseline, prev)
    report = ExperimentReport(
        dataset={**source, "ticker": series.ticker, "rows": len(series),
                 "first_date": series.dates[0].isoformat(), "last_date": series.dates[-1].isoformat(),
                 "train_samples": len(split.train), "test_samples": len(test),
                 "scaler_fit": "train", "parameters": param_count(cfg.model)},
        config={"model": cfg.model.to_dict(), "train": cfg.train.to_dict(),
                "split_ratio": cfg.split_ratio},
        regression=regression, classification=classification, confusion=counts,
        baseline={"name": "persistence", "regression": b_reg, "classification": b_cls,
                  "confusion": b_counts},
        history={"train_loss": history.train_loss, "test_mse": history.test_mse},
    )
    report.seconds = time.perf_counter() - start
    report.artifacts = RunArtifacts(series=series, test_dates=[s.target_date for s in test],
                                    actual=actual, predicted=predicted, baseline=baseline,
                                    params=params)
    return report


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Load, clean, scale, window, split, train, evaluate, and emit files if ``out_dir`` is set."""
    cfg.validate()
    series, source = load_dataset(cfg)
    split = dataio.prepare_dataset(series, cfg.model.T, cfg.split_ratio)
    report = run_on_split(cfg, series, split, source)
    if cfg.out_dir is not None:
        emit_plot_data(report, split, cfg.out_dir, cfg)
    return report


# ---------------------------------------------------------------- plot data

def _fmt(v) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def emit_plot_data(report: ExperimentReport, split: DatasetSplit, out_dir,
                   cfg: ExperimentConfig | None = None) -> list[Path]:
    """Write report.json plus the requested CSVs (full float precision) into ``out_dir``."""
    emit = cfg.emit if cfg is not None else EmitFlags()
    sma_window = cfg.sma_window if cfg is not None else 20
    ema_span = cfg.ema_span if cfg is not None else 20
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    art = report.artifacts
    written = []

    path = out / "report.json"
    path.write_text(report.to_json(), encoding="utf-8")
    written.append(path)
    (out / "timing.json").write_text(json.dumps({"seconds": report.seconds}) + "\n")

    if emit.predictions:
        path = out / "predictions.csv"
        dates = [s.target_date for s in split.test]
        _write_csv(path, ("date", "actual", "predicted", "baseline"),
                   ([d.isoformat(), _fmt(a), _fmt(p), _fmt(b)]
                    for d, a, p, b in zip(dates, art.actual, art.predicted, art.baseline)))
        written.append(path)
    if emit.history:
        path = out / "history.csv"
        h = report.history
        _write_csv(path, ("epoch", "train_loss", "test_mse"),
                   ([i + 1, _fmt(a), _fmt(b)] for i, (a, b) in
                    enumerate(zip(h["train_loss"], h["test_mse"]))))
        written.append(path)
    clean = dataio.forward_fill(art.series)
    if emit.correlations:
        path = out / "correlation.csv"
        m, _ = pearson_matrix(clean.features)
        _write_csv(path, ("feature",) + FEATURES,
                   ([name] + [_fmt(v) for v in row] for name, row in zip(FEATURES, m)))
        written.append(path)
    if emit.moving_averages:
        path = out / "moving_averages.csv"
        close = clean.features[:, CLOSE]
        w = min(sma_window, len(close))
        sm = np.concatenate([np.full(w - 1, np.nan), sma(close, w)])
        em = ema(close, ema_alpha(ema_span))
        _write_csv(path, ("date", "close", "sma", "ema"),
                   ([d.isoformat(), _fmt(c), _fmt(s), _fmt(e)]
                    for d, c, s, e in zip(clean.dates, close, sm, em)))
        written.append(path)
    if emit.checkpoint:
        path = out / "model.npz"
        save_checkpoint(art.params, ModelConfig.from_dict(report.config["model"]), path)
        written.append(path)
    return written


# ---------------------------------------------------------------- ablation

ABLATION_GRID = (2, 4, 8, 16)
TABLE_FIELDS = ("P", "heads", "status", "r2", "mse", "precision", "accuracy", "recall", "error")


def _run_cell(cfg: ExperimentConfig, series, split, source, P: int, heads: int):
    cell_cfg = replace(cfg, model=replace(cfg.model, P=P, heads=heads))
    row = dict.fromkeys(TABLE_FIELDS)
    row.update(P=P, heads=heads)
    try:
        cell_cfg.model.validate()
    except ConfigError as e:
        row.update(status="failed", error=str(e))
        return row, None
    report = run_on_split(cell_cfg, series, split, source)
    row.update(status="ok", r2=report.regression["r2"], mse=report.regression["mse"],
               precision=report.classification["precision"],
               accuracy=report.classification["accuracy"],
               recall=report.classification["recall"])
    return row, report


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("SPHNET_THREADS", "1")))
    except ValueError:
        raise ConfigError("SPHNET_THREADS must be a positive integer") from None


@dataclass
class AblationResult:
    table: list[dict]
    reports: dict[tuple[int, int], ExperimentReport]


def run_ablation(cfg: ExperimentConfig, patch_set=ABLATION_GRID, head_set=ABLATION_GRID,
                 workers: int | None = None) -> AblationResult:
    """Sweep (patch count, heads) over one preprocessed dataset.

    Invalid cells are recorded as failed and the sweep continues. Cells are
    independent, so results do not depend on ``workers``.
    """
    cfg.validate()
    series, source = load_dataset(cfg)
    split = dataio.prepare_dataset(series, cfg.model.T, cfg.split_ratio)
    cells = [(P, h) for P in patch_set for h in head_set]
    workers = _worker_count() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_cell, cfg, series, split, source, P, h) for P, h in cells]
            results = [f.result() for f in futures]
    else:
        results = [_run_cell(cfg, series, split, source, P, h) for P, h in cells]

    table = [row for row, _ in results]
    reports = {(r["P"], r["heads"]): rep for r, rep in results if rep is not None}
    if cfg.out_dir is not None:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for (P, h), rep in reports.items():
            cell_cfg = replace(cfg, model=replace(cfg.model, P=P, heads=h))
            emit_plot_data(rep, split, out / f"cell_P{P}_H{h}", cell_cfg)
        _write_csv(out / "ablation.csv", TABLE_FIELDS,
                   ([("" if row[k] is None else (_fmt(row[k]) if isinstance(row[k], float) else row[k]))
                     for k in TABLE_FIELDS] for row in table))
        (out / "ablation.json").write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")
    return AblationResult(table=table, reports=reports)
