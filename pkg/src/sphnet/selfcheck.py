"""Self-tests run by ``sphnet check``: a gradient check of the whole network
plus quick randomized pipeline invariants."""

from __future__ import annotations

import datetime as dt
import math
import time
from dataclasses import dataclass

import numpy as np

from . import dataio
from . import numerics as nx
from .model import ModelConfig, forward_graph, init_params
from .train import mse_loss

TOY = ModelConfig(T=8, d=6, P=2, d_model=8, vit_layers=1, trf_layers=1, heads=2, ffn_dim=16)
GRAD_TOLERANCE = 1e-4


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def gradient_error(probe_count: int = 200, seed: int = 0, cfg: ModelConfig = TOY) -> float:
    """Worst relative error of backprop vs central differences on forward + MSE."""
    rng = np.random.default_rng(seed)
    # perturb away from the zero-initialized biases and positional vector so
    # every parameter has a nontrivial gradient
    params = {k: v + 0.1 * rng.standard_normal(v.shape) for k, v in init_params(cfg).items()}
    x = rng.random((4, cfg.T, cfg.d))
    y = rng.random(4)
    return nx.grad_check(lambda p: mse_loss(forward_graph(cfg, p, x), y), params,
                         probe_count=probe_count, seed=seed)


def _series(values):
    dates = tuple(dt.date(2020, 1, 1) + dt.timedelta(days=i) for i in range(len(values)))
    return dataio.PriceSeries("check", dates, np.asarray(values, dtype=np.float64))


def _patchify_roundtrip(rng) -> bool:
    P = int(rng.choice([1, 2, 4, 8, 16]))
    x = rng.standard_normal((P * int(rng.integers(1, 4)), 6))
    return np.array_equal(dataio.unpatchify(dataio.patchify(x, P), 6), x)


def _scaler_roundtrip(rng) -> bool:
    rows = rng.uniform(-1e3, 1e3, (int(rng.integers(2, 30)), 6))
    sc = dataio.fit_scaler(rows)
    back = dataio.inverse_rows(dataio.transform(rows, sc), sc)
    return bool(np.allclose(back, rows, rtol=1e-12, atol=1e-9))


def _split_ordering(rng) -> bool:
    n = int(rng.integers(2, 50))
    rows = np.arange((n + 4) * 6, dtype=np.float64).reshape(n + 4, 6)
    samples = dataio.make_windows(_series(rows), 4)
    ratio = float(rng.uniform(0.05, 0.95))
    if math.floor(ratio * n) in (0, n):
        return True
    split = dataio.chrono_split(samples, ratio)
    return (split.train + split.test == samples
            and split.train[-1].target_date < split.test[0].target_date)


def _ffill_idempotent(rng) -> bool:
    x = rng.uniform(1, 10, (int(rng.integers(2, 30)), 6))
    holes = rng.random(x.shape) < 0.3
    holes[0] = False
    x[holes] = np.nan
    once = dataio.forward_fill(_series(x))
    return once.features.tobytes() == dataio.forward_fill(once).features.tobytes()


INVARIANTS = {
    "patchify roundtrip": _patchify_roundtrip,
    "scaler roundtrip": _scaler_roundtrip,
    "chronological split ordering": _split_ordering,
    "forward-fill idempotence": _ffill_idempotent,
}


def run_checks(probe_count: int = 200, cases: int = 100, seed: int = 0) -> list[CheckResult]:
    start = time.perf_counter()
    err = gradient_error(probe_count, seed)
    results = [CheckResult("gradient", err < GRAD_TOLERANCE,
                           f"max relative error {err:.3e} over {probe_count} probes "
                           f"({time.perf_counter() - start:.1f} s)")]
    rng = np.random.default_rng(seed)
    for name, fn in INVARIANTS.items():
        failures = sum(not fn(rng) for _ in range(cases))
        results.append(CheckResult(name, failures == 0, f"{cases - failures}/{cases} cases"))
    return results
