"""Acceptance criteria. Each test records one PASS/FAIL line, repeated in the
"acceptance criteria" section of the pytest summary."""

import json
import time
from dataclasses import replace

import numpy as np
import pytest

import test_dataio
import test_evaluation
from sphnet import dataio
from sphnet.cli import main
from sphnet.experiment import (PROFILES, ExperimentConfig, SyntheticSpec, run_ablation,
                               run_experiment, synthetic_series)
from sphnet.train import evaluate_mse, load_checkpoint, save_checkpoint, train

pytestmark = pytest.mark.acceptance

DESK_MODEL, DESK_TRAIN = PROFILES["desk"]


def desk(regime, length=600, **kw):
    return ExperimentConfig(model=DESK_MODEL, train=DESK_TRAIN,
                            synthetic=SyntheticSpec(regime=regime, length=length), **kw)


def test_gradient_correctness(criterion, capsys):
    start = time.perf_counter()
    code = main(["check", "--probes", "200"])
    elapsed = time.perf_counter() - start
    out = capsys.readouterr().out
    grad_line = next(line for line in out.splitlines() if "gradient" in line)
    ok = code == 0 and grad_line.startswith("PASS") and elapsed < 30
    assert criterion("gradient correctness", ok, f"{grad_line.split(': ', 1)[1]}, "
                     f"check exit {code}, {elapsed:.1f} s (limits 1e-4, 30 s)")


def test_metric_oracles(criterion):
    checks = [test_evaluation.test_regression_against_oracle,
              test_evaluation.test_classification_against_oracle,
              test_evaluation.test_sma_ema_against_oracle,
              test_evaluation.test_pearson_against_oracle,
              test_evaluation.test_r2_examples,
              test_evaluation.test_classification_examples,
              test_evaluation.test_sma_ema_examples,
              test_evaluation.test_pearson_examples,
              test_evaluation.test_mse_examples]
    failed = []
    for fn in checks:
        try:
            fn()
        except AssertionError:
            failed.append(fn.__name__)
    assert criterion("metric oracles", not failed,
                     "MSE, R2, precision/accuracy/recall, SMA, EMA, Pearson within 1e-9 on 100 "
                     f"random instances each; failed: {failed or 'none'}")


def test_overfit_capability(criterion):
    s = synthetic_series(0, 64, "sinusoid-plus-trend")
    rows = s.features[:DESK_MODEL.T + 8]
    scaler = dataio.fit_scaler(rows)
    norm = dataio.PriceSeries(s.ticker, s.dates[:len(rows)], dataio.transform(rows, scaler))
    samples = dataio.make_windows(norm, DESK_MODEL.T)
    assert len(samples) == 8
    start = time.perf_counter()
    params, _ = train(DESK_MODEL, replace(DESK_TRAIN, epochs=500),
                      dataio.DatasetSplit(samples, [], scaler, DESK_MODEL.T))
    elapsed = time.perf_counter() - start
    mse = evaluate_mse(DESK_MODEL, params, samples)
    assert criterion("overfit capability", mse < 1e-3 and elapsed < 60,
                     f"train MSE {mse:.3e} after 500 epochs, {elapsed:.1f} s (limits 1e-3, 60 s)")


def test_learning_signal(criterion):
    start = time.perf_counter()
    sin = run_experiment(desk("sinusoid-plus-trend"))
    lin = run_experiment(desk("linear-trend"))
    elapsed = time.perf_counter() - start
    ratio = sin.regression["mse"] / sin.baseline["regression"]["mse"]
    acc = lin.classification["accuracy"]
    ok = ratio <= 0.8 and acc > 0.9 and elapsed < 120
    assert criterion("learning signal", ok,
                     f"sinusoid MSE {sin.regression['mse']:.4g} vs persistence "
                     f"{sin.baseline['regression']['mse']:.4g} (ratio {ratio:.3f}, need <= 0.8); "
                     f"linear-trend accuracy {acc:.3f} (need > 0.9); {elapsed:.0f} s (limit 120 s)")


def test_ablation_integrity(criterion, tmp_path):
    cfg = replace(desk("sinusoid-plus-trend"), train=replace(DESK_TRAIN, epochs=5),
                  out_dir=str(tmp_path))
    start = time.perf_counter()
    result = run_ablation(cfg, workers=1)
    elapsed = time.perf_counter() - start
    metrics = ("r2", "mse", "precision", "accuracy", "recall")
    finite = all(row["status"] == "ok" and all(np.isfinite(row[k]) for k in metrics)
                 for row in result.table)
    mismatched = []
    for row in result.table:
        alone = run_experiment(replace(cfg, out_dir=None,
                                       model=replace(cfg.model, P=row["P"], heads=row["heads"])))
        want = {**{k: alone.regression[k] for k in ("r2", "mse")},
                **{k: alone.classification[k] for k in ("precision", "accuracy", "recall")}}
        if any(row[k] != want[k] for k in metrics):
            mismatched.append((row["P"], row["heads"]))
    on_disk = json.loads((tmp_path / "ablation.json").read_text())
    ok = (len(result.table) == 16 and finite and not mismatched
          and on_disk == result.table and elapsed < 600)
    assert criterion("ablation sweep integrity", ok,
                     f"{len(result.table)} cells, all finite: {finite}, rows differing from "
                     f"standalone runs: {mismatched or 'none'}, sweep {elapsed:.0f} s (limit 600 s)")


def test_determinism(criterion, tmp_path):
    for name in ("a", "b"):
        assert main(["run", "--out", str(tmp_path / name), "--seed", "7"]) == 0
    same_report = (tmp_path / "a" / "report.json").read_bytes() == \
        (tmp_path / "b" / "report.json").read_bytes()
    params, cfg = load_checkpoint(tmp_path / "a" / "model.npz")
    save_checkpoint(params, cfg, tmp_path / "again.npz")
    back, cfg2 = load_checkpoint(tmp_path / "again.npz")
    bit_exact = cfg2 == cfg and all(back[k].tobytes() == params[k].tobytes() for k in params)
    assert criterion("determinism", same_report and bit_exact,
                     f"report.json byte-identical: {same_report}, checkpoint roundtrip bit-exact: "
                     f"{bit_exact}")


def test_pipeline_invariants(criterion):
    props = [test_dataio.test_patchify_roundtrip_property,
             test_dataio.test_scaler_roundtrip_property,
             test_dataio.test_chrono_split_ordering_property,
             test_dataio.test_forward_fill_idempotent_property]
    failed = []
    for fn in props:
        assert fn._hypothesis_internal_use_settings.max_examples >= 100
        try:
            fn()
        except Exception:
            failed.append(fn.__name__)
    assert criterion("pipeline invariants", not failed,
                     f"patchify, scaler, split ordering, forward-fill properties at >= 100 "
                     f"cases each; failed: {failed or 'none'}")


def test_paper_profile_smoke(criterion):
    model, train_cfg = PROFILES["paper"]
    assert (model.T, model.d_model, model.vit_layers, model.trf_layers, model.heads) == (32, 128, 4, 4, 8)
    assert (train_cfg.learning_rate, train_cfg.batch_size) == (1e-3, 32)
    cfg = ExperimentConfig(model=model, train=replace(train_cfg, epochs=2),
                           synthetic=SyntheticSpec(length=600))
    start = time.perf_counter()
    report = run_experiment(cfg)
    elapsed = time.perf_counter() - start
    loss = report.history["train_loss"]
    ok = all(np.isfinite(loss)) and loss[1] < loss[0] and elapsed < 300
    assert criterion("paper-profile smoke", ok,
                     f"train loss {loss[0]:.4g} -> {loss[1]:.4g}, {elapsed:.0f} s (limit 300 s)")
