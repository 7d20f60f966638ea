"""MSE training with Adam, deterministic shuffling, and checkpoints."""

from __future__ import annotations

import io
import json
import logging
import time
import zipfile
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import numerics as nx
from .dataio import DatasetSplit, stack_inputs, stack_targets
from .model import ModelConfig, forward_graph, init_params, param_shapes, predict

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch}, batch {batch} (loss={loss})")
        self.epoch, self.batch, self.loss = epoch, batch, loss


class CheckpointError(ValueError):
    """Checkpoint is corrupt or was written by an incompatible version."""


class ConfigMismatchError(CheckpointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    shuffle_seed: int = 0

    def validate(self) -> "TrainConfig":
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    test_mse: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.train_loss)


def mse_loss(pred, target) -> nx.Tensor:
    """Mean squared error; differentiable in ``pred``."""
    pred, target = nx.as_tensor(pred), nx.as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss length mismatch: {pred.shape} vs {target.shape}")
    if pred.data.size == 0:
        raise ValueError("mse_loss of zero samples")
    return nx.mean(nx.square(pred - target))


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, cfg: TrainConfig) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update. Inputs are left untouched."""
    if set(params) != set(grads):
        raise KeyError(f"gradient keys differ from parameter keys: "
                       f"{sorted(set(params) ^ set(grads))}")
    t = state.step + 1
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m = cfg.beta1 * state.m.get(k, 0.0) + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v.get(k, 0.0) + (1.0 - cfg.beta2) * (g * g)
        new_p[k] = p - cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps_adam)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(new_m, new_v, t)


def batch_loss_and_grads(cfg: ModelConfig, params: dict[str, np.ndarray], x, y):
    leaves = nx.leaves(params)
    loss = mse_loss(forward_graph(cfg, leaves, x), y)
    return loss.item(), nx.backward(loss, leaves)


def evaluate_mse(cfg: ModelConfig, params: dict, samples) -> float:
    """Normalized-scale MSE over ``samples``, summed in index order."""
    if not samples:
        return float("nan")
    err = predict(cfg, params, stack_inputs(samples)) - stack_targets(samples)
    return float(np.mean(err * err))


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, split: DatasetSplit,
          params: dict[str, np.ndarray] | None = None):
    """Fit SPH-Net on ``split.train``; returns final parameters and history."""
    model_cfg.validate()
    train_cfg.validate()
    if not split.train:
        raise ValueError("training split is empty")
    params = init_params(model_cfg) if params is None else dict(params)
    state = AdamState.zeros_like(params)
    history = TrainHistory()

    x_all = stack_inputs(split.train)
    y_all = stack_targets(split.train)
    n, bs = len(y_all), train_cfg.batch_size

    for epoch in range(train_cfg.epochs):
        start = time.perf_counter()
        rng = np.random.default_rng(train_cfg.shuffle_seed ^ epoch)
        order = rng.permutation(n)
        losses = []
        for b, lo in enumerate(range(0, n, bs)):
            idx = order[lo:lo + bs]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = batch_loss_and_grads(model_cfg, params, x_all[idx], y_all[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch + 1, b + 1, loss)
            params, state = adam_step(params, grads, state, train_cfg)
            losses.append(loss)
        history.train_loss.append(float(np.mean(losses)))
        history.test_mse.append(evaluate_mse(model_cfg, params, split.test))
        history.seconds.append(time.perf_counter() - start)
        log.info("epoch %d/%d train_loss=%.6g test_mse=%.6g", epoch + 1, train_cfg.epochs,
                 history.train_loss[-1], history.test_mse[-1])
    return params, history


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(params: dict[str, np.ndarray], cfg: ModelConfig, path) -> None:
    """Write an ``.npz`` archive holding the format version, config and every tensor."""
    meta = json.dumps({"version": CHECKPOINT_VERSION, "model_config": cfg.to_dict(),
                       "names": list(params)}, sort_keys=True)
    arrays = {"__meta__": np.frombuffer(meta.encode(), dtype=np.uint8)}
    arrays.update({f"param/{k}": np.asarray(v, dtype=np.float64) for k, v in params.items()})
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            # fixed timestamp keeps the file byte-stable across runs
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, arr, allow_pickle=False)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path, expected: ModelConfig | None = None):
    """Read a checkpoint; with ``expected``, reject any config that differs from it."""
    try:
        with np.load(Path(path), allow_pickle=False) as z:
            meta = json.loads(z["__meta__"].tobytes().decode())
            params = {k: np.array(z[f"param/{k}"]) for k in meta["names"]}
    except (zipfile.BadZipFile, EOFError, KeyError, ValueError, OSError) as e:
        if isinstance(e, FileNotFoundError):
            raise
        raise CheckpointError(f"corrupt checkpoint {path}: {e}") from e
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {meta.get('version')}")
    cfg = ModelConfig.from_dict(meta["model_config"])
    if expected is not None and expected != cfg:
        diff = {k: (v, getattr(expected, k)) for k, v in cfg.to_dict().items()
                if getattr(expected, k) != v}
        raise ConfigMismatchError(f"checkpoint config mismatch (stored, expected): {diff}")
    shapes = param_shapes(cfg)
    if set(shapes) != set(params) or any(params[k].shape != s for k, s in shapes.items()):
        raise CheckpointError("checkpoint tensors do not match their stored config")
    return params, cfg
