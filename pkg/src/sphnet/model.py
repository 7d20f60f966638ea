"""SPH-Net forward pass: patch embedding, positional encoding, two encoder
stacks and a linear regression head."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from . import numerics as nx
from .dataio import patchify
from .numerics import Tensor

ACTIVATIONS = ("gelu", "relu")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    T: int = 32
    d: int = 6
    P: int = 8
    d_model: int = 128
    vit_layers: int = 4
    trf_layers: int = 4
    heads: int = 8
    ffn_dim: int = 512
    activation: str = "gelu"
    seed: int = 0

    def validate(self) -> "ModelConfig":
        for name in ("T", "d", "P", "d_model", "heads", "ffn_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("vit_layers", "trf_layers"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.T % self.P:
            raise ConfigError(f"patch count P={self.P} must divide T={self.T}")
        if self.d_model % self.heads:
            raise ConfigError(f"heads must divide d_model (heads={self.heads}, d_model={self.d_model})")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        return self

    @property
    def patch_len(self) -> int:
        return self.T // self.P * self.d

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**d)


def layer_prefixes(cfg: ModelConfig) -> list[str]:
    return [f"vit.{i}" for i in range(cfg.vit_layers)] + [f"trf.{i}" for i in range(cfg.trf_layers)]


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name and shape of every learnable tensor, in a fixed order."""
    D, H, F = cfg.d_model, cfg.heads, cfg.ffn_dim
    shapes: dict[str, tuple[int, ...]] = {
        "embed.W": (cfg.patch_len, D),
        "embed.b": (D,),
        "pos.w": (D,),
    }
    for p in layer_prefixes(cfg):
        shapes.update({
            f"{p}.attn.W_Q": (H, D, cfg.d_k),
            f"{p}.attn.W_K": (H, D, cfg.d_k),
            f"{p}.attn.W_V": (H, D, cfg.d_k),
            f"{p}.attn.W_O": (D, D),
            f"{p}.ln1.gamma": (D,),
            f"{p}.ln1.beta": (D,),
            f"{p}.ffn.W_1": (D, F),
            f"{p}.ffn.b_1": (F,),
            f"{p}.ffn.W_2": (F, D),
            f"{p}.ffn.b_2": (D,),
            f"{p}.ln2.gamma": (D,),
            f"{p}.ln2.beta": (D,),
        })
    shapes["head.W"] = (D, 1)
    shapes["head.b"] = ()
    return shapes


def param_count(cfg: ModelConfig) -> int:
    D, F = cfg.d_model, cfg.ffn_dim
    per_layer = 4 * D * D + 2 * D * F + F + 5 * D
    return cfg.patch_len * D + 2 * D + (cfg.vit_layers + cfg.trf_layers) * per_layer + D + 1


def init_params(cfg: ModelConfig) -> dict[str, np.ndarray]:
    """Xavier-uniform weights, zero biases and positional vector, unit LayerNorm gains."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gamma":
            params[name] = np.ones(shape)
        elif leaf.startswith("W"):
            fan_in, fan_out = shape[-2], shape[-1]
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-bound, bound, size=shape)
        else:
            params[name] = np.zeros(shape)
    return params


# ---------------------------------------------------------------- building blocks

def embed_patches(patches, W_E, b_E) -> Tensor:
    return nx.matmul(patches, W_E) + b_E


def add_positional(z, w_PE) -> Tensor:
    """Row ``t`` gains ``t * w_PE`` for ``t = 0 .. P-1``."""
    z = nx.as_tensor(z)
    t = np.arange(z.shape[-2], dtype=np.float64)[:, None]
    return z + nx.mul(t, w_PE)


def attention(q, k, v, return_weights: bool = False):
    q, k, v = nx.as_tensor(q), nx.as_tensor(k), nx.as_tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise nx.DimensionError(f"attention shapes q{q.shape} k{k.shape} v{v.shape}")
    scores = nx.matmul(q, nx.transpose(k)) / math.sqrt(q.shape[-1])
    weights = nx.softmax_rows(scores)
    out = nx.matmul(weights, v)
    return (out, weights) if return_weights else out


def mhsa(h, W_Q, W_K, W_V, W_O) -> Tensor:
    """Multi-head self-attention on ``(..., P, D)`` with per-head ``(H, D, d_k)`` projections."""
    h = nx.as_tensor(h)
    W_Q, W_K, W_V, W_O = map(nx.as_tensor, (W_Q, W_K, W_V, W_O))
    H, D, dk = W_Q.shape
    if h.shape[-1] != D or H * dk != D:
        raise nx.DimensionError(f"mhsa input {h.shape} vs per-head projections {W_Q.shape}")
    lead, P = h.shape[:-2], h.shape[-2]
    hh = nx.reshape(h, lead + (1, P, D))
    heads = attention(nx.matmul(hh, W_Q), nx.matmul(hh, W_K), nx.matmul(hh, W_V))
    axes = tuple(range(len(lead))) + tuple(len(lead) + a for a in (1, 0, 2))
    concat = nx.reshape(nx.transpose(heads, axes), lead + (P, H * dk))
    return nx.matmul(concat, W_O)


def _activation(name: str):
    return nx.gelu if name == "gelu" else nx.relu


def encoder_block(h, p: dict, prefix: str, activation: str = "gelu") -> Tensor:
    """Post-norm block: LN(h + MHSA(h)), then LN(h' + FFN(h'))."""
    g = lambda k: p[f"{prefix}.{k}"]
    h1 = nx.layer_norm(nx.add(h, mhsa(h, g("attn.W_Q"), g("attn.W_K"), g("attn.W_V"), g("attn.W_O"))),
                       g("ln1.gamma"), g("ln1.beta"))
    hidden = _activation(activation)(nx.matmul(h1, g("ffn.W_1")) + g("ffn.b_1"))
    ffn = nx.matmul(hidden, g("ffn.W_2")) + g("ffn.b_2")
    return nx.layer_norm(h1 + ffn, g("ln2.gamma"), g("ln2.beta"))


def forward_graph(cfg: ModelConfig, p: dict, x) -> Tensor:
    """Differentiable forward over a batch ``(B, T, d)``; returns predictions ``(B,)``.

    ``p`` maps parameter names to tensors (or arrays, treated as constants).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-2:] != (cfg.T, cfg.d):
        raise nx.DimensionError(f"input window {x.shape[-2:]} does not match T×d = {cfg.T}×{cfg.d}")
    z = embed_patches(patchify(x, cfg.P), p["embed.W"], p["embed.b"])
    h = add_positional(z, p["pos.w"])
    for prefix in layer_prefixes(cfg):
        h = encoder_block(h, p, prefix, cfg.activation)
    pooled = nx.mean(h, axis=-2)
    out = nx.matmul(pooled, p["head.W"]) + p["head.b"]
    return nx.reshape(out, out.shape[:-1])


def forward(cfg: ModelConfig, params: dict, x):
    """Predict from one window ``(T, d)`` (returns a float) or a batch ``(B, T, d)``."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    y = forward_graph(cfg, params, x[None] if single else x).data
    return float(y[0]) if single else np.array(y)


def predict(cfg: ModelConfig, params: dict, x, batch_size: int = 256) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if len(x) == 0:
        return np.zeros(0)
    return np.concatenate([forward(cfg, params, x[i:i + batch_size])
                           for i in range(0, len(x), batch_size)])
