import math

import numpy as np
import pytest

from sphnet import model as M
from sphnet import numerics as nx
from sphnet.model import ModelConfig

TOY = ModelConfig(T=8, d=6, P=2, d_model=8, vit_layers=1, trf_layers=1, heads=2, ffn_dim=32, seed=3)


def test_init_is_deterministic():
    a, b = M.init_params(TOY), M.init_params(TOY)
    assert list(a) == list(b)
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)


def test_init_values():
    p = M.init_params(TOY)
    assert np.all(p["embed.b"] == 0) and np.all(p["pos.w"] == 0)
    assert np.all(p["vit.0.ln1.gamma"] == 1) and np.all(p["vit.0.ln1.beta"] == 0)
    bound = math.sqrt(6 / (TOY.patch_len + TOY.d_model))
    assert np.abs(p["embed.W"]).max() <= bound


def test_paper_shapes():
    p = M.init_params(ModelConfig(T=32, d=6, P=8, d_model=128))
    assert p["embed.W"].shape == (24, 128)
    assert p["trf.3.attn.W_Q"].shape == (8, 128, 16)


def test_heads_must_divide_d_model():
    with pytest.raises(M.ConfigError, match="heads must divide d_model"):
        M.init_params(ModelConfig(heads=3, d_model=128))


def test_patch_count_must_divide_window():
    with pytest.raises(M.ConfigError, match="P=16 must divide T=24"):
        ModelConfig(T=24, P=16).validate()


@pytest.mark.parametrize("seed", range(10))
def test_param_count_matches_allocation(seed):
    rng = np.random.default_rng(seed)
    heads = int(rng.choice([1, 2, 4]))
    P = int(rng.choice([1, 2, 4]))
    cfg = ModelConfig(T=P * int(rng.integers(1, 4)), d=int(rng.integers(1, 7)), P=P,
                      d_model=heads * int(rng.integers(1, 5)), heads=heads,
                      vit_layers=int(rng.integers(0, 3)), trf_layers=int(rng.integers(0, 3)),
                      ffn_dim=int(rng.integers(1, 20)), seed=seed)
    p = M.init_params(cfg)
    assert sum(v.size for v in p.values()) == M.param_count(cfg)
    assert {k: v.shape for k, v in p.items()} == M.param_shapes(cfg)


def test_embed_patches():
    assert np.all(M.embed_patches(np.ones((3, 4)), np.zeros((4, 5)), np.zeros(5)).data == 0)
    np.testing.assert_array_equal(M.embed_patches([[1.0, 2.0]], np.eye(2), np.zeros(2)).data, [[1, 2]])
    np.testing.assert_array_equal(M.embed_patches([[1.0, 1.0]], [[1.0], [2.0]], [3.0]).data, [[6.0]])


def test_add_positional():
    z = np.random.default_rng(0).standard_normal((4, 3))
    np.testing.assert_array_equal(M.add_positional(z, np.zeros(3)).data, z)
    np.testing.assert_array_equal(M.add_positional(np.zeros((2, 1)), [3.0]).data, [[0.0], [3.0]])
    np.testing.assert_array_equal(M.add_positional(z[:1], [5.0, 6.0, 7.0]).data, z[:1])


def test_attention_examples():
    v = np.array([[2.0, -1.0]])
    np.testing.assert_allclose(M.attention([[0.3, 0.1]], [[5.0, 4.0]], v).data, v)
    out = M.attention([[1.0], [2.0]], [[1.0], [1.0]], [[1.0], [3.0]]).data
    np.testing.assert_allclose(out, [[2.0], [2.0]])
    out = M.attention([[1.0]], [[1.0], [0.0]], [[1.0], [0.0]]).data
    assert out[0, 0] == pytest.approx(math.e / (math.e + 1), rel=1e-15)
    assert out[0, 0] == pytest.approx(0.7311, abs=1e-4)


def test_mhsa_single_head_identity_reduces_to_attention():
    h = np.random.default_rng(1).standard_normal((5, 4))
    eye = np.eye(4)[None]
    out = M.mhsa(h, eye, eye, eye, np.eye(4)).data
    assert np.array_equal(out, M.attention(h, h, h).data)


def test_mhsa_paper_widths():
    cfg = ModelConfig(T=32, P=8, d_model=128, heads=8)
    p = M.init_params(cfg)
    assert cfg.d_k == 16
    h = np.random.default_rng(0).standard_normal((8, 128))
    out = M.mhsa(h, p["vit.0.attn.W_Q"], p["vit.0.attn.W_K"], p["vit.0.attn.W_V"], p["vit.0.attn.W_O"])
    assert out.shape == (8, 128)


def test_mhsa_zero_values_give_zero():
    rng = np.random.default_rng(2)
    h = rng.standard_normal((3, 4))
    W = rng.standard_normal((2, 4, 2))
    out = M.mhsa(h, W, W, np.zeros((2, 4, 2)), rng.standard_normal((4, 4))).data
    assert np.all(out == 0)


def _zero_layer(prefix, D, F, H):
    return {f"{prefix}.attn.W_Q": np.zeros((H, D, D // H)), f"{prefix}.attn.W_K": np.zeros((H, D, D // H)),
            f"{prefix}.attn.W_V": np.zeros((H, D, D // H)), f"{prefix}.attn.W_O": np.zeros((D, D)),
            f"{prefix}.ffn.W_1": np.zeros((D, F)), f"{prefix}.ffn.b_1": np.zeros(F),
            f"{prefix}.ffn.W_2": np.zeros((F, D)), f"{prefix}.ffn.b_2": np.zeros(D),
            f"{prefix}.ln1.gamma": np.ones(D), f"{prefix}.ln1.beta": np.zeros(D),
            f"{prefix}.ln2.gamma": np.ones(D), f"{prefix}.ln2.beta": np.zeros(D)}


def test_encoder_block_zero_sublayers_is_double_layernorm():
    h = np.random.default_rng(4).standard_normal((3, 4))
    out = M.encoder_block(h, _zero_layer("L", 4, 6, 2), "L").data
    one, zero = np.ones(4), np.zeros(4)
    expected = nx.layer_norm(nx.layer_norm(h, one, zero), one, zero).data
    np.testing.assert_array_equal(out, expected)


def test_encoder_block_preserves_shape():
    p = M.init_params(TOY)
    h = np.random.default_rng(5).standard_normal((7, TOY.P, TOY.d_model))
    assert M.encoder_block(h, p, "vit.0").shape == h.shape


# --- independent scalar trace of the post-norm block ------------------------

def _ln(row, gamma, beta, eps=1e-5):
    mu = sum(row) / len(row)
    var = sum((r - mu) ** 2 for r in row) / len(row)
    return [g * (r - mu) / math.sqrt(var + eps) + b for r, g, b in zip(row, gamma, beta)]


def _gelu(x):
    return 0.5 * x * (1 + math.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x ** 3)))


def _mm(A, B):
    return [[sum(a * B[k][j] for k, a in enumerate(row)) for j in range(len(B[0]))] for row in A]


def _trace_block(h, p, heads):
    P, D = len(h), len(h[0])
    dk = D // heads
    head_out = []
    for i in range(heads):
        q = _mm(h, p["WQ"][i])
        k = _mm(h, p["WK"][i])
        v = _mm(h, p["WV"][i])
        rows = []
        for r in range(P):
            logits = [sum(q[r][c] * k[s][c] for c in range(dk)) / math.sqrt(dk) for s in range(P)]
            m = max(logits)
            e = [math.exp(x - m) for x in logits]
            w = [x / sum(e) for x in e]
            rows.append([sum(w[s] * v[s][c] for s in range(P)) for c in range(dk)])
        head_out.append(rows)
    concat = [sum((head_out[i][r] for i in range(heads)), []) for r in range(P)]
    attn = _mm(concat, p["WO"])
    h1 = [_ln([a + b for a, b in zip(h[r], attn[r])], p["g1"], p["b1n"]) for r in range(P)]
    hid = [[_gelu(x + b) for x, b in zip(row, p["b1"])] for row in _mm(h1, p["W1"])]
    ffn = [[x + b for x, b in zip(row, p["b2"])] for row in _mm(hid, p["W2"])]
    return [_ln([a + b for a, b in zip(h1[r], ffn[r])], p["g2"], p["b2n"]) for r in range(P)]


@pytest.mark.parametrize("heads", [1, 2])
def test_encoder_block_matches_scalar_trace(heads):
    rng = np.random.default_rng(11)
    D, F, P = 2, 3, 2
    raw = {"WQ": rng.standard_normal((heads, D, D // heads)), "WK": rng.standard_normal((heads, D, D // heads)),
           "WV": rng.standard_normal((heads, D, D // heads)), "WO": rng.standard_normal((D, D)),
           "W1": rng.standard_normal((D, F)), "b1": rng.standard_normal(F),
           "W2": rng.standard_normal((F, D)), "b2": rng.standard_normal(D),
           "g1": rng.uniform(0.5, 1.5, D), "b1n": rng.standard_normal(D),
           "g2": rng.uniform(0.5, 1.5, D), "b2n": rng.standard_normal(D)}
    h = rng.standard_normal((P, D))
    names = {"WQ": "attn.W_Q", "WK": "attn.W_K", "WV": "attn.W_V", "WO": "attn.W_O", "W1": "ffn.W_1",
             "b1": "ffn.b_1", "W2": "ffn.W_2", "b2": "ffn.b_2", "g1": "ln1.gamma", "b1n": "ln1.beta",
             "g2": "ln2.gamma", "b2n": "ln2.beta"}
    p = {f"L.{v}": raw[k] for k, v in names.items()}
    got = M.encoder_block(h, p, "L").data
    expected = _trace_block(h.tolist(), {k: v.tolist() for k, v in raw.items()}, heads)
    np.testing.assert_allclose(got, expected, rtol=1e-12, atol=1e-12)


# --- forward ------------------------------------------------------------------

def test_zero_head_returns_bias():
    p = M.init_params(TOY)
    p["head.W"] = np.zeros_like(p["head.W"])
    p["head.b"] = np.array(0.37)
    x = np.random.default_rng(0).random((TOY.T, TOY.d))
    assert M.forward(TOY, p, x) == 0.37


def test_forward_is_bit_deterministic():
    p = M.init_params(TOY)
    x = np.random.default_rng(0).random((TOY.T, TOY.d))
    assert M.forward(TOY, p, x) == M.forward(TOY, p, x)


def test_forward_batch_agrees_with_single():
    p = M.init_params(TOY)
    xs = np.random.default_rng(0).random((5, TOY.T, TOY.d))
    batch = M.forward(TOY, p, xs)
    singles = [M.forward(TOY, p, x) for x in xs]
    np.testing.assert_allclose(batch, singles, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("P", [2, 4, 8, 16])
@pytest.mark.parametrize("heads", [2, 4, 8, 16])
def test_ablation_configs_give_finite_scalar(P, heads):
    cfg = ModelConfig(T=32, P=P, heads=heads, d_model=128, vit_layers=1, trf_layers=1, seed=P * heads)
    x = np.random.default_rng(P + heads).random((32, 6))
    y = M.forward(cfg, M.init_params(cfg), x)
    assert isinstance(y, float) and math.isfinite(y)


def test_forward_rejects_wrong_window():
    with pytest.raises(nx.DimensionError):
        M.forward(TOY, M.init_params(TOY), np.zeros((TOY.T + 1, TOY.d)))


def _permuted_input(x, perm, P):
    patches = x.reshape(P, -1)[perm]
    return patches.reshape(x.shape)


def test_positional_encoding_breaks_permutation_invariance():
    p = M.init_params(TOY)
    rng = np.random.default_rng(9)
    x = rng.random((TOY.T, TOY.d))
    swapped = _permuted_input(x, [1, 0], TOY.P)
    assert M.forward(TOY, p, x) == pytest.approx(M.forward(TOY, p, swapped), rel=1e-12)
    p["pos.w"] = rng.standard_normal(TOY.d_model)
    assert abs(M.forward(TOY, p, x) - M.forward(TOY, p, swapped)) > 1e-6


def test_gradients_match_finite_differences_at_toy_size():
    from sphnet.train import mse_loss
    rng = np.random.default_rng(0)
    params = {k: v + 0.1 * rng.standard_normal(v.shape) for k, v in M.init_params(TOY).items()}
    x, y = rng.random((3, TOY.T, TOY.d)), rng.random(3)
    err = nx.grad_check(lambda p: mse_loss(M.forward_graph(TOY, p, x), y), params, probe_count=100)
    assert err < 1e-4
