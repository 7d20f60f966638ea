"""
Looking inside one attention head
=================================

Build an untrained toy model, push one window through the embedding and
read off the attention weights of the first block.
"""

import numpy as np

from sphnet import dataio
from sphnet.experiment import synthetic_series
from sphnet.model import ModelConfig, add_positional, attention, embed_patches, init_params

cfg = ModelConfig(T=32, P=8, d_model=16, heads=2, vit_layers=1, trf_layers=1, ffn_dim=32)
params = init_params(cfg)

# %%
# One normalized 32-day window, cut into 8 patches of 4 days x 6 features.
split = dataio.prepare_dataset(synthetic_series(0, 200, "sinusoid-plus-trend"), cfg.T, 0.7)
x = dataio.patchify(split.train[0].input, cfg.P)
print("patch matrix", x.shape)

# %%
# Head 0 of the first layer. Each row of the weight matrix sums to one.
h = add_positional(embed_patches(x, params["embed.W"], params["embed.b"]), params["pos.w"])
q = h.data @ params["vit.0.attn.W_Q"][0]
k = h.data @ params["vit.0.attn.W_K"][0]
v = h.data @ params["vit.0.attn.W_V"][0]
_, weights = attention(q, k, v, return_weights=True)
np.set_printoptions(precision=3, suppress=True)
print(weights.data)
