"""
Checking the hand-written gradients
===================================

The model trains with a small reverse-mode tape. Here we compare its
gradients with central differences, first on a single primitive and then
on the full network at toy size.
"""

import numpy as np

from sphnet import numerics as nx
from sphnet.selfcheck import TOY, gradient_error

# %%
# A single LayerNorm: the tape and the numeric derivative should agree to
# roughly the square of the finite-difference step.
rng = np.random.default_rng(0)
params = {"x": rng.standard_normal((3, 5)), "g": np.ones(5), "b": np.zeros(5)}


def loss(p):
    return nx.sum_(nx.square(nx.layer_norm(p["x"], p["g"], p["b"])) * np.arange(5.0))


print("layer_norm  max rel error", nx.grad_check(loss, params, probe_count=30))

# %%
# The whole forward pass plus MSE, probing 200 random parameter entries.
print(f"toy network {TOY.T=} {TOY.P=} {TOY.d_model=} {TOY.heads=}")
print("full model  max rel error", gradient_error(probe_count=200))
