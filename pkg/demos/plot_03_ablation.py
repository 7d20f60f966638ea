"""
Patch count versus attention heads
==================================

A short sweep over patch count and head count on one prepared dataset.
The full grid is {2,4,8,16} x {2,4,8,16}; we run a corner of it for speed.
Set SPHNET_THREADS to run cells in parallel.
"""

from dataclasses import replace

from sphnet.experiment import ExperimentConfig, SyntheticSpec, run_ablation

cfg = ExperimentConfig(synthetic=SyntheticSpec(length=400))
cfg = replace(cfg, train=replace(cfg.train, epochs=5))

# %%
# A head count of 16 with d_model=32 leaves only two dimensions per head
# but is still valid; every cell here should succeed.
result = run_ablation(cfg, patch_set=(4, 8, 16), head_set=(2, 8))
print(f"{'P':>3} {'heads':>5} {'mse':>9} {'r2':>7} {'acc':>6}")
for row in result.table:
    print(f"{row['P']:>3} {row['heads']:>5} {row['mse']:>9.4f} {row['r2']:>7.3f} {row['accuracy']:>6.3f}")
