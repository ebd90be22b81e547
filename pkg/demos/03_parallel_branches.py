"""
Running the mesh and pose branches side by side
===============================================

The two branches read only the shared embeddings, so they can run on two
threads without changing a single bit of the output.
"""
# %%
import time

import numpy as np

from latentmesh.ldmp import LdmpConfig, init_ldmp_weights, run_ldmp, synthetic_mesh_state
from latentmesh.tensor import CountingContext

cfg = LdmpConfig()
weights = init_ldmp_weights(cfg)
mesh = synthetic_mesh_state()
rng = np.random.default_rng(2)
cond = rng.standard_normal(cfg.c_hidden)
pose = rng.normal(scale=0.3, size=(cfg.J, 3))

# %%
outputs, counts = {}, {}
for mode in ("sequential", "parallel"):
    ctx = CountingContext()
    t0 = time.perf_counter()
    outputs[mode] = run_ldmp(ctx, cond, mesh.template, pose, cfg, weights, mode=mode)
    counts[mode] = ctx.mac_count
    print(f"{mode:10s} {1e3 * (time.perf_counter() - t0):7.1f} ms  {ctx.mac_count:,d} MACs")

# %%
same = all(np.array_equal(a, b) for a, b in zip(outputs["sequential"], outputs["parallel"]))
print("bitwise identical:", same, " identical MAC totals:", counts["sequential"] == counts["parallel"])
print("mesh", outputs["parallel"][0].shape, "pose", outputs["parallel"][1].shape)
