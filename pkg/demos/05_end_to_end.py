"""
From frame features to a detailed mesh
======================================

The whole pipeline on synthetic inputs at full size: 16 frames of 2048-d
features in, a 431-vertex mesh, 17 joints and a 6890-vertex mesh out.
The CLI equivalent is ``latentmesh run --synthetic --seed 7 --out DIR``.
"""
# %%
from latentmesh.ldmp import LdmpConfig, synthetic_mesh_state
from latentmesh.pipeline import (
    init_model_weights,
    run_pipeline,
    synthetic_features,
    synthetic_pose_sequence,
)

cfg = LdmpConfig(seed=7)
features = synthetic_features(cfg.T, cfg.c_img, cfg.seed)
poses = synthetic_pose_sequence(cfg.T, cfg.J, cfg.seed)
mesh = synthetic_mesh_state(cfg.n_verts, cfg.n_fine)
weights = init_model_weights(cfg)

# %%
out = run_pipeline(features, poses, mesh, cfg, weights)
print("coarse mesh", out.mesh_coarse.shape, " fine mesh", out.mesh_fine.shape, " pose", out.pose.shape)
for stage, macs in out.macs.items():
    print(f"{stage:9s} {macs / 1e9:6.3f} G MACs")
