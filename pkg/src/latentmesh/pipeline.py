"""End-to-end forward pass: features -> hybrid features -> LDMP -> detailed mesh."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ldmp import (
    LdmpConfig,
    LdmpWeights,
    MeshState,
    RefineWeights,
    init_ldmp_weights,
    init_refine_weights,
    mid_frame,
    run_ldmp,
    upsample,
)
from .lifd import FeatureSequence, HybridFeatures, LifdWeights, init_lifd_weights, run_lifd
from .tensor import CountingContext

__all__ = [
    "ModelWeights",
    "PipelineOutput",
    "init_model_weights",
    "synthetic_features",
    "synthetic_pose_sequence",
    "synthetic_joint_regressor",
    "run_pipeline",
]


@dataclass
class ModelWeights:
    lifd: LifdWeights
    ldmp: LdmpWeights
    refine: RefineWeights


@dataclass
class PipelineOutput:
    hybrid: HybridFeatures
    mesh_coarse: np.ndarray
    mesh_fine: np.ndarray
    pose: np.ndarray
    macs: dict


def init_model_weights(cfg: LdmpConfig) -> ModelWeights:
    """Seeded uniform(-0.05, 0.05) weights for every stage, drawn in a fixed order."""
    rng = np.random.default_rng(cfg.seed)
    lifd = init_lifd_weights(rng, cfg.c_img, cfg.c_hidden)
    ldmp = init_ldmp_weights(cfg, rng)
    refine = init_refine_weights(cfg, rng)
    return ModelWeights(lifd, ldmp, refine)


def synthetic_features(T: int, c_img: int, seed: int) -> np.ndarray:
    """Standard normal per-frame features."""
    return np.random.default_rng([seed, 1]).standard_normal((T, c_img))


def synthetic_pose_sequence(T: int, J: int, seed: int) -> np.ndarray:
    """Smooth sinusoidal joint trajectories around a random rest pose, ``T x J x 3`` (metres)."""
    rng = np.random.default_rng([seed, 2])
    rest = rng.normal(scale=0.3, size=(J, 3))
    amp = rng.uniform(0.01, 0.1, size=(J, 3))
    freq = rng.uniform(0.5, 2.0, size=(J, 3))
    phase = rng.uniform(0, 2 * np.pi, size=(J, 3))
    t = np.arange(T)[:, None, None] / 30.0
    return rest + amp * np.sin(2 * np.pi * freq * t + phase)


def synthetic_joint_regressor(J: int, n_vertices: int, seed: int, per_joint: int = 8) -> np.ndarray:
    """Dense ``J x N`` row-stochastic regressor with a few random vertices per joint."""
    rng = np.random.default_rng([seed, 3])
    reg = np.zeros((J, n_vertices))
    for j in range(J):
        idx = rng.choice(n_vertices, size=min(per_joint, n_vertices), replace=False)
        w = rng.uniform(0.1, 1.0, size=idx.size)
        reg[j, idx] = w / w.sum()
    return reg


def run_pipeline(features, poses, mesh: MeshState, cfg: LdmpConfig, weights: ModelWeights,
                 mode: str = None) -> PipelineOutput:
    """Stage 1, stage 2 and the upsampling refinement, with a MAC tally per stage."""
    lifd_ctx, ldmp_ctx, up_ctx = CountingContext(), CountingContext(), CountingContext()
    hybrid = run_lifd(lifd_ctx, FeatureSequence(features), weights.lifd)
    coarse, pose = run_ldmp(ldmp_ctx, hybrid.temporal, mesh.template, mid_frame(poses), cfg, weights.ldmp,
                            mode=mode)
    fine = upsample(up_ctx, coarse, mesh, hybrid.temporal, weights.refine)
    macs = {
        "lifd": lifd_ctx.mac_count,
        "ldmp": ldmp_ctx.mac_count,
        "upsample": up_ctx.mac_count,
        "total": lifd_ctx.mac_count + ldmp_ctx.mac_count + up_ctx.mac_count,
    }
    return PipelineOutput(hybrid, coarse, fine, pose, macs)
