"""
Scoring a predicted skeleton
============================

Root-relative error ignores where the body stands. Procrustes alignment
also forgives rotation and scale, which isolates errors in shape.
"""
# %%
import numpy as np
from scipy.spatial.transform import Rotation

from latentmesh.metrics import accel_err, mpjpe, pa_mpjpe, procrustes_align, total_loss

rng = np.random.default_rng(3)
gt = rng.normal(scale=0.3, size=(17, 3))

# %%
# A rotated, scaled and shifted copy is perfect after alignment.
moved = 0.9 * gt @ Rotation.from_euler("y", 40, degrees=True).as_matrix() + [0.1, 0.0, 2.0]
print(f"MPJPE {1e3 * mpjpe(moved, gt):.1f} mm   PA-MPJPE {1e3 * pa_mpjpe(moved, gt):.2e} mm")
s, R, t = procrustes_align(moved, gt)
print("recovered scale:", round(s, 6), " det R:", round(float(np.linalg.det(R)), 6))

# %%
# Noise survives alignment.
noisy = gt + rng.normal(scale=0.02, size=gt.shape)
print(f"noisy: MPJPE {1e3 * mpjpe(noisy, gt):.1f} mm   PA-MPJPE {1e3 * pa_mpjpe(noisy, gt):.1f} mm")

# %%
# Jitter shows up in the acceleration error even when positions look fine.
frames = np.cumsum(rng.normal(scale=0.01, size=(30, 17, 3)), axis=0)
jittery = frames + rng.normal(scale=0.005, size=frames.shape)
print(f"accel error: {1e3 * accel_err(jittery, frames):.2f} mm/frame^2")
print("total loss with unit terms:", total_loss(1, 1, 1, 1))
