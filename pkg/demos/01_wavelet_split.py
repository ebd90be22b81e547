"""
Splitting frame features into frequency bands
=============================================

A single-level Haar transform over the channel axis turns each feature
vector into a smooth half and a detail half. Nothing is lost: the inverse
puts them back together to rounding error.
"""
# %%
import numpy as np

from latentmesh.lifd import FeatureSequence, init_lifd_weights, run_lifd
from latentmesh.wavelet import dwt_haar, idwt_haar

rng = np.random.default_rng(0)
features = rng.standard_normal((16, 2048))

# %%
# Energy moves between bands but the total is kept.
bands = dwt_haar(features)
print("band shapes:", bands.low.shape, bands.high.shape)
print("energy in / out:", (features ** 2).sum(), (bands.low ** 2).sum() + (bands.high ** 2).sum())
print("round-trip error:", np.abs(idwt_haar(bands) - features).max())

# %%
# A slowly varying signal puts almost everything in the low band.
ramp = np.linspace(0, 1, 2048)[None, :]
b = dwt_haar(ramp)
print("low/high energy for a ramp:", (b.low ** 2).sum(), (b.high ** 2).sum())

# %%
# The stage-1 extractor attends over frames in the low band, convolves the
# high band, merges them back and summarises the clip with a GRU.
weights = init_lifd_weights(rng, 2048, 2048)
hybrid = run_lifd(None, FeatureSequence(features), weights)
print("per-frame hybrid features:", hybrid.per_frame.shape, " clip summary:", hybrid.temporal.shape)
