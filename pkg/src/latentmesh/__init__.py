"""Latent-information feature extraction and low-dimensional mesh/pose interaction kernels."""
from .attention import KernelWeights, cross_attention, lcp, lsp, self_attention
from .ldmp import LdmpConfig, MeshState, run_ldmp, upsample
from .lifd import FeatureSequence, run_lifd
from .tensor import CountingContext
from .wavelet import WaveletPair, dwt_haar, idwt_haar

__version__ = "0.1.0"

__all__ = [
    "CountingContext",
    "KernelWeights",
    "LdmpConfig",
    "MeshState",
    "FeatureSequence",
    "WaveletPair",
    "cross_attention",
    "dwt_haar",
    "idwt_haar",
    "lcp",
    "lsp",
    "run_ldmp",
    "run_lifd",
    "self_attention",
    "upsample",
]
