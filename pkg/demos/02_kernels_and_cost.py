"""
Pooled interaction kernels and what they cost
=============================================

Full attention scales with N^2 C. The pooled kernels squeeze the token and
channel axes down to ``r`` before multiplying, and the counting context
tallies every multiply-accumulate as it happens.
"""
# %%
import numpy as np

from latentmesh.attention import init_attention_weights, init_lsp_weights, lcp, lsp, self_attention
from latentmesh.cost import block_comparison, kernel_table, macs_lsp, macs_self_attention
from latentmesh.ldmp import LdmpConfig
from latentmesh.tensor import CountingContext

rng = np.random.default_rng(1)
C, N_VERTS, J, R = 512, 431, 17, 64
verts = rng.standard_normal((1, N_VERTS, C))
joints = rng.standard_normal((1, J, C))

# %%
# Run each kernel once and compare the live tally with the closed form.
full_ctx, lsp_ctx, lcp_ctx = CountingContext(), CountingContext(), CountingContext()
self_attention(full_ctx, verts, init_attention_weights(rng, C))
lsp(lsp_ctx, verts, R, init_lsp_weights(rng, C))
lcp(lcp_ctx, verts, joints, J, init_attention_weights(rng, C))
print(f"vertex self attention: {full_ctx.mac_count:>13,d}  (formula {macs_self_attention(N_VERTS, C):,d})")
print(f"vertex LSP, r={R}:      {lsp_ctx.mac_count:>13,d}  (formula {macs_lsp(N_VERTS, C, R):,d})")
print(f"vertex-to-joint LCP:   {lcp_ctx.mac_count:>13,d}")

# %%
# The table the ``cost`` command writes, at the default configuration.
cfg = LdmpConfig()
for e in kernel_table(cfg).entries + block_comparison(cfg).entries:
    pct = "" if e.reduction_pct is None else f"{e.reduction_pct:6.1f}%"
    print(f"{e.name:24s} {e.macs / 1e6:10.2f}M MACs {e.params / 1e3:9.2f}K params {pct}")

# %%
# Raising r buys capacity at a linear price.
for r in (8, 32, 64, 256):
    print(f"r={r:3d}: LSP {macs_lsp(N_VERTS, C, r) / 1e6:7.2f}M MACs")
