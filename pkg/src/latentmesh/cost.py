"""Closed-form MAC and parameter counts, and the kernel/block comparison report.

The formulas follow the billing convention of :mod:`latentmesh.tensor`
(one MAC per multiply in products and convolutions, one per input element
in pooling, nothing for softmax/bias/elementwise work). Each one is checked
against the instrumented kernels in the test suite.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import List, Optional

from .errors import ConfigurationError, RangeError
from .ldmp import LdmpConfig

__all__ = [
    "macs_self_attention",
    "macs_cross_attention",
    "macs_lsp",
    "macs_lcp",
    "macs_adaln",
    "macs_mlp",
    "macs_branch_block",
    "macs_block",
    "macs_ldmp",
    "macs_upsample",
    "macs_lifd",
    "params_kernel",
    "params_block",
    "CostEntry",
    "Comparison",
    "CostReport",
    "PUBLISHED_REFERENCE",
    "PUBLISHED_REDUCTION_PCT",
    "kernel_table",
    "block_comparison",
    "cost_report",
]


def _positive(**extents):
    for name, v in extents.items():
        if v < 1:
            raise RangeError(f"{name} must be positive, got {v}")


def _reduced(r, *extents):
    if not 1 <= r <= min(extents):
        raise RangeError(f"r={r} must lie in [1, {min(extents)}]")


def macs_self_attention(n: int, c: int, batch: int = 1) -> int:
    _positive(N=n, C=c, B=batch)
    return batch * (4 * n * c * c + 2 * n * n * c)


def macs_cross_attention(n_q: int, n_kv: int, c: int, batch: int = 1) -> int:
    _positive(N_q=n_q, N_kv=n_kv, C=c, B=batch)
    return batch * (2 * n_q * c * c + 2 * n_kv * c * c + 2 * n_q * n_kv * c)


def macs_lsp(n: int, c: int, r: int, batch: int = 1, input_map: bool = False) -> int:
    _positive(N=n, C=c, B=batch)
    _reduced(r, n, c)
    total = 2 * n * c + n * c * r + n * c * c
    if input_map:
        total += n * c * c
    return batch * total


def macs_lcp(n_q: int, n_kv: int, c: int, r: int, batch: int = 1) -> int:
    _positive(N_q=n_q, N_kv=n_kv, C=c, B=batch)
    _reduced(r, n_q, n_kv, c)
    return batch * (
        2 * n_q * c * c
        + 2 * n_kv * c * c
        + 2 * (n_q + n_kv) * c
        + (n_q + n_kv) * c * r
        + 2 * n_q * n_kv * c
    )


def macs_adaln(c_cond: int, c: int) -> int:
    return 2 * c_cond * c


def macs_mlp(n: int, c: int, ratio: int = 2) -> int:
    return 2 * ratio * n * c * c


def macs_branch_block(n_own: int, n_other: int, cfg: LdmpConfig, attention: Optional[str] = None) -> int:
    """One block of one branch: two AdaLNs, interaction, self kernel, MLP."""
    attention = cfg.attention if attention is None else attention
    c = cfg.C
    total = 2 * macs_adaln(cfg.c_hidden, c) + macs_mlp(n_own, c, cfg.mlp_ratio)
    if attention == "low_dim":
        total += macs_lcp(n_own, n_other, c, cfg.r_cross(n_own, n_other))
        total += macs_lsp(n_own, c, cfg.r_self(n_own), input_map=cfg.lsp_input_map)
    elif attention == "full":
        total += macs_cross_attention(n_own, n_other, c)
        total += macs_self_attention(n_own, c)
    else:
        raise ConfigurationError(f"unknown attention variant {attention!r}")
    return total


def macs_block(cfg: LdmpConfig, attention: Optional[str] = None) -> int:
    """One dual-branch block (mesh branch plus pose branch)."""
    return (macs_branch_block(cfg.n_verts, cfg.J, cfg, attention)
            + macs_branch_block(cfg.J, cfg.n_verts, cfg, attention))


def macs_ldmp(cfg: LdmpConfig, attention: Optional[str] = None) -> int:
    """Everything billed by ``run_ldmp``: lifts, ``n_blocks`` blocks, coordinate heads."""
    tokens = cfg.n_verts + cfg.J
    return 3 * cfg.C * tokens + cfg.n_blocks * macs_block(cfg, attention) + cfg.C * 3 * tokens


def macs_upsample(cfg: LdmpConfig, nnz: int) -> int:
    n, c = cfg.n_verts, cfg.C
    return 3 * c * n + macs_adaln(cfg.c_hidden, c) + macs_mlp(n, c, cfg.mlp_ratio) + 3 * c * n + 3 * nnz


def macs_lifd(t: int, c_img: int, c_hidden: int, kernel_size: int = 3) -> int:
    d = c_img // 2
    attention = 3 * t * d * d + 2 * t * t * d
    conv = t * d * kernel_size
    gru = t * c_img * 3 * c_hidden + t * c_hidden * 3 * c_hidden
    return attention + conv + gru


def params_kernel(kind: str, c: int, bias: bool = False, input_map: bool = False) -> int:
    """Number of scalars in a kernel's weight bundle."""
    _positive(C=c)
    if kind in ("self", "cross", "lcp"):
        return 4 * c * c + (4 * c if bias else 0)
    if kind == "lsp":
        return c * c + (c if bias else 0) + (c * c if input_map else 0)
    raise ConfigurationError(f"unknown kernel kind {kind!r}; expected self, cross, lsp or lcp")


def params_block(cfg: LdmpConfig, attention: Optional[str] = None) -> int:
    """Scalars in one dual-branch block's weights."""
    attention = cfg.attention if attention is None else attention
    c = cfg.C
    adaln = 2 * (cfg.c_hidden * c + c)
    mlp = 2 * cfg.mlp_ratio * c * c + cfg.mlp_ratio * c + c
    if attention == "low_dim":
        kernels = params_kernel("lcp", c, cfg.kernel_bias) + params_kernel("lsp", c, cfg.kernel_bias, cfg.lsp_input_map)
    else:
        kernels = params_kernel("cross", c, cfg.kernel_bias) + params_kernel("self", c, cfg.kernel_bias)
    return 2 * (2 * adaln + mlp + kernels)


# ---------------------------------------------------------------------------
# report


@dataclass
class CostEntry:
    name: str
    macs: int
    params: int
    baseline: Optional[str] = None
    reduction_pct: Optional[float] = None
    source: str = "measured"


@dataclass
class Comparison:
    baseline: str
    variant: str
    mac_reduction_pct: float


@dataclass
class CostReport:
    entries: List[CostEntry] = field(default_factory=list)
    comparisons: List[Comparison] = field(default_factory=list)

    CSV_COLUMNS = ("name", "macs", "params", "baseline", "reduction_pct", "source")

    def entry(self, name: str, source: str = "measured") -> CostEntry:
        for e in self.entries:
            if e.name == name and e.source == source:
                return e
        raise KeyError(f"{name} ({source})")

    def add(self, entry: CostEntry) -> CostEntry:
        if entry.macs < 0 or entry.params < 0:
            raise RangeError(f"negative count in {entry}")
        if entry.baseline is not None:
            base = self.entry(entry.baseline, entry.source)
            entry.reduction_pct = reduction_pct(base.macs, entry.macs)
            self.comparisons.append(Comparison(f"{base.name} ({entry.source})", f"{entry.name} ({entry.source})",
                                               entry.reduction_pct))
        self.entries.append(entry)
        return entry

    def extend(self, other: "CostReport") -> None:
        self.entries.extend(other.entries)
        self.comparisons.extend(other.comparisons)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.CSV_COLUMNS)
        for e in self.entries:
            writer.writerow([
                e.name, e.macs, e.params, e.baseline or "",
                "" if e.reduction_pct is None else f"{e.reduction_pct:.6f}", e.source,
            ])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "entries": [asdict(e) for e in self.entries],
            "comparisons": [asdict(c) for c in self.comparisons],
            "published_reduction_pct": dict(PUBLISHED_REDUCTION_PCT),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def reduction_pct(baseline_macs: int, variant_macs: int) -> float:
    return 100.0 * (1.0 - variant_macs / baseline_macs)


# (name, MACs, params, baseline row)
PUBLISHED_REFERENCE = [
    ("joint-SelfAttention", 46_660_000, 574_270, None),
    ("joint-LSP", 37_110_000, 558_270, "joint-SelfAttention"),
    ("joint-CrossAttention", 171_440_000, 1_125_370, None),
    ("joint-LCP", 54_810_000, 1_108_990, "joint-CrossAttention"),
    ("vertex-SelfAttention", 711_420_000, 574_270, None),
    ("vertex-LSP", 477_610_000, 558_270, "vertex-SelfAttention"),
    ("vertex-CrossAttention", 617_980_000, 1_125_370, None),
    ("vertex-LCP", 494_420_000, 1_108_990, "vertex-CrossAttention"),
    ("Coevoblock", 4_740_000_000, 10_060_000, None),
    ("LDMP", 3_360_000_000, 9_870_000, "Coevoblock"),
]

# the rounded percentages printed next to the reference values
PUBLISHED_REDUCTION_PCT = {
    "joint-LSP": 21.0,
    "joint-LCP": 69.0,
    "vertex-LSP": 33.0,
    "vertex-LCP": 20.0,
    "LDMP": 30.0,
}


def kernel_table(cfg: LdmpConfig) -> CostReport:
    """Analytical MACs/params of the four kernels on joint and vertex queries."""
    c, j, v = cfg.C, cfg.J, cfg.n_verts
    bias, imap = cfg.kernel_bias, cfg.lsp_input_map
    rep = CostReport()
    for prefix, n_own, n_other in (("joint", j, v), ("vertex", v, j)):
        rep.add(CostEntry(f"{prefix}-SelfAttention", macs_self_attention(n_own, c), params_kernel("self", c, bias)))
        rep.add(CostEntry(f"{prefix}-LSP", macs_lsp(n_own, c, cfg.r_self(n_own), input_map=imap),
                          params_kernel("lsp", c, bias, imap), baseline=f"{prefix}-SelfAttention"))
        rep.add(CostEntry(f"{prefix}-CrossAttention", macs_cross_attention(n_own, n_other, c),
                          params_kernel("cross", c, bias)))
        rep.add(CostEntry(f"{prefix}-LCP", macs_lcp(n_own, n_other, c, cfg.r_cross(n_own, n_other)),
                          params_kernel("lcp", c, bias), baseline=f"{prefix}-CrossAttention"))
    return rep


def block_comparison(cfg: LdmpConfig) -> CostReport:
    """Full-attention block versus low-dimensional block at identical token counts and width.

    Both tallies include the same AdaLN and MLP costs; only the interaction
    and self kernels differ.
    """
    rep = CostReport()
    rep.add(CostEntry("full-attention-block", macs_block(cfg, "full"), params_block(cfg, "full")))
    rep.add(CostEntry("ldmp-block", macs_block(cfg, "low_dim"), params_block(cfg, "low_dim"),
                      baseline="full-attention-block"))
    return rep


def published_reference_rows() -> CostReport:
    rep = CostReport()
    for name, macs, params, base in PUBLISHED_REFERENCE:
        rep.add(CostEntry(name, macs, params, baseline=base, source="published-reference"))
    return rep


def cost_report(cfg: LdmpConfig) -> CostReport:
    rep = kernel_table(cfg)
    rep.extend(block_comparison(cfg))
    rep.extend(published_reference_rows())
    return rep
