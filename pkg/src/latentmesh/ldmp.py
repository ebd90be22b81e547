"""Stage-2 mesh/pose interaction engine.

Two branches refine an embedded mesh template and an embedded pose. Each
block runs, with residual connections around every stage::

    AdaLN -> LCP (queries: own tokens, keys/values: other branch's embedding)
    AdaLN -> LSP
    MLP

The ``"full"`` attention variant swaps LCP/LSP for cross/self attention and
is the baseline used in cost comparisons. Branches only read the shared
embedded inputs and the conditioning vector, so they can run on two threads
and still give bitwise the same result as running them one after another.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np
import scipy.sparse as sp

from .attention import (
    KernelWeights,
    cross_attention,
    init_attention_weights,
    init_lsp_weights,
    lcp,
    lsp,
    self_attention,
)
from .errors import BranchError, ConfigurationError, DimensionError, TopologyError, ValidationError
from .tensor import CountingContext, as_tensor, linear

__all__ = [
    "LdmpConfig",
    "MeshState",
    "PoseState",
    "AdaLNWeights",
    "MlpWeights",
    "BlockWeights",
    "BranchWeights",
    "LdmpWeights",
    "RefineWeights",
    "init_ldmp_weights",
    "init_refine_weights",
    "adaln",
    "layer_norm",
    "gelu",
    "mlp",
    "embed_inputs",
    "mesh_branch",
    "pose_branch",
    "run_ldmp",
    "upsample",
    "duplication_upsample_matrix",
    "synthetic_mesh_state",
    "validate_upsample_matrix",
    "validate_faces",
    "mid_frame",
]

EXEC_MODES = ("sequential", "parallel")
ATTENTION_VARIANTS = ("low_dim", "full")
LN_EPS = 1e-5


@dataclass
class LdmpConfig:
    """Dimensions and execution settings for the stage-2 engine.

    ``r`` is the requested reduced extent. Inside a block each kernel uses
    ``min(r, extents it pools)``, so a single ``r`` can exceed the joint count.
    """

    T: int = 16
    J: int = 17
    n_verts: int = 431
    n_fine: int = 6890
    C: int = 512
    r: int = 64
    n_blocks: int = 2
    exec_mode: str = "parallel"
    seed: int = 0
    c_img: int = 2048
    c_hidden: int = 2048
    mlp_ratio: int = 2
    attention: str = "low_dim"
    kernel_bias: bool = False
    lsp_input_map: bool = False
    activation: str = "gelu_tanh"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("T", "J", "n_verts", "n_fine", "C", "r", "c_img", "c_hidden", "mlp_ratio"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n_blocks < 0:
            raise ConfigurationError(f"n_blocks must be non-negative, got {self.n_blocks}")
        if self.r > self.C:
            raise ConfigurationError(f"r={self.r} exceeds channel width C={self.C}")
        if self.c_img % 2:
            raise ConfigurationError(f"c_img must be even for the Haar split, got {self.c_img}")
        if self.exec_mode not in EXEC_MODES:
            raise ConfigurationError(f"exec_mode must be one of {EXEC_MODES}, got {self.exec_mode!r}")
        if self.attention not in ATTENTION_VARIANTS:
            raise ConfigurationError(f"attention must be one of {ATTENTION_VARIANTS}, got {self.attention!r}")
        if self.activation != "gelu_tanh":
            raise ConfigurationError(f"unsupported activation {self.activation!r}")

    def r_self(self, n: int) -> int:
        return min(self.r, n, self.C)

    def r_cross(self, n_q: int, n_kv: int) -> int:
        return min(self.r, n_q, n_kv, self.C)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LdmpConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# mesh and pose containers


def validate_upsample_matrix(u, n_fine=None, n_coarse=None, tol=1e-9) -> sp.csr_matrix:
    u = sp.csr_matrix(u, dtype=np.float64)
    if n_fine is not None and n_coarse is not None and u.shape != (n_fine, n_coarse):
        raise ValidationError(f"upsample matrix has shape {u.shape}, expected ({n_fine}, {n_coarse})")
    sums = np.asarray(u.sum(axis=1)).ravel()
    bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
    if bad.size:
        raise ValidationError(f"upsample matrix row {bad[0]} sums to {sums[bad[0]]!r}, rows must sum to 1")
    return u


def validate_faces(faces, n_vertices: int) -> np.ndarray:
    faces = np.asarray(faces)
    if faces.size == 0:
        return faces.reshape(0, 3).astype(np.int64)
    if faces.ndim != 2 or faces.shape[1] != 3:
        raise TopologyError(f"faces must be an F x 3 index array, got shape {faces.shape}")
    if not np.issubdtype(faces.dtype, np.integer):
        if not np.all(faces == np.round(faces)):
            raise TopologyError("face indices must be integers")
    faces = faces.astype(np.int64)
    if faces.min() < 0 or faces.max() >= n_vertices:
        raise TopologyError(f"face index out of range [0, {n_vertices}): min {faces.min()}, max {faces.max()}")
    return faces


@dataclass
class MeshState:
    """Coarse template, its topology, and the coarse-to-fine upsampling matrix."""

    template: np.ndarray
    upsample_matrix: sp.csr_matrix
    faces: np.ndarray
    fine_faces: np.ndarray
    intermediate: Optional[np.ndarray] = None
    detailed: Optional[np.ndarray] = None

    def __post_init__(self):
        self.template = as_tensor(self.template, 2, "template")
        if self.template.shape[1] != 3:
            raise DimensionError(f"template must be N x 3, got {self.template.shape}")
        n_coarse = self.template.shape[0]
        self.upsample_matrix = validate_upsample_matrix(self.upsample_matrix)
        if self.upsample_matrix.shape[1] != n_coarse:
            raise ValidationError(
                f"upsample matrix has {self.upsample_matrix.shape[1]} columns, template has {n_coarse} vertices"
            )
        self.faces = validate_faces(self.faces, n_coarse)
        self.fine_faces = validate_faces(self.fine_faces, self.upsample_matrix.shape[0])

    @property
    def n_coarse(self) -> int:
        return self.template.shape[0]

    @property
    def n_fine(self) -> int:
        return self.upsample_matrix.shape[0]


@dataclass
class PoseState:
    mid_3d: np.ndarray
    out_3d: Optional[np.ndarray] = None
    seq_2d: Optional[np.ndarray] = None


def mid_frame(poses) -> np.ndarray:
    """Pick the middle frame ``T // 2`` of a ``T x J x 3`` sequence; pass ``J x 3`` through."""
    poses = np.asarray(poses, dtype=np.float64)
    if poses.ndim == 3:
        return poses[poses.shape[0] // 2]
    if poses.ndim == 2:
        return poses
    raise DimensionError(f"poses must be J x 3 or T x J x 3, got {poses.shape}")


def strip_faces(n: int) -> np.ndarray:
    """Triangle strip ``(i, i+1, i+2)`` over ``n`` vertices."""
    i = np.arange(max(n - 2, 0))
    return np.stack([i, i + 1, i + 2], axis=1)


def duplication_upsample_matrix(n_fine: int, n_coarse: int) -> sp.csr_matrix:
    """Each fine vertex copies the coarse vertex ``floor(i * n_coarse / n_fine)``."""
    rows = np.arange(n_fine)
    cols = (rows * n_coarse) // n_fine
    return sp.csr_matrix((np.ones(n_fine), (rows, cols)), shape=(n_fine, n_coarse))


def _body_points(n: int) -> np.ndarray:
    # helix on an elongated cylinder, roughly body sized (metres)
    t = np.linspace(0.0, 1.0, n)
    ang = 2 * np.pi * 23.0 * t
    radius = 0.15 + 0.05 * np.sin(3 * np.pi * t)
    return np.stack([radius * np.cos(ang), 1.7 * t - 0.85, radius * np.sin(ang)], axis=1)


def synthetic_mesh_state(n_coarse: int = 431, n_fine: int = 6890) -> MeshState:
    """Asset-free stand-in for the body template and its upsampling matrix."""
    return MeshState(
        template=_body_points(n_coarse),
        upsample_matrix=duplication_upsample_matrix(n_fine, n_coarse),
        faces=strip_faces(n_coarse),
        fine_faces=strip_faces(n_fine),
    )


# ---------------------------------------------------------------------------
# weights


@dataclass
class AdaLNWeights:
    w_gamma: np.ndarray
    b_gamma: np.ndarray
    w_beta: np.ndarray
    b_beta: np.ndarray


@dataclass
class MlpWeights:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass
class BlockWeights:
    adaln_interact: AdaLNWeights
    interact: KernelWeights
    adaln_self: AdaLNWeights
    self_kernel: KernelWeights
    mlp: MlpWeights


@dataclass
class BranchWeights:
    lift_w: np.ndarray
    lift_b: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray
    blocks: List[BlockWeights] = field(default_factory=list)


@dataclass
class LdmpWeights:
    mesh: BranchWeights
    pose: BranchWeights


@dataclass
class RefineWeights:
    """Weights of the lift -> AdaLN -> MLP -> head refinement before upsampling."""

    lift_w: np.ndarray
    lift_b: np.ndarray
    adaln: AdaLNWeights
    mlp: MlpWeights
    head_w: np.ndarray
    head_b: np.ndarray


def _u(rng, shape, scale=0.05):
    return rng.uniform(-scale, scale, size=shape)


def _init_adaln(rng, c_cond, c):
    return AdaLNWeights(_u(rng, (c_cond, c)), _u(rng, (c,)), _u(rng, (c_cond, c)), _u(rng, (c,)))


def _init_mlp(rng, c, ratio):
    return MlpWeights(_u(rng, (c, ratio * c)), _u(rng, (ratio * c,)), _u(rng, (ratio * c, c)), _u(rng, (c,)))


def _init_block(rng, cfg: LdmpConfig) -> BlockWeights:
    c = cfg.C
    interact = init_attention_weights(rng, c, bias=cfg.kernel_bias)
    if cfg.attention == "low_dim":
        self_kernel = init_lsp_weights(rng, c, bias=cfg.kernel_bias, input_map=cfg.lsp_input_map)
    else:
        self_kernel = init_attention_weights(rng, c, bias=cfg.kernel_bias)
    return BlockWeights(
        adaln_interact=_init_adaln(rng, cfg.c_hidden, c),
        interact=interact,
        adaln_self=_init_adaln(rng, cfg.c_hidden, c),
        self_kernel=self_kernel,
        mlp=_init_mlp(rng, c, cfg.mlp_ratio),
    )


def _init_branch(rng, cfg: LdmpConfig) -> BranchWeights:
    c = cfg.C
    return BranchWeights(
        lift_w=_u(rng, (3, c), 1.0),
        lift_b=_u(rng, (c,)),
        head_w=_u(rng, (c, 3)),
        head_b=np.zeros(3),
        blocks=[_init_block(rng, cfg) for _ in range(cfg.n_blocks)],
    )


def init_ldmp_weights(cfg: LdmpConfig, rng=None) -> LdmpWeights:
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    mesh = _init_branch(rng, cfg)
    pose = _init_branch(rng, cfg)
    return LdmpWeights(mesh=mesh, pose=pose)


def init_refine_weights(cfg: LdmpConfig, rng=None) -> RefineWeights:
    rng = np.random.default_rng(cfg.seed + 1) if rng is None else rng
    c = cfg.C
    return RefineWeights(
        lift_w=_u(rng, (3, c), 1.0),
        lift_b=_u(rng, (c,)),
        adaln=_init_adaln(rng, cfg.c_hidden, c),
        mlp=_init_mlp(rng, c, cfg.mlp_ratio),
        head_w=_u(rng, (c, 3)),
        head_b=np.zeros(3),
    )


# ---------------------------------------------------------------------------
# stages


def layer_norm(h, eps=LN_EPS) -> np.ndarray:
    mu = h.mean(axis=-1, keepdims=True)
    var = ((h - mu) ** 2).mean(axis=-1, keepdims=True)
    return (h - mu) / np.sqrt(var + eps)


def adaln(ctx, h, cond, w: AdaLNWeights, eps=LN_EPS) -> np.ndarray:
    """Row-wise layer norm of ``h`` modulated as ``norm * (1 + gamma(cond)) + beta(cond)``.

    ``gamma`` and ``beta`` are affine maps of the conditioning vector;
    billed ``2 * len(cond) * C``.
    """
    h = as_tensor(h, 2, "AdaLN input")
    cond = as_tensor(cond, 1, "condition")
    if w.w_gamma.shape != (cond.shape[0], h.shape[1]) or w.w_beta.shape != w.w_gamma.shape:
        raise DimensionError(
            f"AdaLN maps {w.w_gamma.shape}/{w.w_beta.shape} do not fit condition {cond.shape} and features {h.shape}"
        )
    gamma = linear(ctx, cond[None, :], w.w_gamma, w.b_gamma)
    beta = linear(ctx, cond[None, :], w.w_beta, w.b_beta)
    return layer_norm(h, eps) * (1.0 + gamma) + beta


_GELU_K = math.sqrt(2.0 / math.pi)


def gelu(x):
    """Tanh approximation of GELU; ``gelu(0) == 0``."""
    return 0.5 * x * (1.0 + np.tanh(_GELU_K * (x + 0.044715 * x ** 3)))


def mlp(ctx, h, w: MlpWeights) -> np.ndarray:
    return linear(ctx, gelu(linear(ctx, h, w.w1, w.b1)), w.w2, w.b2)


def embed_inputs(ctx, template, pose, w: LdmpWeights):
    """Affine lift of vertex and joint coordinates from 3 to C channels."""
    template = as_tensor(template, 2, "mesh template")
    pose = as_tensor(pose, 2, "pose")
    if template.shape[1] != 3 or pose.shape[1] != 3:
        raise DimensionError(f"coordinates must be N x 3, got {template.shape} and {pose.shape}")
    mesh_f = linear(ctx, template, w.mesh.lift_w, w.mesh.lift_b)
    pose_f = linear(ctx, pose, w.pose.lift_w, w.pose.lift_b)
    return mesh_f, pose_f


def _run_blocks(ctx, cond, own, other, blocks, cfg: LdmpConfig):
    n_own, n_other = own.shape[0], other.shape[0]
    r_cross = cfg.r_cross(n_own, n_other)
    r_self = cfg.r_self(n_own)
    h = own
    for blk in blocks:
        a = adaln(ctx, h, cond, blk.adaln_interact)
        if cfg.attention == "low_dim":
            h = h + lcp(ctx, a[None], other[None], r_cross, blk.interact)[0]
        else:
            h = h + cross_attention(ctx, a[None], other[None], blk.interact)[0]
        a = adaln(ctx, h, cond, blk.adaln_self)
        if cfg.attention == "low_dim":
            h = h + lsp(ctx, a[None], r_self, blk.self_kernel)[0]
        else:
            h = h + self_attention(ctx, a[None], blk.self_kernel)[0]
        h = h + mlp(ctx, h, blk.mlp)
    return h


def mesh_branch(ctx, cond, mesh_f, pose_f, w: LdmpWeights, cfg: LdmpConfig) -> np.ndarray:
    """Refine vertex features; queries are vertices, keys/values are joints."""
    return _run_blocks(ctx, as_tensor(cond, 1, "condition"), as_tensor(mesh_f, 2), as_tensor(pose_f, 2),
                       w.mesh.blocks, cfg)


def pose_branch(ctx, cond, pose_f, mesh_f, w: LdmpWeights, cfg: LdmpConfig) -> np.ndarray:
    """Refine joint features; queries are joints, keys/values are vertices."""
    return _run_blocks(ctx, as_tensor(cond, 1, "condition"), as_tensor(pose_f, 2), as_tensor(mesh_f, 2),
                       w.pose.blocks, cfg)


_executor: Optional[ThreadPoolExecutor] = None


def _sub_thread() -> ThreadPoolExecutor:
    global _executor
    if _executor is None:
        _executor = ThreadPoolExecutor(max_workers=1, thread_name_prefix="ldmp-pose")
    return _executor


def run_ldmp(ctx, cond, template, pose, cfg: LdmpConfig, w: LdmpWeights, mode: Optional[str] = None):
    """Embed, refine both branches, and regress back to coordinates.

    Returns ``(mesh_coords, pose_coords)``. In ``"parallel"`` mode the pose
    branch runs on a worker thread while the calling thread runs the mesh
    branch; each lane bills a private :class:`CountingContext` that is folded
    into ``ctx`` after the join. ``pose`` may be ``J x 3`` or a ``T x J x 3``
    sequence, in which case its middle frame is used.
    """
    mode = cfg.exec_mode if mode is None else mode
    if mode not in EXEC_MODES:
        raise ConfigurationError(f"exec_mode must be one of {EXEC_MODES}, got {mode!r}")
    cond = as_tensor(cond, 1, "condition")
    if cond.shape[0] != cfg.c_hidden:
        raise DimensionError(f"condition has length {cond.shape[0]}, config expects {cfg.c_hidden}")
    mesh_f, pose_f = embed_inputs(ctx, template, mid_frame(pose), w)

    def mesh_lane(lane_ctx):
        h = mesh_branch(lane_ctx, cond, mesh_f, pose_f, w, cfg)
        return linear(lane_ctx, h, w.mesh.head_w, w.mesh.head_b)

    def pose_lane(lane_ctx):
        h = pose_branch(lane_ctx, cond, pose_f, mesh_f, w, cfg)
        return linear(lane_ctx, h, w.pose.head_w, w.pose.head_b)

    mesh_ctx, pose_ctx = CountingContext(), CountingContext()
    if mode == "sequential":
        mesh_out = _guarded("mesh", mesh_lane, mesh_ctx)
        pose_out = _guarded("pose", pose_lane, pose_ctx)
    else:
        future = _sub_thread().submit(pose_lane, pose_ctx)
        try:
            mesh_out = _guarded("mesh", mesh_lane, mesh_ctx)
        finally:
            pose_exc = future.exception()
        if pose_exc is not None:
            raise BranchError("pose", pose_exc) from pose_exc
        pose_out = future.result()
    if ctx is not None:
        ctx.merge(mesh_ctx, pose_ctx)
    return mesh_out, pose_out


def _guarded(name, fn, lane_ctx):
    try:
        return fn(lane_ctx)
    except Exception as exc:
        raise BranchError(name, exc) from exc


def upsample(ctx, coarse, mesh: MeshState, cond, w: RefineWeights) -> np.ndarray:
    """Refine the coarse mesh and map it to the fine vertex set.

    ``h = lift(coarse); h = h + MLP(AdaLN(h, cond)); fine = U @ head(h)``.
    The sparse product bills ``3 * nnz(U)``.
    """
    coarse = as_tensor(coarse, 2, "coarse mesh")
    if coarse.shape != (mesh.n_coarse, 3):
        raise DimensionError(f"coarse mesh has shape {coarse.shape}, expected ({mesh.n_coarse}, 3)")
    h = linear(ctx, coarse, w.lift_w, w.lift_b)
    h = h + mlp(ctx, adaln(ctx, h, cond, w.adaln), w.mlp)
    refined = linear(ctx, h, w.head_w, w.head_b)
    if ctx is not None:
        ctx.add(3 * mesh.upsample_matrix.nnz)
    return np.asarray(mesh.upsample_matrix @ refined)
