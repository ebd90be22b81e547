"""Verification, cost, timing and end-to-end run commands.

Each ``cmd_*`` function takes a :class:`RunManifest`, does its work, writes
its files into ``manifest.out`` (when set) and returns a JSON-serialisable
report. Inputs are all loaded and validated before any computation or
output, so a bad path never leaves partial results behind.
"""
from __future__ import annotations

import json
import os
import statistics
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import cost
from .attention import cross_attention, init_attention_weights, init_lsp_weights, lcp, lsp, self_attention
from .errors import AssetError, ConfigurationError, LatentMeshError
from .io import load_mesh_assets, load_tensor, load_weights, save_tensor
from .ldmp import LdmpConfig, MeshState, init_ldmp_weights, mid_frame, run_ldmp, synthetic_mesh_state
from .metrics import (
    LossWeights,
    loss_edge,
    loss_joint,
    loss_mesh,
    loss_normal,
    mpjpe,
    mpvpe,
    pa_mpjpe,
    regress_joints,
    total_loss,
)
from .pipeline import (
    ModelWeights,
    init_model_weights,
    run_pipeline,
    synthetic_features,
    synthetic_pose_sequence,
)
from .reference import naive_attention
from .tensor import CountingContext
from .wavelet import SQRT2, WaveletPair, dwt_haar, idwt_haar

__all__ = [
    "CheckFailure",
    "RunManifest",
    "Inputs",
    "load_manifest",
    "load_inputs",
    "cmd_verify",
    "cmd_cost",
    "cmd_timing",
    "cmd_run",
]


class CheckFailure(LatentMeshError):
    """A verification or consistency check did not hold."""


@dataclass
class RunManifest:
    config: LdmpConfig = field(default_factory=LdmpConfig)
    synthetic: bool = False
    features: Optional[Path] = None
    poses: Optional[Path] = None
    mesh_assets: Optional[Path] = None
    weights: Optional[Path] = None
    joint_regressor: Optional[Path] = None
    ground_truth: dict = field(default_factory=dict)
    metrics: bool = False
    out: Optional[Path] = None

    def input_paths(self):
        paths = [self.features, self.poses, self.mesh_assets, self.weights, self.joint_regressor]
        paths += list(self.ground_truth.values())
        return [p for p in paths if p is not None]


_PATH_KEYS = ("features", "poses", "mesh_assets", "weights", "joint_regressor")


def load_manifest(path=None, *, seed=None, synthetic=None, out=None, mode=None, overrides=None) -> RunManifest:
    """Read a JSON manifest (or start from defaults) and apply command-line overrides.

    Relative paths inside the manifest are resolved against its directory.
    """
    raw = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise AssetError(path, "manifest not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON manifest: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigurationError(f"{path}: manifest must be a JSON object")
        base = path.parent
    known = set(_PATH_KEYS) | {"config", "seed", "synthetic", "ground_truth", "metrics", "out"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigurationError(f"unknown manifest keys: {sorted(unknown)}")

    cfg_dict = dict(raw.get("config", {}))
    cfg_dict.update(overrides or {})
    if "seed" in raw:
        cfg_dict["seed"] = raw["seed"]
    if seed is not None:
        cfg_dict["seed"] = seed
    if mode is not None:
        cfg_dict["exec_mode"] = mode
    try:
        cfg = LdmpConfig.from_dict(cfg_dict)
    except TypeError as exc:
        raise ConfigurationError(f"bad config: {exc}") from exc

    def resolve(p):
        return None if p is None else (base / p)

    gt = raw.get("ground_truth") or {}
    if set(gt) - {"mesh", "joints"}:
        raise ConfigurationError(f"ground_truth accepts 'mesh' and 'joints', got {sorted(gt)}")
    return RunManifest(
        config=cfg,
        synthetic=bool(raw.get("synthetic", False)) if synthetic is None else synthetic,
        ground_truth={k: resolve(v) for k, v in gt.items()},
        metrics=bool(raw.get("metrics", False)),
        out=Path(out) if out is not None else resolve(raw.get("out")),
        **{k: resolve(raw.get(k)) for k in _PATH_KEYS},
    )


@dataclass
class Inputs:
    features: np.ndarray
    poses: np.ndarray
    mesh: MeshState
    weights: ModelWeights
    joint_regressor: Optional[np.ndarray] = None
    gt_mesh: Optional[np.ndarray] = None
    gt_joints: Optional[np.ndarray] = None


def load_inputs(manifest: RunManifest) -> Inputs:
    """Load and check every input, synthesising the ones not given when ``synthetic`` is set."""
    cfg = manifest.config
    for p in manifest.input_paths():
        if not Path(p).exists():
            raise AssetError(p, "file not found")

    def need(name):
        if not manifest.synthetic:
            raise ConfigurationError(f"no {name} given; pass a path in the manifest or use --synthetic")

    if manifest.features is not None:
        features = load_tensor(manifest.features)
        if features.shape != (cfg.T, cfg.c_img):
            raise AssetError(manifest.features, f"features have shape {features.shape}, config expects "
                                                f"({cfg.T}, {cfg.c_img})")
    else:
        need("features")
        features = synthetic_features(cfg.T, cfg.c_img, cfg.seed)

    if manifest.poses is not None:
        poses = load_tensor(manifest.poses)
        if poses.shape not in ((cfg.T, cfg.J, 3), (cfg.J, 3)):
            raise AssetError(manifest.poses, f"poses have shape {poses.shape}, expected T x J x 3 or J x 3")
    else:
        need("poses")
        poses = synthetic_pose_sequence(cfg.T, cfg.J, cfg.seed)

    if manifest.mesh_assets is not None:
        mesh = load_mesh_assets(manifest.mesh_assets)
        if (mesh.n_coarse, mesh.n_fine) != (cfg.n_verts, cfg.n_fine):
            raise AssetError(manifest.mesh_assets, f"mesh has {mesh.n_coarse}/{mesh.n_fine} vertices, config "
                                                   f"expects {cfg.n_verts}/{cfg.n_fine}")
    else:
        need("mesh assets")
        mesh = synthetic_mesh_state(cfg.n_verts, cfg.n_fine)

    weights = init_model_weights(cfg)
    if manifest.weights is not None:
        weights = load_weights(manifest.weights, weights)
    else:
        need("weights")

    regressor = None
    if manifest.joint_regressor is not None:
        regressor = load_tensor(manifest.joint_regressor)
        if regressor.shape != (cfg.J, cfg.n_fine):
            raise AssetError(manifest.joint_regressor, f"regressor shape {regressor.shape}, expected "
                                                       f"({cfg.J}, {cfg.n_fine})")

    gt_mesh = gt_joints = None
    if "mesh" in manifest.ground_truth:
        gt_mesh = load_tensor(manifest.ground_truth["mesh"])
        if gt_mesh.shape != (cfg.n_fine, 3):
            raise AssetError(manifest.ground_truth["mesh"], f"ground-truth mesh shape {gt_mesh.shape}")
    if "joints" in manifest.ground_truth:
        gt_joints = load_tensor(manifest.ground_truth["joints"])
        if gt_joints.shape != (cfg.J, 3):
            raise AssetError(manifest.ground_truth["joints"], f"ground-truth joints shape {gt_joints.shape}")
    if manifest.metrics and gt_mesh is None and gt_joints is None:
        raise ConfigurationError("metrics requested but no ground truth supplied")
    return Inputs(features, poses, mesh, weights, regressor, gt_mesh, gt_joints)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _ensure_out(manifest: RunManifest) -> Optional[Path]:
    if manifest.out is None:
        return None
    manifest.out.mkdir(parents=True, exist_ok=True)
    return manifest.out


# ---------------------------------------------------------------------------
# verify


def _faulty_idwt(pair: WaveletPair) -> np.ndarray:
    # sign of the detail term flipped in the odd samples
    even = (pair.low + pair.high) / SQRT2
    odd = (pair.low + pair.high) / SQRT2
    out = np.stack([even, odd], axis=pair.axis % pair.low.ndim + 1)
    shape = list(pair.low.shape)
    shape[pair.axis % pair.low.ndim] *= 2
    return out.reshape(shape)


def _check(name, deviation, tolerance, strict=False):
    passed = deviation == 0 if strict else deviation < tolerance
    return {"name": name, "passed": bool(passed), "deviation": float(deviation), "tolerance": float(tolerance)}


def check_dwt_roundtrip(rng, trials=100, shape=(16, 2048), inject_fault=False):
    inverse = _faulty_idwt if inject_fault else idwt_haar
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(shape)
        worst = max(worst, float(np.abs(inverse(dwt_haar(x, axis=-1)) - x).max()))
    return _check("dwt_roundtrip", worst, 1e-12)


def check_attention_oracle(rng, trials=20):
    worst = 0.0
    for _ in range(trials):
        n_q, n_kv, c = (int(v) for v in rng.integers(1, 9, size=3))
        w = init_attention_weights(rng, c, scale=0.5)
        xq = rng.standard_normal((1, n_q, c))
        xkv = rng.standard_normal((1, n_kv, c))
        got_self = self_attention(None, xq, w)[0]
        got_cross = cross_attention(None, xq, xkv, w)[0]
        ref_self = naive_attention(xq[0], xq[0], w.w_q, w.w_k, w.w_v, w.w_out)
        ref_cross = naive_attention(xq[0], xkv[0], w.w_q, w.w_k, w.w_v, w.w_out)
        worst = max(worst, float(np.abs(got_self - ref_self).max()), float(np.abs(got_cross - ref_cross).max()))
    return _check("attention_oracle_parity", worst, 1e-10)


def _kernel_parity(rng, trials=20):
    worst = 0
    for _ in range(trials):
        n_q, n_kv = (int(v) for v in rng.integers(1, 12, size=2))
        c = int(rng.integers(1, 12))
        r = int(rng.integers(1, min(n_q, n_kv, c) + 1))
        w = init_attention_weights(rng, c)
        wl = init_lsp_weights(rng, c, input_map=bool(rng.integers(2)))
        xq = rng.standard_normal((1, n_q, c))
        xkv = rng.standard_normal((1, n_kv, c))
        r_self = min(r, n_q, c)
        pairs = [
            (lambda ctx: self_attention(ctx, xq, w), cost.macs_self_attention(n_q, c)),
            (lambda ctx: cross_attention(ctx, xq, xkv, w), cost.macs_cross_attention(n_q, n_kv, c)),
            (lambda ctx: lsp(ctx, xq, r_self, wl), cost.macs_lsp(n_q, c, r_self, input_map=wl.w_in is not None)),
            (lambda ctx: lcp(ctx, xq, xkv, r, w), cost.macs_lcp(n_q, n_kv, c, r)),
        ]
        for fn, expected in pairs:
            ctx = CountingContext()
            fn(ctx)
            worst = max(worst, abs(ctx.mac_count - expected))
    return worst


def _ldmp_parity(cfg: LdmpConfig, weights, template, pose, cond):
    worst = 0
    for attention in ("low_dim", "full"):
        c = replace(cfg, attention=attention)
        w = weights if attention == cfg.attention and weights is not None else init_ldmp_weights(c)
        ctx = CountingContext()
        run_ldmp(ctx, cond, template, pose, c, w, mode="sequential")
        worst = max(worst, abs(ctx.mac_count - cost.macs_ldmp(c)))
    return worst


def check_mac_parity(rng, cfg, weights, template, pose, cond):
    worst = max(_kernel_parity(rng), _ldmp_parity(cfg, weights, template, pose, cond))
    return _check("mac_parity", worst, 0, strict=True)


def check_parallel_equality(cfg, weights, template, pose, cond):
    seq = run_ldmp(None, cond, template, pose, cfg, weights, mode="sequential")
    par = run_ldmp(None, cond, template, pose, cfg, weights, mode="parallel")
    equal = all(np.array_equal(a, b) for a, b in zip(seq, par))
    deviation = 0.0 if equal else max(float(np.abs(a - b).max()) for a, b in zip(seq, par))
    out = _check("parallel_sequential_equality", deviation, 0, strict=True)
    out["passed"] = bool(equal)
    return out


def cmd_verify(manifest: RunManifest, inject_fault: bool = False) -> dict:
    inputs = load_inputs(manifest)
    cfg = manifest.config
    rng = np.random.default_rng([cfg.seed, 100])
    cond = np.random.default_rng([cfg.seed, 101]).standard_normal(cfg.c_hidden)
    pose = mid_frame(inputs.poses)
    checks = [
        check_dwt_roundtrip(rng, inject_fault=inject_fault),
        check_attention_oracle(rng),
        check_mac_parity(rng, cfg, inputs.weights.ldmp, inputs.mesh.template, pose, cond),
        check_parallel_equality(cfg, inputs.weights.ldmp, inputs.mesh.template, pose, cond),
    ]
    report = {"command": "verify", "config": cfg.to_dict(), "checks": checks,
              "passed": all(c["passed"] for c in checks)}
    out = _ensure_out(manifest)
    if out is not None:
        _write_json(out / "verify.json", report)
    return report


# ---------------------------------------------------------------------------
# cost


def _measured_kernel_macs(cfg: LdmpConfig, rng) -> dict:
    c, bias, imap = cfg.C, cfg.kernel_bias, cfg.lsp_input_map
    w = init_attention_weights(rng, c, bias=bias)
    wl = init_lsp_weights(rng, c, bias=bias, input_map=imap)
    out = {}
    for prefix, n_own, n_other in (("joint", cfg.J, cfg.n_verts), ("vertex", cfg.n_verts, cfg.J)):
        x = rng.standard_normal((1, n_own, c))
        y = rng.standard_normal((1, n_other, c))
        runs = {
            "SelfAttention": lambda ctx: self_attention(ctx, x, w),
            "LSP": lambda ctx: lsp(ctx, x, cfg.r_self(n_own), wl),
            "CrossAttention": lambda ctx: cross_attention(ctx, x, y, w),
            "LCP": lambda ctx: lcp(ctx, x, y, cfg.r_cross(n_own, n_other), w),
        }
        for name, fn in runs.items():
            ctx = CountingContext()
            fn(ctx)
            out[f"{prefix}-{name}"] = ctx.mac_count
    one = replace(cfg, n_blocks=1)
    overhead = cost.macs_ldmp(replace(cfg, n_blocks=0))
    cond = rng.standard_normal(cfg.c_hidden)
    template = rng.standard_normal((cfg.n_verts, 3))
    pose = rng.standard_normal((cfg.J, 3))
    for name, attention in (("full-attention-block", "full"), ("ldmp-block", "low_dim")):
        c1 = replace(one, attention=attention)
        ctx = CountingContext()
        run_ldmp(ctx, cond, template, pose, c1, init_ldmp_weights(c1), mode="sequential")
        out[name] = ctx.mac_count - overhead
    return out


def r_sweep(cfg: LdmpConfig, values=None) -> list:
    values = values or sorted({1, 2, 4, 8, 16, 32, 64, 128, 256, cfg.r} & set(range(1, cfg.C + 1)))
    rows = []
    for r in values:
        sweep_cfg = replace(cfg, r=r)
        row = {"r": r}
        for prefix, n_own, n_other in (("joint", cfg.J, cfg.n_verts), ("vertex", cfg.n_verts, cfg.J)):
            row[f"{prefix}-LSP"] = cost.macs_lsp(n_own, cfg.C, sweep_cfg.r_self(n_own), input_map=cfg.lsp_input_map)
            row[f"{prefix}-LCP"] = cost.macs_lcp(n_own, n_other, cfg.C, sweep_cfg.r_cross(n_own, n_other))
        row["ldmp-block"] = cost.macs_block(sweep_cfg, "low_dim")
        rows.append(row)
    return rows


def cmd_cost(manifest: RunManifest) -> dict:
    cfg = manifest.config
    report = cost.cost_report(cfg)
    measured = _measured_kernel_macs(cfg, np.random.default_rng([cfg.seed, 200]))
    mismatches = {name: (report.entry(name).macs, macs) for name, macs in measured.items()
                  if report.entry(name).macs != macs}
    if mismatches:
        raise CheckFailure(f"instrumented MACs differ from the closed forms: {mismatches}")
    sweep = r_sweep(cfg)
    result = report.to_dict()
    result.update({"command": "cost", "config": cfg.to_dict(), "r_sweep": sweep, "instrumented": measured})
    out = _ensure_out(manifest)
    if out is not None:
        (out / "cost.csv").write_text(report.to_csv())
        _write_json(out / "cost.json", result)
        keys = list(sweep[0])
        lines = [",".join(keys)] + [",".join(str(row[k]) for k in keys) for row in sweep]
        (out / "cost_r_sweep.csv").write_text("\n".join(lines) + "\n")
    return result


# ---------------------------------------------------------------------------
# timing


def available_cores() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def _stats(samples):
    return {
        "mean_ms": 1e3 * statistics.fmean(samples),
        "min_ms": 1e3 * min(samples),
        "stddev_ms": 1e3 * statistics.stdev(samples) if len(samples) > 1 else None,
        "samples_ms": [1e3 * s for s in samples],
    }


def cmd_timing(manifest: RunManifest, repeats: int = 20, min_speedup: float = 1.05) -> dict:
    """Time ``run_ldmp`` in both modes; only the forward call is inside the timed region."""
    if repeats < 1:
        raise ConfigurationError(f"repeats must be >= 1, got {repeats}")
    inputs = load_inputs(manifest)
    cfg = manifest.config
    cond = np.random.default_rng([cfg.seed, 300]).standard_normal(cfg.c_hidden)
    template, pose, w = inputs.mesh.template, mid_frame(inputs.poses), inputs.weights.ldmp
    # warm caches and the worker thread
    run_ldmp(None, cond, template, pose, cfg, w, mode="sequential")
    run_ldmp(None, cond, template, pose, cfg, w, mode="parallel")
    seq_t, par_t, equal = [], [], []
    for _ in range(repeats):
        t0 = time.perf_counter()
        seq = run_ldmp(None, cond, template, pose, cfg, w, mode="sequential")
        t1 = time.perf_counter()
        par = run_ldmp(None, cond, template, pose, cfg, w, mode="parallel")
        t2 = time.perf_counter()
        seq_t.append(t1 - t0)
        par_t.append(t2 - t1)
        equal.append(all(np.array_equal(a, b) for a, b in zip(seq, par)))
    cores = available_cores()
    speedup = statistics.fmean(seq_t) / statistics.fmean(par_t)
    warnings = []
    if cores < 2:
        warnings.append(f"only {cores} core available; the two lanes cannot overlap, speedup criterion waived")
        speedup_ok = None
    else:
        speedup_ok = speedup >= min_speedup
    report = {
        "command": "timing",
        "config": cfg.to_dict(),
        "repeats": repeats,
        "cores": cores,
        "sequential": _stats(seq_t),
        "parallel": _stats(par_t),
        "speedup": speedup,
        "min_speedup": min_speedup,
        "speedup_ok": speedup_ok,
        "bitwise_equal": equal,
        "all_equal": all(equal),
        "published_reference": {"sequential_ms": 7.515, "parallel_ms": 6.592, "speedup": 1.14},
        "warnings": warnings,
    }
    out = _ensure_out(manifest)
    if out is not None:
        _write_json(out / "timing.json", report)
    if not all(equal):
        raise CheckFailure(f"parallel and sequential outputs differ in {equal.count(False)} of {repeats} repeats")
    return report


# ---------------------------------------------------------------------------
# run


def cmd_run(manifest: RunManifest) -> dict:
    """Forward pass from features to detailed mesh; writes tensors and JSON summaries."""
    inputs = load_inputs(manifest)
    if manifest.out is None:
        raise ConfigurationError("run needs an output directory (--out)")
    cfg = manifest.config
    result = run_pipeline(inputs.features, inputs.poses, inputs.mesh, cfg, inputs.weights)

    metrics, losses = {}, {}
    if inputs.gt_mesh is not None:
        metrics["mpvpe"] = mpvpe(result.mesh_fine, inputs.gt_mesh)
        losses["mesh"] = loss_mesh(result.mesh_fine, inputs.gt_mesh)
        losses["normal"] = loss_normal(result.mesh_fine, inputs.mesh.fine_faces, inputs.gt_mesh)
        losses["edge"] = loss_edge(result.mesh_fine, inputs.mesh.fine_faces, inputs.gt_mesh)
    if inputs.gt_joints is not None:
        metrics["mpjpe"] = mpjpe(result.pose, inputs.gt_joints)
        metrics["pa_mpjpe"] = pa_mpjpe(result.pose, inputs.gt_joints)
        losses["joint"] = loss_joint(result.pose, inputs.gt_joints)
    if inputs.joint_regressor is not None and inputs.gt_mesh is not None:
        metrics["mesh_joint_mpjpe"] = mpjpe(regress_joints(inputs.joint_regressor, result.mesh_fine),
                                            regress_joints(inputs.joint_regressor, inputs.gt_mesh))
    if len(losses) == 4:
        losses["total"] = total_loss(losses["mesh"], losses["joint"], losses["normal"], losses["edge"],
                                     LossWeights())

    out = _ensure_out(manifest)
    save_tensor(out / "mesh_intermediate.f32", result.mesh_coarse)
    save_tensor(out / "mesh_detailed.f32", result.mesh_fine)
    save_tensor(out / "pose_out.f32", result.pose)
    _write_json(out / "macs.json", result.macs)
    if metrics or manifest.metrics:
        _write_json(out / "metrics.json", metrics)
    if losses:
        _write_json(out / "losses.json", losses)
    summary = {
        "command": "run",
        "config": cfg.to_dict(),
        "shapes": {
            "mesh_intermediate": list(result.mesh_coarse.shape),
            "mesh_detailed": list(result.mesh_fine.shape),
            "pose_out": list(result.pose.shape),
        },
        "macs": result.macs,
        "metrics": metrics,
        "losses": losses,
    }
    _write_json(out / "run.json", summary)
    return summary
