"""One test per acceptance criterion; each records a PASS/FAIL/WAIVED line for the summary."""
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from latentmesh import bench
from latentmesh.attention import (
    KernelWeights,
    cross_attention,
    init_attention_weights,
    init_lsp_weights,
    lcp,
    lsp,
    self_attention,
)
from latentmesh.cost import (
    PUBLISHED_REDUCTION_PCT,
    block_comparison,
    kernel_table,
    macs_cross_attention,
    macs_lcp,
    macs_ldmp,
    macs_lsp,
    macs_self_attention,
)
from latentmesh.io import load_tensor
from latentmesh.ldmp import LdmpConfig, init_ldmp_weights, run_ldmp
from latentmesh.metrics import accel_err, mpjpe, pa_mpjpe, total_loss
from latentmesh.reference import naive_attention
from latentmesh.tensor import CountingContext
from latentmesh.wavelet import dwt_haar, idwt_haar

from .conftest import ACCEPTANCE_LINES


@pytest.fixture
def record(request):
    """Append one summary line per criterion, PASS unless the test body failed or waived it."""
    state = {"status": None, "detail": ""}
    yield state
    failed = request.node.rep_call.failed if hasattr(request.node, "rep_call") else True
    status = "FAIL" if failed else (state["status"] or "PASS")
    line = f"[{status}] {request.node.name.removeprefix('test_')}: {state['detail']}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def test_criterion_1_dwt_perfect_reconstruction(record):
    rng = np.random.default_rng(1)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(100):
        x = rng.standard_normal((16, 2048))
        worst = max(worst, float(np.abs(idwt_haar(dwt_haar(x)) - x).max()))
    elapsed = time.perf_counter() - t0
    record["detail"] = f"max error {worst:.2e} over 100 inputs in {elapsed:.3f} s"
    assert worst < 1e-12
    assert elapsed < 1.0


def test_criterion_2_attention_oracle_parity(record):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        n_q, n_kv = (int(v) for v in rng.integers(1, 17, size=2))
        c = int(rng.integers(1, 33))
        w = init_attention_weights(rng, c, scale=1.0 / np.sqrt(c))
        xq, xkv = rng.standard_normal((1, n_q, c)), rng.standard_normal((1, n_kv, c))
        ref_self = naive_attention(xq[0], xq[0], w.w_q, w.w_k, w.w_v, w.w_out)
        ref_cross = naive_attention(xq[0], xkv[0], w.w_q, w.w_k, w.w_v, w.w_out)
        worst = max(worst, np.abs(self_attention(None, xq, w)[0] - ref_self).max(),
                    np.abs(cross_attention(None, xq, xkv, w)[0] - ref_cross).max())
    record["detail"] = f"max deviation {worst:.2e} over 100 configs"
    assert worst < 1e-10


def test_criterion_3_mac_parity(record):
    rng = np.random.default_rng(3)
    mismatches = 0
    for _ in range(50):
        b = int(rng.integers(1, 3))
        n_q, n_kv, c = (int(v) for v in rng.integers(1, 13, size=3))
        r = int(rng.integers(1, min(n_q, n_kv, c) + 1))
        w, wl = init_attention_weights(rng, c), init_lsp_weights(rng, c, input_map=bool(rng.integers(2)))
        xq, xkv = rng.standard_normal((b, n_q, c)), rng.standard_normal((b, n_kv, c))
        r_self = min(r, n_q)
        cases = [
            (lambda ctx: self_attention(ctx, xq, w), macs_self_attention(n_q, c, b)),
            (lambda ctx: cross_attention(ctx, xq, xkv, w), macs_cross_attention(n_q, n_kv, c, b)),
            (lambda ctx: lsp(ctx, xq, r_self, wl), macs_lsp(n_q, c, r_self, b, wl.w_in is not None)),
            (lambda ctx: lcp(ctx, xq, xkv, r, w), macs_lcp(n_q, n_kv, c, r, b)),
        ]
        cfg = LdmpConfig(J=n_kv, n_verts=n_q, C=c, r=r, n_blocks=int(rng.integers(1, 3)),
                         c_hidden=int(rng.integers(1, 6)), c_img=4, attention=("low_dim", "full")[int(rng.integers(2))],
                         kernel_bias=bool(rng.integers(2)), lsp_input_map=bool(rng.integers(2)))
        cond, tpl, pose = rng.standard_normal(cfg.c_hidden), rng.standard_normal((n_q, 3)), rng.standard_normal((n_kv, 3))
        cases.append((lambda ctx: run_ldmp(ctx, cond, tpl, pose, cfg, init_ldmp_weights(cfg)), macs_ldmp(cfg)))
        for fn, expected in cases:
            ctx = CountingContext()
            fn(ctx)
            mismatches += ctx.mac_count != expected
    record["detail"] = f"{mismatches} mismatches over 50 configs x 5 kernels/blocks"
    assert mismatches == 0


def test_criterion_4_lsp_dominance(record):
    violations = 0
    for n in (1, 2, 5, 17, 64, 431):
        for c in (1, 8, 64, 512):
            for r in sorted({1, 2, 8, 32, 64, min(n, c)}):
                if r <= min(n, c):
                    violations += macs_lsp(n, c, r) >= macs_self_attention(n, c)
    reduction = 100.0 * (1 - macs_lsp(431, 512, 64) / macs_self_attention(431, 512))
    record["detail"] = (f"{violations} sweep violations; N=431 C=512 r=64 reduction {reduction:.1f}% "
                        f"(published {PUBLISHED_REDUCTION_PCT['vertex-LSP']:.0f}%)")
    assert violations == 0
    assert reduction >= 30.0
    assert kernel_table(LdmpConfig()).entry("vertex-LSP").reduction_pct == pytest.approx(reduction)


def test_criterion_5_block_reduction(record):
    rep = block_comparison(LdmpConfig(n_verts=431, J=17, C=512, r=64))
    pct = rep.entry("ldmp-block").reduction_pct
    record["detail"] = f"block MAC reduction {pct:.1f}% (published {PUBLISHED_REDUCTION_PCT['LDMP']:.0f}%)"
    assert pct >= 20.0


def test_criterion_6_parallel_correctness(record, tmp_path):
    manifest = bench.load_manifest(None, synthetic=True, out=tmp_path)
    t0 = time.perf_counter()
    report = bench.cmd_timing(manifest, repeats=20)
    elapsed = time.perf_counter() - t0
    record["detail"] = (f"{sum(report['bitwise_equal'])}/20 bitwise equal, speedup {report['speedup']:.3f} "
                        f"on {report['cores']} core(s), {elapsed:.1f} s")
    assert report["bitwise_equal"] == [True] * 20
    assert elapsed < 30.0
    if report["cores"] < 2:
        assert report["speedup_ok"] is None and report["warnings"]
        record["status"] = "WAIVED"
        record["detail"] += "; speedup waived on a single core"
    else:
        assert report["speedup"] >= 1.05


def test_criterion_7_low_rank_degeneration(record):
    # with N = C = r both pools are identities and the kernels reduce to dense bilinear products
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 9))
        x, y = rng.standard_normal((n, n)), rng.standard_normal((n, n))
        w = init_attention_weights(rng, n, scale=1.0)
        wl = KernelWeights(w_out=w.w_out)
        dense_lsp = x @ x @ w.w_out
        q, k, v = x @ w.w_q, y @ w.w_k, y @ w.w_v
        dense_lcp = (q @ k @ q.T @ k.T @ v) @ w.w_out
        worst = max(worst, np.abs(lsp(None, x[None], n, wl)[0] - dense_lsp).max(),
                    np.abs(lcp(None, x[None], y[None], n, w)[0] - dense_lcp).max())
    record["detail"] = f"max deviation {worst:.2e} over 20 configs"
    assert worst < 1e-10


def _hand_accel_err(pred, gt):
    total, count = 0.0, 0
    for t in range(1, len(pred) - 1):
        for j in range(pred.shape[1]):
            d = [(pred[t + 1, j, a] - 2 * pred[t, j, a] + pred[t - 1, j, a])
                 - (gt[t + 1, j, a] - 2 * gt[t, j, a] + gt[t - 1, j, a]) for a in range(3)]
            total += sum(v * v for v in d) ** 0.5
            count += 1
    return total / count


def test_criterion_8_metrics_sanity(record):
    rng = np.random.default_rng(8)
    gt = rng.standard_normal((17, 3))
    moved = 1.3 * gt @ Rotation.random(random_state=8).as_matrix() + rng.standard_normal(3)
    pa = pa_mpjpe(moved, gt)
    shift = mpjpe(gt + rng.standard_normal(3), gt)
    seq = np.cumsum(rng.standard_normal((12, 17, 3)), axis=0)
    pred, target = seq[1:], seq[:-1]
    accel_dev = abs(accel_err(pred, target) - _hand_accel_err(pred, target))
    loss = total_loss(1, 1, 1, 1)
    record["detail"] = f"pa_mpjpe {pa:.1e}, shifted mpjpe {shift:.1e}, accel dev {accel_dev:.1e}, loss {loss!r}"
    assert pa < 1e-6
    assert shift < 1e-12
    assert accel_dev < 1e-9
    assert loss == 22.1


def test_criterion_9_end_to_end_determinism(record, tmp_path):
    outs = []
    t0 = time.perf_counter()
    for k in range(2):
        out = tmp_path / f"run{k}"
        proc = subprocess.run([sys.executable, "-m", "latentmesh", "run", "--synthetic", "--seed", "7",
                               "--out", str(out)], capture_output=True, text=True, timeout=300)
        assert proc.returncode == 0, proc.stderr
        outs.append(out)
    elapsed = (time.perf_counter() - t0) / 2
    shapes = {name: load_tensor(outs[0] / name).shape
              for name in ("mesh_intermediate.f32", "mesh_detailed.f32", "pose_out.f32")}
    identical = all((outs[0] / f.name).read_bytes() == f.read_bytes() for f in outs[1].iterdir())
    record["detail"] = f"shapes {list(shapes.values())}, byte-identical {identical}, {elapsed:.1f} s per run"
    assert shapes == {"mesh_intermediate.f32": (431, 3), "mesh_detailed.f32": (6890, 3), "pose_out.f32": (17, 3)}
    assert identical
    assert elapsed < 60.0
