"""Training losses and evaluation metrics for mesh and joint predictions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegeneracyError, DimensionError, RangeError
from .ldmp import validate_faces

__all__ = [
    "LossWeights",
    "loss_mesh",
    "loss_joint",
    "loss_normal",
    "loss_edge",
    "total_loss",
    "regress_joints",
    "jacobi_svd",
    "procrustes_align",
    "mpjpe",
    "pa_mpjpe",
    "mpvpe",
    "accel_err",
]


@dataclass(frozen=True)
class LossWeights:
    mesh: float = 1.0
    joint: float = 1.0
    normal: float = 0.1
    edge: float = 20.0


def _pair(pred, gt, name):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DimensionError(f"{name}: prediction {pred.shape} and target {gt.shape} differ")
    if pred.ndim < 2 or pred.shape[-1] != 3:
        raise DimensionError(f"{name}: expected ... x N x 3 coordinates, got {pred.shape}")
    return pred, gt


def loss_mesh(pred, gt) -> float:
    """Mean absolute coordinate error over all vertices and axes."""
    pred, gt = _pair(pred, gt, "loss_mesh")
    return float(np.abs(pred - gt).mean())


def loss_joint(pred, gt) -> float:
    pred, gt = _pair(pred, gt, "loss_joint")
    return float(np.abs(pred - gt).mean())


def _unit(v, eps=1e-12):
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    safe = np.where(norm < eps, 1.0, norm)
    return np.where(norm < eps, 0.0, v / safe)


def loss_normal(pred, faces, gt) -> float:
    """Sum over faces and their three edges of ``|<unit predicted edge, unit GT face normal>|``.

    Predicted edges shorter than 1e-12 and degenerate GT faces contribute 0.
    """
    pred, gt = _pair(pred, gt, "loss_normal")
    f = validate_faces(faces, pred.shape[0])
    if f.shape[0] == 0:
        return 0.0
    normal = _unit(np.cross(gt[f[:, 1]] - gt[f[:, 0]], gt[f[:, 2]] - gt[f[:, 0]]))
    total = 0.0
    for a, b in ((0, 1), (1, 2), (2, 0)):
        edge = _unit(pred[f[:, a]] - pred[f[:, b]])
        total += np.abs(np.sum(edge * normal, axis=1)).sum()
    return float(total)


def unique_edges(faces) -> np.ndarray:
    f = np.asarray(faces)
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    return np.unique(np.sort(e, axis=1), axis=0)


def loss_edge(pred, faces, gt) -> float:
    """Sum over unique face edges of the absolute edge-length difference."""
    pred, gt = _pair(pred, gt, "loss_edge")
    f = validate_faces(faces, pred.shape[0])
    if f.shape[0] == 0:
        return 0.0
    e = unique_edges(f)
    lp = np.linalg.norm(pred[e[:, 0]] - pred[e[:, 1]], axis=1)
    lg = np.linalg.norm(gt[e[:, 0]] - gt[e[:, 1]], axis=1)
    return float(np.abs(lp - lg).sum())


def total_loss(mesh, joint, normal, edge, weights: LossWeights = LossWeights()) -> float:
    return weights.mesh * mesh + weights.joint * joint + weights.normal * normal + weights.edge * edge


def regress_joints(regressor, vertices) -> np.ndarray:
    """``J x N`` regressor applied to ``N x 3`` vertices (dense or scipy sparse)."""
    if regressor.shape[1] != np.shape(vertices)[0]:
        raise DimensionError(f"regressor {regressor.shape} does not fit {np.shape(vertices)} vertices")
    return np.asarray(regressor @ np.asarray(vertices, dtype=np.float64))


# ---------------------------------------------------------------------------
# alignment


def jacobi_svd(a, tol: float = 1e-12, max_sweeps: int = 60):
    """One-sided (Hestenes) Jacobi SVD of an ``m x n`` matrix with ``m >= n``.

    Returns ``(U, S, Vt, sweeps)`` with singular values sorted descending.
    Columns of ``U`` belonging to zero singular values are completed to an
    orthonormal set.
    """
    w = np.array(a, dtype=np.float64, copy=True)
    m, n = w.shape
    v = np.eye(n)
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = w[:, p] @ w[:, p]
                beta = w[:, q] @ w[:, q]
                gamma = w[:, p] @ w[:, q]
                if abs(gamma) <= tol * np.sqrt(alpha * beta) or abs(gamma) <= 1e-30 * max(alpha, beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.hypot(1.0, zeta))
                c = 1.0 / np.hypot(1.0, t)
                s = c * t
                wp, wq = w[:, p].copy(), w[:, q].copy()
                w[:, p], w[:, q] = c * wp - s * wq, s * wp + c * wq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p], v[:, q] = c * vp - s * vq, s * vp + c * vq
        if not rotated:
            break
    sv = np.linalg.norm(w, axis=0)
    order = np.argsort(-sv, kind="stable")
    sv, w, v = sv[order], w[:, order], v[:, order]
    u = np.zeros((m, n))
    scale = sv[0] if sv[0] > 0 else 1.0
    for i in range(n):
        if sv[i] > 1e-14 * scale:
            u[:, i] = w[:, i] / sv[i]
        else:
            u[:, i] = _orthonormal_complement(u[:, :i])
    return u, sv, v.T, sweeps


def _orthonormal_complement(basis):
    m = basis.shape[0]
    for k in range(m):
        cand = np.zeros(m)
        cand[k] = 1.0
        if basis.shape[1]:
            cand = cand - basis @ (basis.T @ cand)
        norm = np.linalg.norm(cand)
        if norm > 1e-6:
            return cand / norm
    raise DegeneracyError("could not complete orthonormal basis")


def procrustes_align(x, y, tol: float = 1e-12, max_sweeps: int = 60):
    """Similarity ``(s, R, t)`` minimising ``||s * x @ R + t - y||_F`` with ``det(R) = +1``.

    Points are rows. Raises :class:`DegeneracyError` when ``x`` has fewer
    than three points or they are collinear.
    """
    x, y = _pair(x, y, "procrustes_align")
    if x.ndim != 2:
        raise DimensionError(f"procrustes_align expects N x 3 arrays, got {x.shape}")
    if x.shape[0] < 3:
        raise DegeneracyError(f"need at least 3 points, got {x.shape[0]}")
    mu_x, mu_y = x.mean(axis=0), y.mean(axis=0)
    x0, y0 = x - mu_x, y - mu_y
    _, sx, _, _ = jacobi_svd(x0, tol=tol, max_sweeps=max_sweeps)
    if sx[0] == 0.0 or sx[1] <= 1e-9 * sx[0]:
        raise DegeneracyError("source points are collinear (rank < 2); rotation is not determined")
    u, s, vt, _ = jacobi_svd(x0.T @ y0, tol=tol, max_sweeps=max_sweeps)
    d = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        d[2] = -1.0
    rot = (u * d) @ vt
    scale = float((s * d).sum() / (x0 * x0).sum())
    trans = mu_y - scale * mu_x @ rot
    return scale, rot, trans


def _frames(pred, gt, name):
    pred, gt = _pair(pred, gt, name)
    if pred.ndim == 2:
        return pred[None], gt[None]
    if pred.ndim == 3:
        return pred, gt
    raise DimensionError(f"{name}: expected J x 3 or B x J x 3, got {pred.shape}")


def mpjpe(pred, gt, root: int = 0) -> float:
    """Mean joint distance after subtracting each skeleton's root joint."""
    pred, gt = _frames(pred, gt, "mpjpe")
    p = pred - pred[:, root:root + 1]
    g = gt - gt[:, root:root + 1]
    return float(np.linalg.norm(p - g, axis=-1).mean())


def pa_mpjpe(pred, gt) -> float:
    """Mean joint distance after per-frame Procrustes alignment of the prediction onto the target."""
    pred, gt = _frames(pred, gt, "pa_mpjpe")
    errs = []
    for p, g in zip(pred, gt):
        s, rot, t = procrustes_align(p, g)
        errs.append(np.linalg.norm(s * p @ rot + t - g, axis=-1))
    return float(np.mean(errs))


def mpvpe(pred, gt) -> float:
    pred, gt = _pair(pred, gt, "mpvpe")
    return float(np.linalg.norm(pred - gt, axis=-1).mean())


def accel_err(pred_seq, gt_seq) -> float:
    """Mean norm of the difference in second finite differences over frames and joints."""
    pred_seq, gt_seq = _pair(pred_seq, gt_seq, "accel_err")
    if pred_seq.ndim != 3:
        raise DimensionError(f"accel_err expects T x J x 3 sequences, got {pred_seq.shape}")
    if pred_seq.shape[0] < 3:
        raise RangeError(f"accel_err needs at least 3 frames, got {pred_seq.shape[0]}")

    def accel(s):
        return s[2:] - 2 * s[1:-1] + s[:-2]

    return float(np.linalg.norm(accel(pred_seq) - accel(gt_seq), axis=-1).mean())
