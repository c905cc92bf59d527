"""Motion quality metrics: position errors, foot sliding, contact scores,
goal distance, diversity and a Fréchet distance over hand-crafted features.

Distances are reported in centimeters where noted.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvariantError
from .geometry import MotionSequence, SkeletonTopology

CONTACT_THRESHOLD = 0.10  # meters, hand to nearest object point
FOOT_HEIGHT_THRESHOLD = 0.05  # meters above the floor
FEATURE_DIM = 32
FEATURE_SEED = 0


def _pos(m) -> np.ndarray:
    return m.positions if isinstance(m, MotionSequence) else np.asarray(m, dtype=np.float64)


def mpjpe(pred, gt) -> float:
    p, g = _pos(pred), _pos(gt)
    if p.shape != g.shape:
        raise InvariantError(f"shape mismatch {p.shape} vs {g.shape}")
    return float(np.mean(np.linalg.norm(p - g, axis=-1)) * 100.0)


def t_root(pred, gt, topo: SkeletonTopology) -> float:
    p, g = _pos(pred), _pos(gt)
    r = topo.root
    return float(np.mean(np.linalg.norm(p[:, r] - g[:, r], axis=-1)) * 100.0)


def foot_sliding(pred, topo: SkeletonTopology, floor_y: float = 0.0,
                 h_thresh: float = FOOT_HEIGHT_THRESHOLD) -> float:
    """Mean horizontal foot travel (cm) over frames where a foot touches the floor.

    A frame counts when the foot is below ``h_thresh`` and a next frame exists;
    its contribution is the horizontal displacement to that next frame.
    """
    p = _pos(pred)
    total, frames = 0.0, 0
    for foot in (topo.index("lfoot"), topo.index("rfoot")):
        traj = p[:, foot]
        contact = (traj[:-1, 1] - floor_y) < h_thresh
        step = np.linalg.norm(traj[1:, [0, 2]] - traj[:-1, [0, 2]], axis=-1)
        total += float(step[contact].sum())
        frames += int(contact.sum())
    return total * 100.0 / frames if frames else 0.0


def contact_flags(positions, object_points, topo: SkeletonTopology,
                  threshold: float = CONTACT_THRESHOLD) -> np.ndarray:
    """(T, 2) booleans: is the (left, right) hand within ``threshold`` of the object."""
    p = _pos(positions)
    obj = np.asarray(object_points, dtype=np.float64).reshape(-1, 3)
    hands = p[:, [topo.index("lhand"), topo.index("rhand")]]  # (T, 2, 3)
    d = np.linalg.norm(hands[:, :, None, :] - obj[None, None], axis=-1).min(axis=-1)
    return d < threshold


def binary_scores(pred_flags, gt_flags) -> tuple[float, float, float, float]:
    pr = np.asarray(pred_flags, dtype=bool).ravel()
    gt = np.asarray(gt_flags, dtype=bool).ravel()
    tp = int(np.sum(pr & gt))
    fp = int(np.sum(pr & ~gt))
    fn = int(np.sum(~pr & gt))
    tn = int(np.sum(~pr & ~gt))
    if tp + fp:
        prec = tp / (tp + fp)
    else:
        prec = 1.0 if tp + fn == 0 else 0.0
    if tp + fn:
        rec = tp / (tp + fn)
    else:
        rec = 1.0 if fp == 0 else 0.0
    acc = (tp + tn) / max(tp + fp + fn + tn, 1)
    f1 = 0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec)
    return prec, rec, acc, f1


def contact_metrics(pred, object_points, gt_labels, topo: SkeletonTopology,
                    threshold: float = CONTACT_THRESHOLD):
    """(precision, recall, accuracy, F1) of predicted hand contacts, pooled over hands and frames."""
    flags = contact_flags(pred, object_points, topo, threshold)
    gt = np.asarray(gt_labels, dtype=bool)
    if gt.shape != flags.shape:
        raise InvariantError(f"labels shape {gt.shape} != {flags.shape}")
    return binary_scores(flags, gt)


def goal_distance(pred, goal, topo: SkeletonTopology) -> float:
    p = _pos(pred)
    d = p[-1, topo.root] - np.asarray(goal, dtype=np.float64)
    return float(np.hypot(d[0], d[2]) * 100.0)


def _root_relative(m, topo: SkeletonTopology | None = None) -> np.ndarray:
    p = _pos(m)
    r = 0 if topo is None else topo.root
    return p - p[:, r : r + 1]


def diversity(samples, seed: int = 0, topo: SkeletonTopology | None = None) -> float:
    """Mean feature distance between two random, equal halves of the samples."""
    if len(samples) < 2:
        raise InvariantError("diversity needs at least two samples")
    feats = np.stack([_root_relative(s, topo).ravel() for s in samples])
    order = np.random.default_rng(seed).permutation(len(feats))
    half = len(feats) // 2
    a, b = feats[order[:half]], feats[order[half : 2 * half]]
    return float(np.mean(np.linalg.norm(a - b, axis=1)))


def motion_features(m, topo: SkeletonTopology | None = None, dim: int = FEATURE_DIM,
                    seed: int = FEATURE_SEED) -> np.ndarray:
    """Root-relative pose plus per-frame velocity, randomly projected to ``dim``."""
    p = _pos(m)
    raw = np.concatenate([_root_relative(p, topo).ravel(), np.diff(p, axis=0).ravel()])
    proj = np.random.default_rng(seed).standard_normal((raw.size, dim)) / np.sqrt(raw.size)
    return raw @ proj


def jacobi_eigh(S, tol: float = 1e-10, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvectors as columns.
    Sweeps stop once the off-diagonal Frobenius norm falls below
    ``tol`` times the matrix norm.
    """
    A = np.array(S, dtype=np.float64)
    n = A.shape[0]
    if A.shape != (n, n):
        raise InvariantError("matrix must be square")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    scale = max(np.linalg.norm(A), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(max(np.sum(A * A) - np.sum(np.diag(A) ** 2), 0.0))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.hypot(theta, 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                Ap, Aq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * Ap - s * Aq
                A[:, q] = s * Ap + c * Aq
                Ap, Aq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * Ap - s * Aq
                A[q, :] = s * Ap + c * Aq
                Vp, Vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * Vp - s * Vq
                V[:, q] = s * Vp + c * Vq
    return np.diag(A).copy(), V


def _sym_sqrt(S):
    w, V = jacobi_eigh(S)
    return (V * np.sqrt(np.clip(w, 0, None))) @ V.T


def frechet_feature_distance(set_a, set_b) -> float:
    """Fréchet (Wasserstein-2) distance between Gaussian fits of two feature sets."""
    A = np.atleast_2d(np.asarray(set_a, dtype=np.float64))
    B = np.atleast_2d(np.asarray(set_b, dtype=np.float64))
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise InvariantError("feature sets must be (n, dim) with equal dim")
    dim = A.shape[1]
    if dim > 64:
        raise InvariantError("feature dimension must be <= 64")
    if len(A) < dim + 1 or len(B) < dim + 1:
        raise InvariantError(f"need at least {dim + 1} vectors per set")
    mu_a, mu_b = A.mean(axis=0), B.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(A, rowvar=False))
    cov_b = np.atleast_2d(np.cov(B, rowvar=False))
    ra = _sym_sqrt(cov_a)
    w, _ = jacobi_eigh(ra @ cov_b @ ra)
    tr_sqrt = float(np.sum(np.sqrt(np.clip(w, 0, None))))
    d = float(np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_sqrt)
    return max(d, 0.0)


@dataclass
class MetricReport:
    mpjpe_cm: float
    troot_cm: float
    fs: float
    c_prec: float
    c_rec: float
    c_acc: float
    c_f1: float
    goal_dist_cm: float | None
    diversity: float | None
    ffd: float | None

    def __post_init__(self):
        for name in ("c_prec", "c_rec", "c_acc", "c_f1"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvariantError(f"{name}={v} outside [0, 1]")
        for name in ("mpjpe_cm", "troot_cm", "fs", "goal_dist_cm", "diversity", "ffd"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise InvariantError(f"{name} must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(preds, gts, topo: SkeletonTopology, object_points=None, contact_labels=None,
             goals=None, seed: int = 0) -> MetricReport:
    """Aggregate metrics over paired prediction/ground-truth motions.

    ``object_points``, ``contact_labels`` and ``goals`` are per-sample lists
    whose entries may be None; contact scores pool every sample that has both.
    """
    n = len(preds)
    if n == 0 or n != len(gts):
        raise InvariantError("need equally many (>0) predictions and ground truths")
    object_points = object_points or [None] * n
    contact_labels = contact_labels or [None] * n
    goals = goals or [None] * n

    pf, gf = [], []
    for p, o, lab in zip(preds, object_points, contact_labels):
        if o is not None and lab is not None:
            pf.append(contact_flags(p, o, topo))
            gf.append(np.asarray(lab, dtype=bool))
    if pf:
        prec, rec, acc, f1 = binary_scores(np.concatenate(pf), np.concatenate(gf))
    else:
        prec = rec = acc = f1 = 1.0

    gd = [goal_distance(p, g, topo) for p, g in zip(preds, goals) if g is not None]
    div = diversity(preds, seed=seed, topo=topo) if n >= 2 else None
    ffd = None
    fa = np.stack([motion_features(p, topo) for p in preds])
    fb = np.stack([motion_features(g, topo) for g in gts])
    if n >= FEATURE_DIM + 1:
        ffd = frechet_feature_distance(fa, fb)
    return MetricReport(
        mpjpe_cm=float(np.mean([mpjpe(p, g) for p, g in zip(preds, gts)])),
        troot_cm=float(np.mean([t_root(p, g, topo) for p, g in zip(preds, gts)])),
        fs=float(np.mean([foot_sliding(p, topo) for p in preds])),
        c_prec=prec, c_rec=rec, c_acc=acc, c_f1=f1,
        goal_dist_cm=float(np.mean(gd)) if gd else None,
        diversity=div,
        ffd=ffd,
    )
