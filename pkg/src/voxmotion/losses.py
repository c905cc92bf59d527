"""Training objectives with hand-derived gradients.

Joint-space losses take arrays shaped (..., T, K, 3) and reduce by the mean
over every leading, frame and joint/bone index, so a batch mean equals the
mean of per-sample values.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSkeletonError, InvariantError, NumericalError
from .geometry import SkeletonTopology, bone_vectors, hip_vectors
from .heatmap import HeatmapField, decode_raw, decode_raw_vjp
from .uiv import VolumeSpec

TERMS = ("rec", "pos", "vel", "sk", "ori")


@dataclass(frozen=True)
class LossWeights:
    pos: float = 0.1
    vel: float = 0.1
    sk: float = 0.1
    ori: float = 1.0

    def __post_init__(self):
        for name in ("pos", "vel", "sk", "ori"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise InvariantError(f"loss weight {name} must be finite and >= 0")

    def combine(self, terms: dict) -> float:
        return (terms["rec"] + self.pos * terms["pos"] + self.vel * terms["vel"]
                + self.sk * terms["sk"] + self.ori * terms["ori"])


@dataclass
class LossReport:
    total: float
    terms: dict
    grad: np.ndarray | None = field(default=None, repr=False)

    def check(self, weights: LossWeights) -> None:
        if abs(self.total - weights.combine(self.terms)) > 1e-9:
            raise InvariantError("loss total differs from its weighted sum")


def _same_shape(a, b):
    if np.shape(a) != np.shape(b):
        raise InvariantError(f"shape mismatch {np.shape(a)} vs {np.shape(b)}")


def loss_rec(pred, target):
    """Mean squared error over every heatmap entry."""
    _same_shape(pred, target)
    d = pred - target
    return float(np.mean(d * d)), 2.0 * d / d.size


def loss_pos(pred_joints, gt_joints):
    _same_shape(pred_joints, gt_joints)
    d = pred_joints - gt_joints
    n = d[..., 0].size
    return float(np.sum(d * d) / n), 2.0 * d / n


def loss_vel(pred_joints, gt_joints):
    """Squared error between forward-difference velocities."""
    _same_shape(pred_joints, gt_joints)
    if pred_joints.shape[-3] < 2:
        warnings.warn("velocity loss needs at least two frames; returning 0", stacklevel=2)
        return 0.0, np.zeros_like(pred_joints)
    dv = np.diff(pred_joints, axis=-3) - np.diff(gt_joints, axis=-3)
    n = dv[..., 0].size
    r = 2.0 * dv / n
    grad = np.zeros_like(pred_joints)
    grad[..., 1:, :, :] += r
    grad[..., :-1, :, :] -= r
    return float(np.sum(dv * dv) / n), grad


def loss_sk(pred_joints, gt_joints, topo: SkeletonTopology):
    _same_shape(pred_joints, gt_joints)
    ds = bone_vectors(pred_joints, topo) - bone_vectors(gt_joints, topo)
    n = ds[..., 0].size
    r = 2.0 * ds / n
    grad = np.zeros_like(pred_joints)
    for b, (p, c) in enumerate(topo.bones):
        grad[..., p, :] += r[..., b, :]
        grad[..., c, :] -= r[..., b, :]
    return float(np.sum(ds * ds) / n), grad


def _unit(v):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n < 1e-9):
        raise DegenerateSkeletonError("hip bone has (near) zero length")
    return v / n, n


def loss_ori(pred_frame0, gt_frame0, topo: SkeletonTopology):
    """1 - cos between predicted and true first-frame headings (pose shape (..., K, 3))."""
    _same_shape(pred_frame0, gt_frame0)
    root, lhip, rhip = topo.index("root"), topo.index("lhip"), topo.index("rhip")
    a, b = hip_vectors(pred_frame0, topo)
    ua, na = _unit(a)
    ub, nb = _unit(b)
    dh = np.cross(ua, ub)
    ga, gb = hip_vectors(gt_frame0, topo)
    d = np.cross(_unit(ga)[0], _unit(gb)[0])

    nh = np.linalg.norm(dh, axis=-1)
    nd = np.linalg.norm(d, axis=-1)
    denom = np.maximum(nh * nd, 1e-12)
    dot = np.sum(dh * d, axis=-1)
    cos = dot / denom
    m = cos.size
    value = float(np.mean(1.0 - cos))

    # d(1 - cos)/d dh, averaged over leading dims
    nh_safe = np.maximum(nh, 1e-12)[..., None]
    g_dh = -(d / denom[..., None] - (cos[..., None] * dh) / nh_safe**2) / m
    g_ua = np.cross(ub, g_dh)
    g_ub = np.cross(g_dh, ua)
    g_a = (g_ua - ua * np.sum(ua * g_ua, axis=-1, keepdims=True)) / na
    g_b = (g_ub - ub * np.sum(ub * g_ub, axis=-1, keepdims=True)) / nb
    grad = np.zeros_like(pred_frame0)
    grad[..., root, :] += g_a + g_b
    grad[..., lhip, :] -= g_a
    grad[..., rhip, :] -= g_b
    return value, grad


def joint_losses(pred_joints, gt_joints, topo: SkeletonTopology):
    """pos/vel/sk/ori values and their gradients w.r.t. ``pred_joints``."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        out = {
            "pos": loss_pos(pred_joints, gt_joints),
            "vel": loss_vel(pred_joints, gt_joints),
            "sk": loss_sk(pred_joints, gt_joints, topo),
        }
    v, g0 = loss_ori(pred_joints[..., 0, :, :], gt_joints[..., 0, :, :], topo)
    g = np.zeros_like(pred_joints)
    g[..., 0, :, :] = g0
    out["ori"] = (v, g)
    return out


def total_loss(pred, target, gt_joints, topo: SkeletonTopology,
               weights: LossWeights = LossWeights(), spec: VolumeSpec | None = None,
               with_grad: bool = True) -> LossReport:
    """Weighted objective on a predicted heatmap field.

    ``pred`` and ``target`` are heatmap values (..., T, K, H, W, D) in the same
    (amplitude-scaled) space, or HeatmapFields. The prediction is decoded by
    clamp-normalize plus first moment before the joint-space terms.
    """
    if isinstance(pred, HeatmapField):
        spec = pred.spec
        pred = pred.values
    if isinstance(target, HeatmapField):
        target = target.values
    if spec is None:
        raise InvariantError("spec required when passing raw arrays")
    gt_joints = np.asarray(gt_joints, dtype=np.float64)

    rec, g_rec = loss_rec(pred, target)
    joints, cache = decode_raw(pred, spec)
    jl = joint_losses(joints, gt_joints, topo)
    terms = {"rec": rec, **{k: v for k, (v, _) in jl.items()}}
    total = weights.combine(terms)
    if not np.isfinite(total):
        raise NumericalError(f"non-finite loss: {terms}")
    grad = None
    if with_grad:
        g_j = (weights.pos * jl["pos"][1] + weights.vel * jl["vel"][1]
               + weights.sk * jl["sk"][1] + weights.ori * jl["ori"][1])
        grad = g_rec + decode_raw_vjp(cache, g_j, spec)
    report = LossReport(total=float(total), terms=terms, grad=grad)
    report.check(weights)
    return report
