"""Gaussian joint heatmaps over the volume grid and first-moment decoding.

Array helpers work on values shaped ``(..., H, W, D)`` so the same code
serves single channels, whole motions ``(T, K, H, W, D)`` and batches.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import InvariantError
from .geometry import MotionSequence
from .uiv import GRID_TO_WORLD, VolumeSpec, voxel_to_world, world_to_voxel

EPS = 1e-8
DEFAULT_SIGMA = 3.0


class Mode(enum.IntEnum):
    TARGET = 0
    RAW = 1


def analytic_peak(sigma: float) -> float:
    """Peak density of the normalized isotropic 3-D Gaussian."""
    return (2 * np.pi * sigma**2) ** -1.5


def amplitude(sigma: float) -> float:
    """Factor that lifts a normalized heatmap so its peak is about 1."""
    return 1.0 / analytic_peak(sigma)


@dataclass(frozen=True)
class HeatmapField:
    spec: VolumeSpec
    values: np.ndarray  # (T, K, H, W, D)
    mode: Mode = Mode.RAW
    out_of_grid: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 5 or v.shape[2:] != self.spec.dims:
            raise InvariantError(f"heatmap shape {v.shape} does not match (T, K, *{self.spec.dims})")
        if not np.all(np.isfinite(v)):
            raise InvariantError("heatmap values must be finite")
        if self.mode == Mode.TARGET:
            if v.min() < 0:
                raise InvariantError("TARGET heatmap has negative values")
            sums = v.sum(axis=(-3, -2, -1))
            if np.max(np.abs(sums - 1.0)) > 1e-6:
                raise InvariantError("TARGET heatmap channels must sum to 1")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "mode", Mode(self.mode))

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def K(self) -> int:
        return self.values.shape[1]


def _axis_gaussians(centers: np.ndarray, spec: VolumeSpec, sigma: float):
    """Per-axis 1-D Gaussian factors for continuous centers of shape (..., 3)."""
    out = []
    for a in range(3):
        grid = np.arange(spec.dims[a], dtype=np.float64)
        d = grid - centers[..., a, None]
        out.append(np.exp(-(d**2) / (2 * sigma**2)))
    return out


def _outer3(gh, gw, gd, dtype=np.float64):
    gh, gw, gd = (np.asarray(g, dtype=dtype) for g in (gh, gw, gd))
    return gh[..., :, None, None] * gw[..., None, :, None] * gd[..., None, None, :]


def gaussian_lattice(joints, spec: VolumeSpec, sigma: float = DEFAULT_SIGMA):
    """Un-renormalized Gaussian densities for world joints (..., 3).

    Returns ``(values, centers)`` where values has shape (..., H, W, D) and is
    scaled by the analytic normalizer, so interior channels sum to ~1.
    """
    if sigma <= 0:
        raise InvariantError("sigma must be positive")
    centers = world_to_voxel(joints, spec)
    gh, gw, gd = _axis_gaussians(centers, spec, sigma)
    return _outer3(gh, gw, gd) * analytic_peak(sigma), centers


def lattice_sum(joints, spec: VolumeSpec, sigma: float = DEFAULT_SIGMA) -> np.ndarray:
    """Sum of the un-renormalized lattice values (separable, no full grid needed)."""
    gh, gw, gd = _axis_gaussians(world_to_voxel(joints, spec), spec, sigma)
    return gh.sum(-1) * gw.sum(-1) * gd.sum(-1) * analytic_peak(sigma)


def encode_joints(joints, spec: VolumeSpec, sigma: float = DEFAULT_SIGMA, dtype=np.float64,
                  scale: float = 1.0):
    """Sum-normalized heatmaps for joints of shape (..., 3), times ``scale``.

    Returns ``(values, out_of_grid)``. Channels whose joint lies more than
    3 sigma outside the grid (or whose lattice sum underflows) are uniform
    and flagged.
    """
    if sigma <= 0:
        raise InvariantError("sigma must be positive")
    centers = world_to_voxel(joints, spec)
    factors = _axis_gaussians(centers, spec, sigma)
    sums = [f.sum(-1) for f in factors]
    n = np.asarray(spec.dims, dtype=np.float64)
    below = np.clip(-0.5 - centers, 0, None)
    above = np.clip(centers - (n - 0.5), 0, None)
    outside = np.linalg.norm(below + above, axis=-1)
    flag = (outside > 3 * sigma) | (sums[0] * sums[1] * sums[2] <= 0)
    # separable: normalizing each axis factor normalizes the product
    factors = [f / np.where(flag, 1.0, s)[..., None] for f, s in zip(factors, sums)]
    factors[0] = factors[0] * scale
    values = _outer3(*factors, dtype=dtype)
    if np.any(flag):
        values[flag] = scale / spec.n_voxels
    return values, flag


def encoded_moment(joints, spec: VolumeSpec, sigma: float = DEFAULT_SIGMA) -> np.ndarray:
    """First moment of ``encode_joints(joints)`` without building the volume.

    Near a face the truncated Gaussian's moment is pulled inward, so this
    differs from ``joints`` by the decode bias.
    """
    centers = world_to_voxel(joints, spec)
    factors = _axis_gaussians(centers, spec, sigma)
    idx = np.stack([(f * np.arange(f.shape[-1])).sum(-1) / np.maximum(f.sum(-1), 1e-300)
                    for f in factors], axis=-1)
    return voxel_to_world(idx, spec)


def unbiased_centers(moments, spec: VolumeSpec, sigma: float = DEFAULT_SIGMA, iters: int = 20) -> np.ndarray:
    """Joint positions whose encoded heatmap decodes to ``moments``.

    Fixed-point inversion of :func:`encoded_moment`. Centers stay within
    2 sigma outside the grid, so unreachable moments saturate there.
    """
    moments = np.asarray(moments, dtype=np.float64)
    lo, hi = spec.world_bounds()
    pad = 2 * sigma * np.asarray(spec.pitch)[list(np.argsort(GRID_TO_WORLD))]
    j = moments.copy()
    for _ in range(iters):
        j = np.clip(j + (moments - encoded_moment(j, spec, sigma)), lo - pad, hi + pad)
    return j


def encode_motion(motion: MotionSequence, spec: VolumeSpec, sigma: float = DEFAULT_SIGMA) -> HeatmapField:
    values, flag = encode_joints(motion.positions, spec, sigma)
    return HeatmapField(spec, values, Mode.TARGET, out_of_grid=flag)


def normalize_values(values: np.ndarray):
    """Clamp-and-divide normalization of raw channels (..., H, W, D).

    Returns ``(probs, denom, uniform)``; ``denom`` is the clamped sum plus EPS
    and ``uniform`` marks channels that fell back to the uniform distribution.
    """
    pos = np.maximum(values, 0)
    s = pos.sum(axis=(-3, -2, -1))
    uniform = s < EPS
    denom = s + EPS
    probs = pos / denom[..., None, None, None]
    if np.any(uniform):
        n = np.prod(values.shape[-3:])
        probs[uniform] = 1.0 / n
    return probs, denom, uniform


def normalize(field: HeatmapField) -> HeatmapField:
    probs, _, _ = normalize_values(field.values)
    # EPS in the denominator leaves sums at 1 - O(1e-8); absorb it so TARGET holds exactly
    probs = probs / probs.sum(axis=(-3, -2, -1), keepdims=True)
    return HeatmapField(field.spec, probs, Mode.TARGET)


def _centers(spec: VolumeSpec):
    return [spec.axis_centers(a) for a in range(3)]


def expectation(weights: np.ndarray, spec: VolumeSpec, denom=None) -> np.ndarray:
    """First moment of voxel centers under nonnegative weights (..., H, W, D).

    Divides by ``denom`` when given, otherwise by the weight sum. Result is in
    world (x, y, z) order, shape (..., 3).
    """
    ch, cw, cd = _centers(spec)
    if denom is None:
        denom = weights.sum(axis=(-3, -2, -1))
    mh = weights.sum(axis=(-2, -1)) @ ch
    mw = weights.sum(axis=(-3, -1)) @ cw
    md = weights.sum(axis=(-3, -2)) @ cd
    out = np.stack([mw, mh, md], axis=-1)  # world x <- w, y <- h, z <- d
    return out / np.asarray(denom)[..., None]


def expectation_vjp(joints: np.ndarray, upstream: np.ndarray, spec: VolumeSpec, denom,
                    dtype=np.float64) -> np.ndarray:
    """Gradient of ``expectation`` w.r.t. the weights.

    d joint / d weight(u) = (center(u) - joint) / denom, contracted with
    ``upstream`` (..., 3).
    """
    ch, cw, cd = _centers(spec)
    g = upstream / np.asarray(denom)[..., None]
    gx, gy, gz = g[..., 0], g[..., 1], g[..., 2]
    const = (g * joints).sum(axis=-1)
    th = (gy[..., None] * ch - const[..., None]).astype(dtype)
    tw = (gx[..., None] * cw).astype(dtype)
    td = (gz[..., None] * cd).astype(dtype)
    return th[..., :, None, None] + tw[..., None, :, None] + td[..., None, None, :]


def decode_raw(values: np.ndarray, spec: VolumeSpec):
    """Normalize raw channels and take the first moment.

    Returns ``(joints, cache)``; pass the cache to :func:`decode_raw_vjp`.
    """
    pos = np.maximum(values, 0)
    s = pos.sum(axis=(-3, -2, -1))
    uniform = s < EPS
    denom = s + EPS
    joints = expectation(pos, spec, denom)
    if np.any(uniform):
        joints[uniform] = expectation(np.ones(spec.dims), spec)
    return joints, (values, joints, denom, uniform)


def decode_raw_vjp(cache, upstream: np.ndarray, spec: VolumeSpec) -> np.ndarray:
    values, joints, denom, uniform = cache
    g = expectation_vjp(joints, upstream, spec, denom, dtype=values.dtype)
    g *= values > 0
    if np.any(uniform):
        g[uniform] = 0.0
    return g


def decode_expectation(field: HeatmapField, fps: float = 10.0) -> MotionSequence:
    if field.mode != Mode.TARGET:
        raise InvariantError("decode_expectation expects a TARGET field; normalize first")
    return MotionSequence(expectation(field.values, field.spec), fps=fps)
