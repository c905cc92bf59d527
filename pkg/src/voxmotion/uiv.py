"""Discretized interaction space and semantic occupancy volumes.

Grid axes are (h, w, d) = (height, width, depth) and map to the world
components (y, x, z). Voxel ``i`` on axis ``a`` has its center at
``origin[a] + (i + 0.5) * pitch[a]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvariantError
from .geometry import EntityClass, EntitySnapshot

# grid axis -> world component
GRID_TO_WORLD = (1, 0, 2)


@dataclass(frozen=True)
class VolumeSpec:
    dims: tuple[int, int, int] = (48, 48, 48)
    pitch: tuple[float, float, float] = (0.05, 0.10, 0.10)  # (h, w, d) meters
    origin: tuple[float, float, float] = (-2.4, 0.0, -2.4)  # world (x, y, z) meters

    def __post_init__(self):
        dims = tuple(int(v) for v in self.dims)
        pitch = tuple(float(v) for v in self.pitch)
        origin = tuple(float(v) for v in self.origin)
        if len(dims) != 3 or min(dims) <= 0:
            raise InvariantError(f"dims must be three positive integers, got {self.dims}")
        if len(pitch) != 3 or min(pitch) <= 0 or not np.all(np.isfinite(pitch)):
            raise InvariantError(f"pitch must be three positive lengths, got {self.pitch}")
        if len(origin) != 3 or not np.all(np.isfinite(origin)):
            raise InvariantError("origin must be a finite 3-vector")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "pitch", pitch)
        object.__setattr__(self, "origin", origin)

    @property
    def extents(self) -> tuple[float, float, float]:
        return tuple(n * p for n, p in zip(self.dims, self.pitch))

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.dims))

    def grid_origin(self) -> np.ndarray:
        """Origin reordered to grid axes."""
        return np.array([self.origin[g] for g in GRID_TO_WORLD])

    def axis_centers(self, axis: int) -> np.ndarray:
        """World coordinate of every voxel center along one grid axis."""
        return self.grid_origin()[axis] + (np.arange(self.dims[axis]) + 0.5) * self.pitch[axis]

    def world_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """(lo, hi) corners in world (x, y, z) order."""
        lo = np.array(self.origin)
        hi = lo.copy()
        for a, g in enumerate(GRID_TO_WORLD):
            hi[g] += self.extents[a]
        return lo, hi


def default_spec() -> VolumeSpec:
    return VolumeSpec()


def desk_spec() -> VolumeSpec:
    """16^3 grid over the same 2.4 x 4.8 x 4.8 m space."""
    return VolumeSpec(dims=(16, 16, 16), pitch=(0.15, 0.30, 0.30))


def world_to_voxel(p, spec: VolumeSpec) -> np.ndarray:
    """Continuous (h, w, d) index of world point(s) ``p`` (shape (..., 3))."""
    p = np.asarray(p, dtype=np.float64)
    g = p[..., list(GRID_TO_WORLD)]
    return (g - spec.grid_origin()) / np.asarray(spec.pitch) - 0.5


def voxel_to_world(idx, spec: VolumeSpec) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.float64)
    g = spec.grid_origin() + (idx + 0.5) * np.asarray(spec.pitch)
    out = np.empty_like(g)
    out[..., list(GRID_TO_WORLD)] = g
    return out


@dataclass(frozen=True)
class SemanticVolume:
    """Per-frame occupancy stored as class codes (0 empty, 1 human, 2 object, 3 scene)."""

    spec: VolumeSpec
    codes: np.ndarray  # (T, H, W, D) uint8

    def __post_init__(self):
        codes = np.asarray(self.codes)
        if codes.ndim != 4 or codes.shape[1:] != self.spec.dims or codes.shape[0] < 1:
            raise InvariantError(f"codes shape {codes.shape} does not match spec dims {self.spec.dims}")
        if codes.size and codes.max() > 3:
            raise InvariantError("label codes must be in {0, 1, 2, 3}")
        object.__setattr__(self, "codes", codes.astype(np.uint8, copy=False))

    @property
    def T(self) -> int:
        return self.codes.shape[0]

    @property
    def labels(self) -> np.ndarray:
        """One-hot labels, shape (T, H, W, D, 3); empty voxels are all zero."""
        eye = np.vstack([np.zeros(3), np.eye(3)]).astype(np.uint8)
        return eye[self.codes]

    def count(self, cls: EntityClass | None = None) -> int:
        if cls is None:
            return int(np.count_nonzero(self.codes))
        return int(np.count_nonzero(self.codes == int(cls)))

    def frame(self, t: int) -> "SemanticVolume":
        return SemanticVolume(self.spec, self.codes[t : t + 1])


def empty_volume(spec: VolumeSpec, T: int = 1) -> SemanticVolume:
    return SemanticVolume(spec, np.zeros((T, *spec.dims), dtype=np.uint8))


def occupied_indices(points, spec: VolumeSpec) -> np.ndarray:
    """Integer (h, w, d) index of each in-grid point; out-of-grid points are dropped."""
    idx = np.floor(world_to_voxel(points, spec) + 0.5).astype(np.int64).reshape(-1, 3)
    inside = np.all((idx >= 0) & (idx < np.asarray(spec.dims)), axis=1)
    return idx[inside]


def rasterize(entity: EntitySnapshot, spec: VolumeSpec) -> SemanticVolume:
    pts = np.asarray(entity.points)
    if pts.size == 0:
        raise InvariantError("cannot rasterize an empty point set")
    codes = np.zeros((1, *spec.dims), dtype=np.uint8)
    idx = occupied_indices(pts, spec)
    codes[0, idx[:, 0], idx[:, 1], idx[:, 2]] = int(entity.entity_class)
    return SemanticVolume(spec, codes)


def merge(volumes: Sequence[SemanticVolume]) -> SemanticVolume:
    """Combine volumes voxel-wise; on overlap HUMAN beats OBJECT beats SCENE."""
    if not volumes:
        raise InvariantError("nothing to merge")
    spec = volumes[0].spec
    for v in volumes[1:]:
        if v.spec != spec or v.codes.shape != volumes[0].codes.shape:
            raise InvariantError("cannot merge volumes with different specs")
    # lower nonzero code wins; map empty to 4 so min() ignores it
    stacked = np.stack([np.where(v.codes == 0, 4, v.codes) for v in volumes])
    out = stacked.min(axis=0)
    out[out == 4] = 0
    return SemanticVolume(spec, out.astype(np.uint8))


def build_uiv(entities_per_frame: Sequence[Sequence[EntitySnapshot]], spec: VolumeSpec) -> SemanticVolume:
    if len(entities_per_frame) < 1:
        raise InvariantError("need at least one frame")
    frames = []
    for ents in entities_per_frame:
        vols = [rasterize(e, spec) for e in ents] or [empty_volume(spec)]
        frames.append(merge(vols).codes[0])
    return SemanticVolume(spec, np.stack(frames))
