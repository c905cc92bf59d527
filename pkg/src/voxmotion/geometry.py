"""Skeletons, motion sequences, rigid transforms and capsule surface sampling.

World frame is right-handed with +y up; the floor is the plane y = 0.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSkeletonError, InvalidTransformError, InvariantError

NAMED_JOINTS = ("root", "lhip", "rhip", "lfoot", "rfoot", "lhand", "rhand", "head")


class EntityClass(enum.IntEnum):
    """Entity types; the integer value is the on-disk label byte."""

    HUMAN = 1
    OBJECT = 2
    SCENE = 3


@dataclass(frozen=True)
class SkeletonTopology:
    joint_names: tuple[str, ...]
    parent: tuple[int | None, ...]
    named_indices: dict[str, int]
    capsule_radii: tuple[float, ...]

    def __post_init__(self):
        K = len(self.joint_names)
        if K < 1 or len(self.parent) != K:
            raise InvariantError("joint_names and parent must have the same positive length")
        roots = [k for k, p in enumerate(self.parent) if p is None]
        if len(roots) != 1:
            raise InvariantError(f"expected exactly one root joint, found {len(roots)}")
        for k in range(K):
            seen = set()
            j = k
            while self.parent[j] is not None:
                if j in seen:
                    raise InvariantError(f"parent links contain a cycle through joint {k}")
                seen.add(j)
                p = self.parent[j]
                if not 0 <= p < K:
                    raise InvariantError(f"joint {j} has invalid parent {p}")
                j = p
        missing = [n for n in NAMED_JOINTS if n not in self.named_indices]
        if missing:
            raise InvariantError(f"named indices missing: {missing}")
        for name, idx in self.named_indices.items():
            if not 0 <= idx < K:
                raise InvariantError(f"named joint {name} -> {idx} out of range")
        if self.named_indices["lhip"] == self.named_indices["rhip"]:
            raise InvariantError("lhip and rhip must differ")
        if len(self.capsule_radii) != K - 1 or any(r <= 0 for r in self.capsule_radii):
            raise InvariantError("need one positive capsule radius per bone")

    @property
    def K(self) -> int:
        return len(self.joint_names)

    @property
    def root(self) -> int:
        return self.named_indices["root"]

    @property
    def bones(self) -> list[tuple[int, int]]:
        """(parent, child) pairs, ordered by child index."""
        return [(p, k) for k, p in enumerate(self.parent) if p is not None]

    def index(self, name: str) -> int:
        return self.named_indices[name]


def toy_skeleton() -> SkeletonTopology:
    """The 8-joint, 7-bone skeleton used throughout the toy tasks."""
    names = NAMED_JOINTS
    parent = (None, 0, 0, 1, 2, 7, 7, 0)
    radii = []
    for k, p in enumerate(parent):
        if p is None:
            continue
        radii.append(0.10 if (p, k) == (0, 7) else 0.05)
    return SkeletonTopology(
        joint_names=names,
        parent=parent,
        named_indices={n: i for i, n in enumerate(names)},
        capsule_radii=tuple(radii),
    )


# Rest pose facing +z with the root 0.9 m above the floor. The hips sit below
# the root so that the hip cross product points along the facing direction.
REST_POSE = np.array(
    [
        [0.00, 0.90, 0.00],   # root
        [-0.10, 0.80, 0.00],  # lhip
        [0.10, 0.80, 0.00],   # rhip
        [-0.10, 0.00, 0.00],  # lfoot
        [0.10, 0.00, 0.00],   # rfoot
        [-0.25, 0.95, 0.05],  # lhand
        [0.25, 0.95, 0.05],   # rhand
        [0.00, 1.60, 0.00],   # head
    ]
)


@dataclass(frozen=True)
class MotionSequence:
    positions: np.ndarray  # (T, K, 3) meters
    fps: float = 10.0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 3 or pos.shape[-1] != 3 or pos.shape[0] < 1:
            raise InvariantError(f"positions must be (T>=1, K, 3), got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise InvariantError("motion contains non-finite coordinates")
        if self.fps <= 0:
            raise InvariantError("fps must be positive")
        object.__setattr__(self, "positions", pos)

    @property
    def T(self) -> int:
        return self.positions.shape[0]

    @property
    def K(self) -> int:
        return self.positions.shape[1]

    def check_topology(self, topo: SkeletonTopology) -> None:
        if self.K != topo.K:
            raise InvariantError(f"motion has {self.K} joints, skeleton has {topo.K}")


def rotation_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _check_rotation(R: np.ndarray) -> None:
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise InvalidTransformError("rotation must be a finite 3x3 matrix")
    if np.max(np.abs(R @ R.T - np.eye(3))) > 1e-6 or abs(np.linalg.det(R) - 1.0) > 1e-6:
        raise InvalidTransformError("rotation is not orthonormal with determinant 1")


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        _check_rotation(R)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)


def apply_transform(points: np.ndarray, xf: RigidTransform) -> np.ndarray:
    """Rotate then translate each row of ``points``."""
    _check_rotation(xf.rotation)
    pts = np.asarray(points, dtype=np.float64)
    return pts @ xf.rotation.T + xf.translation


@dataclass(frozen=True)
class EntitySnapshot:
    points: np.ndarray  # (M, 3) meters
    entity_class: EntityClass

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if pts.shape[0] < 1:
            raise InvariantError("entity has no points")
        if not np.all(np.isfinite(pts)):
            raise InvariantError("entity points must be finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "entity_class", EntityClass(self.entity_class))


def _perpendicular_basis(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = axis / np.linalg.norm(axis)
    helper = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(a, helper)
    u /= np.linalg.norm(u)
    v = np.cross(a, u)
    return u, v


def sample_body_surface(frame, topo: SkeletonTopology, samples_per_bone: int,
                        seed: int = 0) -> EntitySnapshot:
    """Sample points on a capsule around every bone of one skeleton pose.

    Points are spread evenly along each bone axis and pushed out by the
    bone's capsule radius in a random perpendicular direction. A bone whose
    endpoints coincide is replaced by a sphere of the same radius.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (topo.K, 3):
        raise InvariantError(f"frame must be ({topo.K}, 3), got {frame.shape}")
    if samples_per_bone < 1:
        raise InvariantError("samples_per_bone must be >= 1")
    rng = np.random.default_rng(seed)
    n = samples_per_bone
    out = []
    for (p, c), r in zip(topo.bones, topo.capsule_radii):
        start, axis = frame[p], frame[c] - frame[p]
        if np.linalg.norm(axis) < 1e-9:
            d = rng.normal(size=(n, 3))
            d /= np.linalg.norm(d, axis=1, keepdims=True)
            out.append(start + r * d)
            continue
        u, v = _perpendicular_basis(axis)
        frac = (np.arange(n) + 0.5) / n
        theta = rng.uniform(0.0, 2 * np.pi, size=n)
        radial = np.cos(theta)[:, None] * u + np.sin(theta)[:, None] * v
        out.append(start + frac[:, None] * axis + r * radial)
    return EntitySnapshot(np.concatenate(out, axis=0), EntityClass.HUMAN)


def bone_vectors(frame, topo: SkeletonTopology) -> np.ndarray:
    """parent position minus child position for every bone; works on (..., K, 3)."""
    frame = np.asarray(frame)
    bones = np.array(topo.bones)
    return frame[..., bones[:, 0], :] - frame[..., bones[:, 1], :]


def hip_vectors(frame, topo: SkeletonTopology) -> tuple[np.ndarray, np.ndarray]:
    root, lhip, rhip = topo.index("root"), topo.index("lhip"), topo.index("rhip")
    frame = np.asarray(frame)
    return frame[..., root, :] - frame[..., lhip, :], frame[..., root, :] - frame[..., rhip, :]


def initial_orientation(frame0, topo: SkeletonTopology) -> tuple[np.ndarray, bool]:
    """Heading of a pose as the cross product of its unit hip bone vectors.

    Returns ``(d0, degenerate)``; ``degenerate`` is True (and ``d0`` zero) when
    the two hip vectors are parallel. The cross product is not re-normalized.
    """
    a, b = hip_vectors(np.asarray(frame0, dtype=np.float64), topo)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-9 or nb < 1e-9:
        raise DegenerateSkeletonError("hip bone has (near) zero length")
    d = np.cross(a / na, b / nb)
    if np.linalg.norm(d) < 1e-12:
        return np.zeros(3), True
    return d, False


def pose_at(root_xyz, heading: float, rest: np.ndarray = REST_POSE) -> np.ndarray:
    """Rest pose rotated about +y by ``heading`` and moved so the root sits at ``root_xyz``."""
    R = rotation_y(heading)
    local = rest - rest[0]
    return local @ R.T + np.asarray(root_xyz, dtype=np.float64)
