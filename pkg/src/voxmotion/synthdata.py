"""Procedural toy interaction samples for the three task families.

Every generator is a pure function of its seed. Motions use the toy
skeleton: the body is the rest pose carried by the root, feet follow a
stepping gait with stance feet pinned to the floor, and hands are animated
per task.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import InvariantError
from .geometry import (EntityClass, EntitySnapshot, MotionSequence, REST_POSE, SkeletonTopology,
                       pose_at, rotation_y, sample_body_surface)
from .metrics import CONTACT_THRESHOLD, contact_flags
from .uiv import VolumeSpec

LIFT_HEIGHT = 0.12
PLACE_MARGIN = 0.6
FACE_DISTANCE = 0.6


class TaskId(enum.IntEnum):
    HUMAN_HUMAN = 0
    HUMAN_OBJECT = 1
    HUMAN_SCENE = 2
    COMPOUND = 3


TASK_NAMES = {"approach": TaskId.HUMAN_HUMAN, "reach": TaskId.HUMAN_OBJECT,
              "goalwalk": TaskId.HUMAN_SCENE, "compound": TaskId.COMPOUND}


@dataclass
class ToySample:
    task_id: TaskId
    entities: list  # per frame: list of EntitySnapshot
    gt_motion: MotionSequence
    contact_labels: np.ndarray  # (T, 2) bool, (left, right) hand
    goal: np.ndarray | None
    seed: int
    object_points: np.ndarray | None = field(default=None, repr=False)

    @property
    def T(self) -> int:
        return self.gt_motion.T


def min_jerk(s):
    """Minimum-jerk blend 10s^3 - 15s^4 + 6s^5 on [0, 1]."""
    s = np.clip(s, 0.0, 1.0)
    return s**3 * (10 - 15 * s + 6 * s * s)


def _rng(seed: int, task: TaskId) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(task)])


def _horizontal_box(spec: VolumeSpec, margin: float):
    lo, hi = spec.world_bounds()
    return np.array([lo[0] + margin, lo[2] + margin]), np.array([hi[0] - margin, hi[2] - margin])


def _sample_xz(rng, spec: VolumeSpec, margin: float = PLACE_MARGIN) -> np.ndarray:
    lo, hi = _horizontal_box(spec, margin)
    return rng.uniform(lo, hi)


def _inside_xz(p, spec: VolumeSpec, margin: float) -> bool:
    lo, hi = _horizontal_box(spec, margin)
    return bool(np.all(p >= lo) and np.all(p <= hi))


def heading_towards(src_xz, dst_xz) -> float:
    d = np.asarray(dst_xz) - np.asarray(src_xz)
    return float(np.arctan2(d[0], d[1]))


def forward(heading: float) -> np.ndarray:
    """Horizontal facing direction (x, z) for a heading angle."""
    return np.array([np.sin(heading), np.cos(heading)])


def floor_points(spec: VolumeSpec) -> np.ndarray:
    """One point per bottom-layer voxel column, on the plane y = 0."""
    xs = spec.axis_centers(1)
    zs = spec.axis_centers(2)
    X, Z = np.meshgrid(xs, zs, indexing="ij")
    return np.stack([X.ravel(), np.zeros(X.size), Z.ravel()], axis=1)


def box_points(rng, center, half, n: int = 240) -> np.ndarray:
    """Points on the surface of an axis-aligned box."""
    u = rng.uniform(-1, 1, size=(n, 3))
    face = rng.integers(0, 3, size=n)
    u[np.arange(n), face] = rng.choice([-1.0, 1.0], size=n)
    return np.asarray(center) + u * np.asarray(half)


def sphere_points(rng, center, radius: float, n: int = 64) -> np.ndarray:
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return np.asarray(center) + radius * d


def walk_motion(start_xz, end_xz, heading: float, T: int,
                rest: np.ndarray = REST_POSE) -> np.ndarray:
    """Root moves at constant speed from start to end while the feet step.

    Each foot repeats stance, stance, lift-in-place, hover-over-next-foothold
    with the right foot two frames out of phase. Stance feet sit exactly on
    the floor and never move horizontally, and a foot only changes its
    horizontal position while lifted.
    """
    start_xz, end_xz = np.asarray(start_xz, float), np.asarray(end_xz, float)
    root_h = rest[0, 1]
    frac = np.arange(T) / max(T - 1, 1)
    root_xz = start_xz + frac[:, None] * (end_xz - start_xz)
    R = rotation_y(heading)
    offsets = (rest - rest[0]) @ R.T  # rotated offsets relative to root
    pos = np.empty((T, len(rest), 3))
    pos[:, :, 0] = root_xz[:, 0, None] + offsets[None, :, 0]
    pos[:, :, 1] = root_h + offsets[None, :, 1]
    pos[:, :, 2] = root_xz[:, 1, None] + offsets[None, :, 2]

    def root_at(t: float) -> np.ndarray:
        t = np.clip(t, 0, T - 1)
        return start_xz + (t / max(T - 1, 1)) * (end_xz - start_xz)

    for foot, phase in ((3, 0), (4, 2)):
        lateral = offsets[foot, [0, 2]]

        def foothold(stance_start: int) -> np.ndarray:
            return root_at(stance_start + 0.5) + lateral

        for t in range(T):
            k = (t - phase) % 4
            s = t - k  # start of the current stance interval
            if k in (0, 1):
                xz, y = foothold(s), 0.0
            elif k == 2:
                xz, y = foothold(s), LIFT_HEIGHT
            else:
                xz, y = foothold(s + 4), LIFT_HEIGHT
            pos[t, foot] = (xz[0], y, xz[1])
    return pos


def _check_in_grid(pos: np.ndarray, spec: VolumeSpec) -> bool:
    lo, hi = spec.world_bounds()
    return bool(np.all(pos >= lo) and np.all(pos <= hi))


def gen_reach(seed: int, spec: VolumeSpec, T: int, topo: SkeletonTopology) -> ToySample:
    """Stand still and move one hand onto a small static object."""
    rng = _rng(seed, TaskId.HUMAN_OBJECT)
    root_xz = _sample_xz(rng, spec, margin=1.0)
    heading = rng.uniform(-np.pi, np.pi)
    pose = pose_at((root_xz[0], REST_POSE[0, 1], root_xz[1]), heading)
    hand = topo.index("rhand") if rng.random() < 0.5 else topo.index("lhand")
    start = pose[hand]
    fwd = forward(heading)
    direction = np.array([fwd[0], 0.0, fwd[1]]) + rng.uniform(-0.6, 0.6, size=3) * [1, 0.8, 1]
    direction /= np.linalg.norm(direction)
    radius = 0.06
    center = start + rng.uniform(0.3, 0.55) * direction
    center[1] = np.clip(center[1], 0.3, 1.8)
    obj = sphere_points(rng, center, radius)
    target = obj[np.argmin(np.linalg.norm(obj - start, axis=1))]

    t_c = max(1, min(T - 1, int(np.floor(0.75 * T))))
    s = min_jerk(np.arange(T) / t_c)
    motion = np.repeat(pose[None], T, axis=0)
    motion[:, hand] = start + s[:, None] * (target - start)
    labels = contact_flags(motion, obj, topo, CONTACT_THRESHOLD)
    ents = [[EntitySnapshot(obj, EntityClass.OBJECT)] for _ in range(T)]
    return ToySample(TaskId.HUMAN_OBJECT, ents, MotionSequence(motion), labels, None, seed, obj)


def gen_goalwalk(seed: int, spec: VolumeSpec, T: int, topo: SkeletonTopology) -> ToySample:
    """Walk in a straight line to a goal on the floor, past 1-3 box obstacles."""
    rng = _rng(seed, TaskId.HUMAN_SCENE)
    while True:
        start, goal_xz = _sample_xz(rng, spec), _sample_xz(rng, spec)
        if 1.0 <= np.linalg.norm(goal_xz - start) <= 3.0:
            break
    heading = heading_towards(start, goal_xz)
    motion = walk_motion(start, goal_xz, heading, T)

    seg = goal_xz - start
    scene = [floor_points(spec)]
    n_boxes = int(rng.integers(1, 4))
    placed = 0
    for _ in range(200):
        if placed == n_boxes:
            break
        half = rng.uniform(0.15, 0.3, size=3)
        half[1] = rng.uniform(0.15, 0.5)
        c = _sample_xz(rng, spec, margin=0.3)
        u = np.clip(np.dot(c - start, seg) / np.dot(seg, seg), 0, 1)
        if np.linalg.norm(c - (start + u * seg)) < 0.6 + np.max(half[[0, 2]]) * 1.5:
            continue
        scene.append(box_points(rng, (c[0], half[1], c[1]), half))
        placed += 1
    pts = np.concatenate(scene)
    ents = [[EntitySnapshot(pts, EntityClass.SCENE)] for _ in range(T)]
    goal = np.array([goal_xz[0], 0.0, goal_xz[1]])
    labels = np.zeros((T, 2), dtype=bool)
    return ToySample(TaskId.HUMAN_SCENE, ents, MotionSequence(motion), labels, goal, seed)


def gen_approach(seed: int, spec: VolumeSpec, T: int, topo: SkeletonTopology) -> ToySample:
    """Walk up to a standing partner, stop face to face and raise a hand."""
    rng = _rng(seed, TaskId.HUMAN_HUMAN)
    while True:
        partner_xz = _sample_xz(rng, spec, margin=1.0)
        p_heading = rng.uniform(-np.pi, np.pi)
        final_xz = partner_xz + FACE_DISTANCE * forward(p_heading)
        if not _inside_xz(final_xz, spec, PLACE_MARGIN):
            continue
        start = _sample_xz(rng, spec)
        dist = np.linalg.norm(start - final_xz)
        if 1.0 <= dist <= 2.5 and np.linalg.norm(start - partner_xz) > 0.8:
            break
    heading = p_heading + np.pi
    motion = walk_motion(start, final_xz, heading, T)
    hand = topo.index("rhand")
    t_r = min(T - 1, int(np.floor(0.75 * T)))
    raised = motion[-1, topo.root] + np.array([0.0, 0.6, 0.0])
    fwd = forward(heading)
    raised[[0, 2]] += 0.3 * fwd
    span = max(T - 1 - t_r, 1)
    for t in range(t_r, T):
        w = min_jerk((t - t_r) / span)
        motion[t, hand] = (1 - w) * motion[t, hand] + w * raised

    partner_pose = pose_at((partner_xz[0], REST_POSE[0, 1], partner_xz[1]), p_heading)
    body = sample_body_surface(partner_pose, topo, samples_per_bone=48, seed=int(rng.integers(1 << 31)))
    ents = [[body] for _ in range(T)]
    labels = np.zeros((T, 2), dtype=bool)
    return ToySample(TaskId.HUMAN_HUMAN, ents, MotionSequence(motion), labels, None, seed)


def gen_compound(seed: int, spec: VolumeSpec, T: int, topo: SkeletonTopology) -> ToySample:
    """Goal walk whose last quarter adds a reach to an object at the goal."""
    walk = gen_goalwalk(seed, spec, T, topo)
    rng = _rng(seed, TaskId.COMPOUND)
    motion = walk.gt_motion.positions.copy()
    heading = heading_towards(motion[0, 0, [0, 2]], walk.goal[[0, 2]])
    hand = topo.index("rhand")
    fwd = forward(heading)
    center = motion[-1, hand] + np.array([0.35 * fwd[0], rng.uniform(-0.1, 0.2), 0.35 * fwd[1]])
    obj = sphere_points(rng, center, 0.06)
    t_r = min(T - 1, int(np.floor(0.75 * T)))
    start = motion[t_r, hand]
    target = obj[np.argmin(np.linalg.norm(obj - motion[-1, hand], axis=1))]
    span = max(T - 1 - t_r, 1)
    for t in range(t_r, T):
        base = motion[t, hand] - motion[t_r, hand] + start
        w = min_jerk((t - t_r) / span)
        motion[t, hand] = (1 - w) * base + w * target
    ents = [e + [EntitySnapshot(obj, EntityClass.OBJECT)] for e in walk.entities]
    labels = contact_flags(motion, obj, topo, CONTACT_THRESHOLD)
    return ToySample(TaskId.COMPOUND, ents, MotionSequence(motion), labels, walk.goal, seed, obj)


GENERATORS = {
    TaskId.HUMAN_HUMAN: gen_approach,
    TaskId.HUMAN_OBJECT: gen_reach,
    TaskId.HUMAN_SCENE: gen_goalwalk,
    TaskId.COMPOUND: gen_compound,
}


def generate(task, seed: int, spec: VolumeSpec, T: int, topo: SkeletonTopology) -> ToySample:
    task = TASK_NAMES[task] if isinstance(task, str) else TaskId(task)
    sample = GENERATORS[task](seed, spec, T, topo)
    if not _check_in_grid(sample.gt_motion.positions, spec):
        raise InvariantError(f"generated motion leaves the grid (task {task.name}, seed {seed})")
    return sample


def has_human_condition(sample: ToySample) -> bool:
    return any(e.entity_class == EntityClass.HUMAN for ents in sample.entities for e in ents)
