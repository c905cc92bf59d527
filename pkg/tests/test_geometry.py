import numpy as np
import pytest
from hypothesis import given, strategies as st

from voxmotion.errors import DegenerateSkeletonError, InvalidTransformError, InvariantError
from voxmotion.geometry import (
    NAMED_JOINTS, REST_POSE, EntityClass, EntitySnapshot, MotionSequence, RigidTransform,
    SkeletonTopology, apply_transform, bone_vectors, initial_orientation, pose_at, rotation_y,
    sample_body_surface, toy_skeleton,
)

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def _topo(**kw):
    base = dict(
        joint_names=NAMED_JOINTS,
        parent=(None, 0, 0, 1, 2, 7, 7, 0),
        named_indices={n: i for i, n in enumerate(NAMED_JOINTS)},
        capsule_radii=(0.05,) * 7,
    )
    base.update(kw)
    return SkeletonTopology(**base)


def test_toy_skeleton_shape(topo):
    assert topo.K == 8
    assert len(topo.bones) == 7
    assert topo.root == 0
    assert topo.capsule_radii[topo.bones.index((0, 7))] == 0.10


@pytest.mark.parametrize("kw", [
    dict(parent=(None, None, 0, 1, 2, 7, 7, 0)),           # two roots
    dict(parent=(None, 2, 1, 1, 2, 7, 7, 0)),              # cycle 1 <-> 2
    dict(parent=(None, 0, 0, 1, 2, 7, 7, 9)),              # parent out of range
    dict(named_indices={n: i for i, n in enumerate(NAMED_JOINTS) if n != "head"}),
    dict(named_indices={**{n: i for i, n in enumerate(NAMED_JOINTS)}, "rhip": 1}),
    dict(capsule_radii=(0.05,) * 6),
    dict(capsule_radii=(0.05,) * 6 + (0.0,)),
])
def test_skeleton_rejects_invalid(kw):
    with pytest.raises(InvariantError):
        _topo(**kw)


def test_motion_rejects_bad_input():
    with pytest.raises(InvariantError):
        MotionSequence(np.zeros((0, 8, 3)))
    bad = np.zeros((2, 8, 3))
    bad[1, 3, 0] = np.nan
    with pytest.raises(InvariantError):
        MotionSequence(bad)
    with pytest.raises(InvariantError):
        MotionSequence(np.zeros((2, 8, 3))).check_topology(_topo(
            joint_names=NAMED_JOINTS + ("x",), parent=(None, 0, 0, 1, 2, 7, 7, 0, 0),
            capsule_radii=(0.05,) * 8))


@given(st.floats(-np.pi, np.pi), st.tuples(finite, finite, finite), st.integers(0, 2**31))
def test_apply_transform_preserves_distances(angle, t, seed):
    pts = np.random.default_rng(seed).uniform(-3, 3, (12, 3))
    axis = np.random.default_rng(seed + 1).standard_normal(3)
    axis /= np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    R = np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K  # Rodrigues
    out = apply_transform(pts, RigidTransform(R, np.array(t)))
    d0 = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    d1 = np.linalg.norm(out[:, None] - out[None], axis=-1)
    assert np.max(np.abs(d0 - d1)) < 1e-9


def test_apply_transform_explicit():
    out = apply_transform(np.array([[1.0, 0.0, 0.0]]), RigidTransform(rotation_y(np.pi / 2), [0, 1, 0]))
    np.testing.assert_allclose(out, [[0.0, 1.0, -1.0]], atol=1e-15)


@pytest.mark.parametrize("R", [np.diag([1.0, 1.0, -1.0]), 2 * np.eye(3), np.ones((3, 3))])
def test_invalid_rotation(R):
    with pytest.raises(InvalidTransformError):
        RigidTransform(R, np.zeros(3))


def test_bone_vectors_parent_minus_child(topo):
    f = np.random.default_rng(0).standard_normal((8, 3))
    bv = bone_vectors(f, topo)
    for b, (p, c) in enumerate(topo.bones):
        np.testing.assert_array_equal(bv[b], f[p] - f[c])


def test_rest_pose_faces_forward(topo):
    d0, degenerate = initial_orientation(REST_POSE, topo)
    assert not degenerate
    u = d0 / np.linalg.norm(d0)
    np.testing.assert_allclose(u, [0, 0, 1], atol=1e-12)


@given(st.floats(-np.pi, np.pi))
def test_orientation_follows_heading(h):
    topo = toy_skeleton()
    d0, _ = initial_orientation(pose_at([0, 0.9, 0], h), topo)
    u = d0 / np.linalg.norm(d0)
    np.testing.assert_allclose(u, [np.sin(h), 0, np.cos(h)], atol=1e-9)


def test_orientation_not_renormalized(topo):
    # the unit hip vectors are 90 degrees apart in the rest pose, so |d0| = sin(90) = 1,
    # while a squashed pelvis gives |d0| = sin(angle) < 1
    f = REST_POSE.copy()
    f[1, 1] = f[2, 1] = 0.85
    a = f[0] - f[1]
    b = f[0] - f[2]
    ua, ub = a / np.linalg.norm(a), b / np.linalg.norm(b)
    d0, _ = initial_orientation(f, topo)
    np.testing.assert_allclose(np.linalg.norm(d0), np.linalg.norm(np.cross(ua, ub)), rtol=1e-12)
    assert np.linalg.norm(d0) < 1


def test_orientation_degenerate(topo):
    f = REST_POSE.copy()
    f[1] = f[0] + [0.0, -0.1, 0.0]
    f[2] = f[0] + [0.0, -0.2, 0.0]  # parallel hip vectors
    d0, degenerate = initial_orientation(f, topo)
    assert degenerate and not np.any(d0)
    f[1] = f[0]
    with pytest.raises(DegenerateSkeletonError):
        initial_orientation(f, topo)


def _segment_distance(p, a, b):
    ab = b - a
    s = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0, 1)
    return np.linalg.norm(p - (a + s * ab))


def test_body_surface_on_capsules(topo):
    n = 10
    snap = sample_body_surface(REST_POSE, topo, n, seed=3)
    assert snap.entity_class == EntityClass.HUMAN
    assert snap.points.shape == (7 * n, 3)
    for b, ((p, c), r) in enumerate(zip(topo.bones, topo.capsule_radii)):
        for q in snap.points[b * n : (b + 1) * n]:
            assert abs(_segment_distance(q, REST_POSE[p], REST_POSE[c]) - r) < 1e-9


def test_body_surface_deterministic_and_degenerate_bone(topo):
    a = sample_body_surface(REST_POSE, topo, 6, seed=5).points
    b = sample_body_surface(REST_POSE, topo, 6, seed=5).points
    np.testing.assert_array_equal(a, b)
    f = REST_POSE.copy()
    f[3] = f[1]  # zero-length left shin
    pts = sample_body_surface(f, topo, 6, seed=1).points
    shin = pts[2 * 6 : 3 * 6]
    np.testing.assert_allclose(np.linalg.norm(shin - f[1], axis=1), 0.05, atol=1e-12)


def test_entity_snapshot_validation():
    with pytest.raises(InvariantError):
        EntitySnapshot(np.zeros((0, 3)), EntityClass.OBJECT)
    with pytest.raises(InvariantError):
        EntitySnapshot(np.array([[np.inf, 0, 0]]), EntityClass.OBJECT)
