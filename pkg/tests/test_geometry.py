import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import kabsch, random_rotation, rigid_cost, rot_z
from spatflow.errors import BehindCamera, DegenerateConfiguration, NonPositiveDepth, TooFewPoints, ValidationError
from spatflow.geometry import (
    CameraModel,
    RigidTransform,
    compose,
    project,
    rotation_angle,
    svd3,
    umeyama_align,
    unproject,
)


def test_compose_identity():
    out = compose(RigidTransform.identity(), RigidTransform.identity())
    assert np.array_equal(out.rotation, np.eye(3))
    assert np.array_equal(out.translation, np.zeros(3))


def test_compose_inverse_translation():
    d = np.array([0.3, -1.2, 4.0])
    out = compose(RigidTransform.from_translation(d), RigidTransform.from_translation(-d))
    assert np.allclose(out.matrix(), np.eye(4), atol=0)


def test_compose_rotations_add():
    out = compose(RigidTransform(rot_z(30)), RigidTransform(rot_z(60)))
    assert np.max(np.abs(out.rotation - rot_z(90))) < 1e-12


def test_compose_order_applies_b_first():
    a = RigidTransform(rot_z(90))
    b = RigidTransform.from_translation([1.0, 0.0, 0.0])
    p = np.array([[0.0, 0.0, 0.0]])
    assert np.allclose(compose(a, b).apply(p), [[0.0, 1.0, 0.0]], atol=1e-15)


def test_rigid_transform_rejects_reflection():
    with pytest.raises(ValidationError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]))


def test_inverse_round_trip():
    rng = np.random.default_rng(0)
    tr = RigidTransform(random_rotation(rng), rng.normal(size=3))
    pts = rng.normal(size=(20, 3))
    assert np.allclose(tr.inverse().apply(tr.apply(pts)), pts, atol=1e-12)


def test_svd3_matches_lapack_singular_values():
    rng = np.random.default_rng(1)
    for _ in range(200):
        m = rng.normal(size=(3, 3))
        u, s, vt = svd3(m)
        assert np.allclose(u @ np.diag(s) @ vt, m, atol=1e-12)
        assert np.allclose(s, np.linalg.svd(m, compute_uv=False), atol=1e-12)
        assert np.allclose(u.T @ u, np.eye(3), atol=1e-12)
        assert np.allclose(vt @ vt.T, np.eye(3), atol=1e-12)


def test_umeyama_identity_and_translation():
    rng = np.random.default_rng(2)
    src = rng.normal(size=(12, 3))
    tr = umeyama_align(src, src)
    assert np.max(np.abs(tr.rotation - np.eye(3))) < 1e-12
    assert np.max(np.abs(tr.translation)) < 1e-12
    tr = umeyama_align(src, src + [1.0, 2.0, 3.0])
    assert np.max(np.abs(tr.rotation - np.eye(3))) < 1e-12
    assert np.allclose(tr.translation, [1.0, 2.0, 3.0], atol=1e-12)


def test_umeyama_recovers_rz45():
    rng = np.random.default_rng(3)
    src = rng.uniform(-1, 1, size=(10, 3))
    dst = src @ rot_z(45).T + [0.5, 0.0, 0.0]
    tr = umeyama_align(src, dst)
    assert np.max(np.abs(tr.rotation - rot_z(45))) < 1e-9
    assert np.max(np.abs(tr.translation - [0.5, 0.0, 0.0])) < 1e-9


def test_umeyama_reflection_returns_proper_rotation():
    rng = np.random.default_rng(4)
    src = rng.normal(size=(30, 3))
    dst = src * [1.0, 1.0, -1.0]
    tr = umeyama_align(src, dst)
    assert abs(np.linalg.det(tr.rotation) - 1.0) < 1e-12
    # no proper rotation from a dense random search does better
    best = rigid_cost(tr.rotation, tr.translation, src, dst)
    for _ in range(2000):
        r = random_rotation(rng)
        t = dst.mean(axis=0) - r @ src.mean(axis=0)
        assert rigid_cost(r, t, src, dst) >= best - 1e-9
    r_ref, t_ref = kabsch(src, dst)
    assert abs(rigid_cost(r_ref, t_ref, src, dst) - best) < 1e-9


def test_umeyama_errors():
    with pytest.raises(TooFewPoints):
        umeyama_align(np.zeros((2, 3)), np.zeros((2, 3)))
    line = np.outer(np.arange(6.0), [1.0, 2.0, 0.5])
    with pytest.raises(DegenerateConfiguration):
        umeyama_align(line, line + 1.0)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(3, 60), offset=st.floats(-100, 100))
def test_umeyama_translation_equivariance(seed, n, offset):
    rng = np.random.default_rng(seed)
    src = rng.normal(size=(n, 3))
    dst = src @ random_rotation(rng).T + rng.normal(size=3)
    c = np.array([offset, -offset / 2, 1.0])
    a = umeyama_align(src, dst)
    b = umeyama_align(src + c, dst + c)
    assert np.allclose(a.rotation, b.rotation, atol=1e-9)
    assert np.allclose(b.translation, a.translation + c - a.rotation @ c, atol=1e-8)
    assert abs(np.linalg.det(b.rotation) - 1.0) < 1e-9


def test_rotation_angle():
    assert abs(rotation_angle(rot_z(5)) - math.radians(5)) < 1e-14


# ---------------------------------------------------------------------------
# Cameras


def cam(pose=None):
    return CameraModel.from_params(100.0, 100.0, 50.0, 40.0, 100, 80, pose)


def test_project_principal_point():
    u, v, z = project(cam(), [0.0, 0.0, 1.0])
    assert (u, v, z) == (50.0, 40.0, 1.0)


def test_project_hand_value():
    u, _, _ = project(cam(), [1.0, 0.0, 2.0])
    assert u == 100.0


def test_project_behind_camera():
    with pytest.raises(BehindCamera):
        project(cam(), [0.0, 0.0, -1.0])
    with pytest.raises(BehindCamera):
        project(cam(), [0.0, 0.0, 0.0])


def test_unproject_axis_and_pose():
    assert np.allclose(unproject(cam(), (50.0, 40.0), 5.0), [0.0, 0.0, 5.0])
    c = cam(RigidTransform.from_translation([0.0, 0.0, -5.0]))
    assert np.allclose(unproject(c, (50.0, 40.0), 5.0), [0.0, 0.0, 0.0])
    with pytest.raises(NonPositiveDepth):
        unproject(cam(), (1.0, 1.0), 0.0)


def test_camera_validation():
    with pytest.raises(ValidationError):
        CameraModel.from_params(0.0, 1.0, 1.0, 1.0, 10, 10)
    with pytest.raises(ValidationError):
        CameraModel.from_params(1.0, 1.0, 10.0, 1.0, 10, 10)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), u=st.floats(0, 99), v=st.floats(0, 79), d=st.floats(0.01, 100))
def test_project_unproject_round_trip(seed, u, v, d):
    rng = np.random.default_rng(seed)
    c = cam(RigidTransform(random_rotation(rng), rng.normal(size=3)))
    p = unproject(c, (u, v), d)
    u2, v2, d2 = project(c, p)
    assert abs(u2 - u) < 1e-9 and abs(v2 - v) < 1e-9 and abs(d2 - d) < 1e-9 * max(1.0, d)
