import numpy as np
import pytest
from helpers import random_calib, random_robot, random_rotation, random_spd
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from uwbcalib.state import (ANCHOR_DIM, CLONE_DIM, IMU_DIM, BlockCovariance, CalibState,
                            Rotation3, UwbState, boxminus, boxplus, clone_augment,
                            clone_marginalize, min_eig_ok, quat_from_matrix, skew, so3_exp,
                            so3_log)

finite = st.floats(-100, 100, allow_nan=False, allow_infinity=False)
vec3 = arrays(np.float64, 3, elements=finite)
small3 = arrays(np.float64, 3, elements=st.floats(-0.28, 0.28, allow_nan=False))


def test_skew_of_zero_is_zero():
    assert np.array_equal(skew([0.0, 0.0, 0.0]), np.zeros((3, 3)))


def test_skew_basis_cross_product():
    assert np.allclose(skew([1.0, 0.0, 0.0]) @ [0.0, 1.0, 0.0], [0.0, 0.0, 1.0])


@given(vec3, vec3)
def test_skew_matches_cross_product(v, w):
    S = skew(v)
    assert np.allclose(S @ w, np.cross(v, w), atol=1e-12 * (1 + np.abs(v).max() * np.abs(w).max()))
    assert np.array_equal(S.T, -S)


@given(arrays(np.float64, 3, elements=st.floats(-3, 3, allow_nan=False)), small3)
def test_rotation_stays_orthonormal(phi, d):
    r = Rotation3.from_rotvec(phi).boxplus(d).compose(Rotation3.from_rotvec(d))
    assert abs(np.linalg.norm(r.q) - 1.0) < 1e-9
    assert np.allclose(r.R.T @ r.R, np.eye(3), atol=1e-9)
    assert abs(np.linalg.det(r.R) - 1.0) < 1e-9


@given(arrays(np.float64, 3, elements=st.floats(-3, 3, allow_nan=False)))
def test_quaternion_matrix_round_trip(phi):
    r = Rotation3.from_rotvec(phi)
    assert np.allclose(Rotation3(quat_from_matrix(r.R)).R, r.R, atol=1e-12)
    assert np.allclose(so3_exp(so3_log(r.R)), r.R, atol=1e-9)


def test_boxplus_zero_delta_is_identity():
    state, _ = random_calib(np.random.default_rng(0))
    out = boxplus(state, np.zeros(state.error_dim))
    assert np.array_equal(out.robot.p, state.robot.p)
    assert np.allclose(out.robot.rot.q, state.robot.rot.q, atol=1e-15)
    assert np.array_equal(out.anchors[0].p_a, state.anchors[0].p_a)


def test_boxplus_translates_position():
    state, _ = random_calib(np.random.default_rng(1), n_clones=0, n_anchors=0)
    state.robot.p = np.zeros(3)
    d = np.zeros(state.error_dim)
    d[12:15] = [1.0, 2.0, 3.0]
    assert np.array_equal(boxplus(state, d).robot.p, [1.0, 2.0, 3.0])


@given(small3)
def test_attitude_delta_then_negative_returns(theta):
    state, _ = random_calib(np.random.default_rng(2), n_clones=1, n_anchors=0)
    d = np.zeros(state.error_dim)
    d[0:3] = theta
    back = boxplus(boxplus(state, d), -d)
    assert np.allclose(back.robot.rot.R, state.robot.rot.R, atol=1e-10)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_boxminus_inverts_boxplus(seed):
    rng = np.random.default_rng(seed)
    state, _ = random_calib(rng, n_clones=2, n_anchors=2)
    d = rng.normal(0, 0.1, state.error_dim)
    for sl in [slice(0, 3), slice(15, 18), slice(21, 24)]:
        v = d[sl]
        n = np.linalg.norm(v)
        if n >= 0.5:
            d[sl] = v * 0.49 / n
    got = boxminus(boxplus(state, d), state)
    assert np.allclose(got, d, atol=1e-9)


def test_boxplus_rejects_wrong_dimension():
    state, _ = random_calib(np.random.default_rng(3))
    with pytest.raises(ValueError):
        boxplus(state, np.zeros(state.error_dim + 1))


def test_uwb_state_rejects_non_positive_beta():
    with pytest.raises(ValueError):
        UwbState(0, np.zeros(3), 0.0, 0.0)


def test_error_dimensions():
    state, cov = random_calib(np.random.default_rng(4), n_clones=3, n_anchors=2)
    assert state.robot.error_dim == 15 + 6 * 3
    assert state.error_dim == cov.dim == 15 + 18 + 10


def test_blocks_reassemble_bitwise():
    _, cov = random_calib(np.random.default_rng(5), n_clones=3, n_anchors=2)
    assert np.array_equal(np.block(cov.blocks()), cov.P)
    assert cov.P_II.shape == (IMU_DIM, IMU_DIM)
    assert cov.P_CC.shape == (3 * CLONE_DIM, 3 * CLONE_DIM)
    assert cov.P_UU.shape == (2 * ANCHOR_DIM, 2 * ANCHOR_DIM)
    assert np.array_equal(cov.P_IU, cov.P[:15, 33:])


def test_block_covariance_checks_shape():
    with pytest.raises(ValueError):
        BlockCovariance(np.eye(20), n_clones=1, n_anchors=0)


def _imu_cov(rng):
    return BlockCovariance(random_spd(rng, IMU_DIM, 0.01))


def test_clone_augment_duplicates_pose_block():
    rng = np.random.default_rng(6)
    robot = random_robot(rng)
    cov = _imu_cov(rng)
    r2, c2 = clone_augment(robot, cov, 5)
    rows = np.r_[0:3, 12:15]
    sl = c2.clone_slice(0)
    assert np.array_equal(c2.P[sl, sl], cov.P[np.ix_(rows, rows)])
    assert np.array_equal(c2.P[sl, :15], cov.P[rows, :])
    assert np.array_equal(r2.clones[-1].p, robot.p)
    assert np.array_equal(r2.clones[-1].rot.q, robot.rot.q)
    assert np.array_equal(c2.P, c2.P.T)
    for P in (cov.P, c2.P):
        w = np.linalg.eigvalsh(P)
        assert w[0] >= -1e-9 * w[-1]


def test_clone_augment_respects_window():
    rng = np.random.default_rng(7)
    robot, cov = random_robot(rng), _imu_cov(rng)
    robot, cov = clone_augment(robot, cov, 1)
    robot.t += 1.0
    with pytest.raises(ValueError):
        clone_augment(robot, cov, 1)


def test_clone_timestamps_strictly_increase():
    rng = np.random.default_rng(8)
    robot, cov = random_robot(rng), _imu_cov(rng)
    robot, cov = clone_augment(robot, cov, 5)
    with pytest.raises(ValueError):
        clone_augment(robot, cov, 5)


def test_augment_then_marginalize_is_bitwise_inverse():
    rng = np.random.default_rng(9)
    state, cov = random_calib(rng, n_clones=2, n_anchors=2)
    state.robot.t = 10.0
    r2, c2 = clone_augment(state.robot, cov, 5)
    r3, c3 = clone_marginalize(r2, c2, len(r2.clones) - 1)
    assert np.array_equal(c3.P, cov.P)
    assert c2.dim - c3.dim == 6
    assert len(r3.clones) == len(state.robot.clones)


def test_marginalize_keeps_uwb_block():
    rng = np.random.default_rng(10)
    state, cov = random_calib(rng, n_clones=3, n_anchors=2)
    _, c2 = clone_marginalize(state.robot, cov, 1)
    assert np.array_equal(c2.P_UU, cov.P_UU)
    assert np.array_equal(c2.P_II, cov.P_II)


def test_marginalize_invalid_index():
    rng = np.random.default_rng(11)
    state, cov = random_calib(rng, n_clones=2)
    with pytest.raises(IndexError):
        clone_marginalize(state.robot, cov, 5)


def test_min_eig_ok_detects_indefinite():
    assert min_eig_ok(np.eye(3))
    assert not min_eig_ok(np.diag([1.0, -1e-3, 1.0]))
    assert not min_eig_ok(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_calib_state_copy_is_independent():
    state, _ = random_calib(np.random.default_rng(12))
    c = state.copy()
    c.robot.p[0] += 1.0
    c.anchors[0].p_a[0] += 1.0
    assert c.robot.p[0] != state.robot.p[0]
    assert c.anchors[0].p_a[0] != state.anchors[0].p_a[0]
    assert isinstance(c, CalibState)


def test_rotation_boxminus_round_trip():
    rng = np.random.default_rng(13)
    a = random_rotation(rng)
    d = np.array([0.1, -0.2, 0.05])
    assert np.allclose(a.boxplus(d).boxminus(a), d, atol=1e-12)
