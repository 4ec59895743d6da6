import numpy as np
import pytest
from helpers import random_anchor, random_robot, range_jacobian_fd_error
from hypothesis import given, settings
from hypothesis import strategies as st

from uwbcalib.state import RobotState, Rotation3, UwbState
from uwbcalib.uwb import (DegenerateGeometryError, TagExtrinsics, predict_range,
                          range_jacobians, range_noise_var, simulate_range)

ROOT300 = np.sqrt(300.0)


def origin_robot():
    return RobotState(Rotation3.identity(), np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3))


def test_unbiased_range_is_euclidean():
    d = predict_range(origin_robot(), UwbState(0, [10.0, 10.0, 10.0], 1.0, 0.0), TagExtrinsics())
    assert d == pytest.approx(17.320508, abs=1e-6)


def test_biased_range_hand_value():
    d = predict_range(origin_robot(), UwbState(0, [10.0, 10.0, 10.0], 0.9, -0.3), TagExtrinsics())
    assert d == pytest.approx(0.9 * ROOT300 - 0.3, abs=1e-12)
    assert d == pytest.approx(15.288457, abs=1e-6)


def test_coincident_tag_and_anchor_is_degenerate():
    with pytest.raises(DegenerateGeometryError):
        predict_range(origin_robot(), UwbState(0, np.zeros(3)), TagExtrinsics())
    with pytest.raises(DegenerateGeometryError):
        range_jacobians(origin_robot(), UwbState(0, np.zeros(3)), TagExtrinsics())


def test_jacobian_hand_values():
    H_I, H_U = range_jacobians(origin_robot(), UwbState(0, [10.0, 10.0, 10.0], 0.9, -0.3),
                               TagExtrinsics())
    H_p = H_I[12:15]
    assert np.allclose(H_p, [-0.5196152] * 3, atol=1e-7)
    assert np.allclose(H_U[:3], -H_p)
    assert H_U[3] == pytest.approx(ROOT300, abs=1e-6)
    assert H_U[4] == 1.0
    assert np.array_equal(H_I[3:12], np.zeros(9))


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1))
def test_jacobians_match_finite_differences(seed):
    assert range_jacobian_fd_error(np.random.default_rng(seed)) < 1e-5


@given(st.integers(0, 2**32 - 1))
def test_position_row_has_norm_beta(seed):
    rng = np.random.default_rng(seed)
    uwb = random_anchor(rng)
    H_I, _ = range_jacobians(random_robot(rng), uwb, TagExtrinsics(rng.normal(0, 0.3, 3)))
    assert np.linalg.norm(H_I[12:15]) == pytest.approx(uwb.beta, rel=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_range_invariant_under_rigid_transform(seed):
    rng = np.random.default_rng(seed)
    robot, uwb = random_robot(rng), random_anchor(rng)
    ext = TagExtrinsics(rng.normal(0, 0.3, 3))
    G = Rotation3.from_rotvec(rng.normal(0, 1, 3))
    t = rng.normal(0, 5, 3)
    robot2 = RobotState(G.compose(robot.rot), robot.bg, robot.v, robot.ba,
                        G.R @ robot.p + t)
    uwb2 = UwbState(0, G.R @ uwb.p_a + t, uwb.beta, uwb.gamma)
    assert abs(predict_range(robot2, uwb2, ext) - predict_range(robot, uwb, ext)) < 1e-9


def test_zero_noise_simulation_is_exact():
    rng = np.random.default_rng(0)
    robot, uwb = random_robot(rng), random_anchor(rng)
    ext = TagExtrinsics([0.1, 0.0, 0.05])
    m = simulate_range(robot, uwb, ext, 0.0, rng, t=1.5)
    assert m.distance == predict_range(robot, uwb, ext)
    assert m.t == 1.5 and m.anchor_id == uwb.anchor_id


def test_noise_is_scaled_by_beta():
    rng = np.random.default_rng(1)
    robot = origin_robot()
    uwb = UwbState(0, [10.0, 10.0, 10.0], 0.9, -0.3)
    ext = TagExtrinsics()
    n, sd = 100_000, 0.1
    d = np.array([simulate_range(robot, uwb, ext, sd, rng).distance for _ in range(n)])
    mean = predict_range(robot, uwb, ext)
    assert abs(d.mean() - mean) < 4 * uwb.beta * sd / np.sqrt(n)
    assert d.std() == pytest.approx(uwb.beta * sd, rel=0.05)


def test_negative_noise_std_rejected():
    with pytest.raises(ValueError):
        simulate_range(origin_robot(), UwbState(0, [1.0, 0, 0]), TagExtrinsics(), -1.0,
                       np.random.default_rng(0))


def test_filter_noise_variance_scaling():
    assert range_noise_var(0.1, 0.9, scaled=True) == pytest.approx(0.0081)
    assert range_noise_var(0.1, 0.9, scaled=False) == pytest.approx(0.01)


def test_tag_offset_must_be_finite():
    with pytest.raises(ValueError):
        TagExtrinsics([np.nan, 0.0, 0.0])
