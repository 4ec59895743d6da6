import numpy as np
import pytest
from helpers import lissajous_positions, make_window, position_cov
from hypothesis import given, settings
from hypothesis import strategies as st

from uwbcalib.fim import (SINGULAR_FLAGS, build_sigma, degeneracy_flags, general_gaussian_fim,
                          sigma_jacobian, sigma_jacobian_fd)
from uwbcalib.state import Rotation3
from uwbcalib.uwb import TagExtrinsics, UwbState

ANCHOR = UwbState(0, np.array([6.0, 6.0, 5.0]), 0.98, -0.3)
X_U = [6.0, 6.0, 5.0, 0.98, -0.3]


def _rich(n=30, var=0.01, ext=TagExtrinsics(), rotations=None):
    _, pos = lissajous_positions(n)
    return make_window(pos, ANCHOR, ext, P_II=position_cov(var, 1e-4), rotations=rotations)


def test_sigma_is_range_variance_without_pose_uncertainty():
    w = _rich(var=0.0)
    w = make_window([e.robot.p for e in w.entries], ANCHOR)
    assert np.array_equal(build_sigma(w, X_U, 0.1), np.full(len(w), 0.1 ** 2))


def test_sigma_with_isotropic_position_variance():
    _, pos = lissajous_positions(10)
    w = make_window(pos, ANCHOR, P_II=position_cov(0.04))
    assert np.allclose(build_sigma(w, X_U, 0.1), 0.01 + 0.98 ** 2 * 0.04, rtol=1e-14)
    w4 = build_sigma(w, [6.0, 6.0, 5.0, -0.3], 0.1, fix_beta=True)
    assert np.allclose(w4, 0.01 + 0.04, rtol=1e-14)


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_sigma_jacobian_matches_finite_differences(seed, fix_beta):
    rng = np.random.default_rng(seed)
    _, pos = lissajous_positions(12)
    A = rng.normal(0, 0.1, (12, 15, 15))
    P = np.einsum("kij,klj->kil", A, A)
    rots = [Rotation3.from_rotvec(rng.normal(0, 0.5, 3)) for _ in pos]
    ext = TagExtrinsics(rng.normal(0, 0.2, 3))
    w = make_window(pos, ANCHOR, ext, P_II=P, rotations=rots)
    x = X_U if not fix_beta else [6.0, 6.0, 5.0, -0.3]
    an = sigma_jacobian(w, x, 0.1, ext, fix_beta)
    fd = sigma_jacobian_fd(w, x, 0.1, ext, fix_beta)
    assert np.allclose(an, fd, rtol=1e-6, atol=1e-9 * np.max(np.abs(an)))


def test_zero_pose_covariance_reduces_to_classical_fim():
    _, pos = lissajous_positions(25)
    w = make_window(pos, ANCHOR)
    F = general_gaussian_fim(w, X_U, 0.1).F
    d = pos - ANCHOR.p_a
    rho = np.linalg.norm(d, axis=1)
    J = np.column_stack([-0.98 * d / rho[:, None], rho, np.ones(25)])
    F_ref = J.T @ J / 0.01
    assert np.max(np.abs(F - F_ref)) < 1e-10 * np.max(np.abs(F_ref))


def test_static_window_position_block_has_rank_one():
    w = make_window([[1.0, 2.0, 1.5]] * 20, ANCHOR, P_II=position_cov(0.01))
    rep = general_gaussian_fim(w, X_U, 0.1)
    assert rep.position_rank == 1
    assert rep.flags == ["static"]


def test_planar_window_with_anchor_in_plane_is_singular():
    t = np.linspace(0, 20, 40)
    pos = np.column_stack([4 * np.sin(t / 3), 4 * np.cos(t / 2), np.full(40, 5.0)])
    w = make_window(pos, ANCHOR, P_II=position_cov(0.01))
    rep = general_gaussian_fim(w, X_U, 0.1)
    assert abs(rep.det) <= 1e-12
    assert rep.position_rank == 2
    assert rep.flags == ["planar-z"]


def test_larger_pose_uncertainty_lowers_information():
    _, pos = lissajous_positions(30)
    rng = np.random.default_rng(0)
    A = rng.normal(0, 0.05, (30, 15, 15))
    P = np.einsum("kij,klj->kil", A, A)
    dets = [general_gaussian_fim(make_window(pos, ANCHOR, P_II=s * P), X_U, 0.1).det
            for s in (1.0, 10.0, 100.0)]
    assert dets[0] > dets[1] > dets[2] > 0


def test_nested_windows_accumulate_information():
    _, pos = lissajous_positions(40)
    prev = None
    for n in range(8, 41, 4):
        F = general_gaussian_fim(make_window(pos[:n], ANCHOR, P_II=position_cov(0.01)),
                                 X_U, 0.1).F
        if prev is not None:
            assert np.linalg.eigvalsh(F - prev)[0] > -1e-9 * np.abs(F).max()
        prev = F


def test_variance_term_adds_information():
    w = _rich(var=0.05)
    both = general_gaussian_fim(w, X_U, 0.1).F
    mean = general_gaussian_fim(w, X_U, 0.1, terms="mean").F
    assert np.linalg.eigvalsh(both - mean)[0] > -1e-9
    printed = general_gaussian_fim(w, X_U, 0.1, form="printed").F
    assert not np.allclose(printed, both)
    with pytest.raises(ValueError):
        general_gaussian_fim(w, X_U, form="other")
    with pytest.raises(ValueError):
        general_gaussian_fim(w, X_U, terms="other")


def test_fixed_beta_drops_a_column():
    rep = general_gaussian_fim(_rich(), [6.0, 6.0, 5.0, -0.3], 0.1, fix_beta=True)
    assert rep.F.shape == (4, 4) and rep.rank == 4


def test_report_serializes():
    d = general_gaussian_fim(_rich(), X_U, 0.1).to_dict()
    assert set(d) == {"F", "det_f", "eigenvalues", "rank", "position_rank", "flags"}
    assert d["rank"] == 5 and d["flags"] == []


def test_geometry_flags():
    n = 30
    line = np.column_stack([np.linspace(-3, 3, n), np.zeros(n), np.full(n, 1.5)])
    assert degeneracy_flags(make_window(line, ANCHOR)) == ["collinear"]
    t = np.linspace(0, 10, n)
    tilted = np.column_stack([3 * np.sin(t), 3 * np.cos(t), 3 * np.sin(t)])
    assert degeneracy_flags(make_window(tilted, ANCHOR)) == ["planar"]
    assert degeneracy_flags(_rich()) == []
    assert set(SINGULAR_FLAGS) == {"static", "collinear"}


def test_flag_threshold_follows_position_uncertainty():
    n = 30
    rng = np.random.default_rng(1)
    wobble = np.column_stack([np.linspace(-3, 3, n), rng.normal(0, 0.02, n),
                              rng.normal(0, 0.02, n) + 1.5])
    assert degeneracy_flags(make_window(wobble, ANCHOR)) == []
    noisy = make_window(wobble, ANCHOR, P_II=position_cov(0.05 ** 2))
    assert degeneracy_flags(noisy) == ["collinear"]
