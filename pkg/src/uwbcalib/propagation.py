"""IMU strapdown propagation and the known-landmark camera update."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_triangular
from scipy.stats import chi2

from .state import (BA, BG, GRAVITY, IMU_DIM, POS, TH, VEL, BlockCovariance,
                    CalibState, RobotState, Rotation3, boxplus, quat_from_rotvec, quat_mul,
                    skew, so3_right_jacobian)

G_VEC = np.array([0.0, 0.0, -GRAVITY])
_I3 = np.eye(3)


@lru_cache(maxsize=None)
def chi2_threshold(level, dof):
    """Gate threshold; a level of 1 or more disables gating."""
    if level >= 1.0:
        return float("inf")
    return float(chi2.ppf(level, dof))


@dataclass(frozen=True)
class ImuSample:
    t: float
    gyro: np.ndarray
    accel: np.ndarray


@dataclass(frozen=True)
class ImuNoise:
    """Continuous-time densities: white noise (per sqrt(Hz)) and bias walks."""

    gyro: float = 1e-3
    accel: float = 1e-2
    gyro_bias: float = 1e-5
    accel_bias: float = 1e-4


@dataclass(frozen=True)
class LandmarkObservation:
    landmark_id: int
    uv: np.ndarray
    t: float


@dataclass(frozen=True)
class CameraExtrinsics:
    """``R_CI`` maps IMU-frame vectors to the camera frame; ``p_CI`` is the IMU
    origin expressed in the camera frame."""

    R_CI: np.ndarray
    p_CI: np.ndarray

    @classmethod
    def forward_looking(cls):
        # camera z along body x, camera x along -body y, camera y along -body z
        R = np.array([[0.0, -1.0, 0.0],
                      [0.0, 0.0, -1.0],
                      [1.0, 0.0, 0.0]])
        return cls(R, np.zeros(3))


class NoValidObservationsError(RuntimeError):
    pass


def _mean_step(rot: Rotation3, bg, v, ba, p, sample: ImuSample, dt):
    w = sample.gyro - bg
    f = sample.accel - ba
    rot1 = Rotation3(quat_mul(rot.q, quat_from_rotvec(w * dt)))
    C0 = rot.R
    C1 = rot1.R
    acc = 0.5 * (C0 + C1) @ f + G_VEC
    v1 = v + acc * dt
    p1 = p + v * dt + 0.5 * acc * dt * dt
    return rot1, v1, p1, w, f, C0


def transition(state: RobotState, sample: ImuSample, dt, noise: ImuNoise):
    """Propagated IMU mean, discrete transition ``Phi`` (15x15) and ``Q``.

    The mean uses the exponential map for attitude and a trapezoid on the
    gravity-compensated specific force.  ``Phi`` is the exact first-order
    linearisation of that discrete map.
    """
    rot1, v1, p1, w, f, C0 = _mean_step(state.rot, state.bg, state.v, state.ba,
                                        state.p, sample, dt)
    C1 = rot1.R
    Jr = so3_right_jacobian(w * dt)
    A_tb = -C1 @ Jr * dt                      # dtheta' / dbg
    fw0 = C0 @ f
    fw1 = C1 @ f
    A_vt = -0.5 * dt * (skew(fw0) + skew(fw1))
    A_vb = -0.5 * dt * skew(fw1) @ A_tb
    A_va = -0.5 * dt * (C0 + C1)

    Phi = np.eye(IMU_DIM)
    Phi[TH, BG] = A_tb
    Phi[VEL, TH] = A_vt
    Phi[VEL, BG] = A_vb
    Phi[VEL, BA] = A_va
    Phi[POS, TH] = 0.5 * dt * A_vt
    Phi[POS, BG] = 0.5 * dt * A_vb
    Phi[POS, VEL] = dt * _I3
    Phi[POS, BA] = 0.5 * dt * A_va

    # gyro/accel white noise enters like a bias error for one step
    G_g = Phi[:, BG].copy()
    G_g[BG] -= _I3
    G_a = Phi[:, BA].copy()
    G_a[BA] -= _I3
    Q = (noise.gyro ** 2 / dt) * G_g @ G_g.T + (noise.accel ** 2 / dt) * G_a @ G_a.T
    Q[BG, BG] += noise.gyro_bias ** 2 * dt * _I3
    Q[BA, BA] += noise.accel_bias ** 2 * dt * _I3

    new = RobotState(rot1, state.bg.copy(), v1, state.ba.copy(),
                     p1, state.t + dt, state.clones)
    return new, Phi, Q


def propagate_mean(state: RobotState, sample: ImuSample, dt):
    rot1, v1, p1, *_ = _mean_step(state.rot, state.bg, state.v, state.ba, state.p,
                                  sample, dt)
    return RobotState(rot1, state.bg.copy(), v1,
                      state.ba.copy(), p1, state.t + dt, state.clones)


def propagate_covariance(cov: BlockCovariance, Phi, Q):
    """In place: ``P_II <- Phi P_II Phi^T + Q``, ``P_I* <- Phi P_I*``.

    Clone and UWB blocks are not touched.
    """
    P = cov.P
    I = slice(0, IMU_DIM)
    P_II = Phi @ P[I, I] @ Phi.T + Q
    P[I, I] = 0.5 * (P_II + P_II.T)
    if cov.dim > IMU_DIM:
        R = slice(IMU_DIM, cov.dim)
        P[I, R] = Phi @ P[I, R]
        P[R, I] = P[I, R].T
    return cov


def propagate(state: RobotState, cov: BlockCovariance, sample: ImuSample, dt,
              noise: ImuNoise):
    """One IMU step.  The covariance is updated in place and returned."""
    if not 0 < dt <= 0.1:
        raise ValueError(f"dt must be in (0, 0.1], got {dt}")
    if not (np.all(np.isfinite(sample.gyro)) and np.all(np.isfinite(sample.accel))):
        raise ValueError("non-finite IMU sample")
    new, Phi, Q = transition(state, sample, dt, noise)
    return new, propagate_covariance(cov, Phi, Q)


# ---------------------------------------------------------------------------
# camera


def camera_point(p_f, rot: Rotation3, p, cam: CameraExtrinsics):
    return cam.R_CI @ (rot.R.T @ (p_f - p)) + cam.p_CI


def project(p_f, rot: Rotation3, p, cam: CameraExtrinsics):
    """Normalized image coordinates of a world point seen from a pose."""
    pc = camera_point(p_f, rot, p, cam)
    if pc[2] <= 1e-6:
        raise ValueError(f"landmark behind camera (depth {pc[2]:.3g})")
    return pc[:2] / pc[2]


def project_jacobian(p_f, rot: Rotation3, p, cam: CameraExtrinsics):
    """Jacobian (2x6) of :func:`project` w.r.t. the pose error ``(dtheta, dp)``."""
    pc = camera_point(p_f, rot, p, cam)
    x, y, z = pc
    if z <= 1e-6:
        raise ValueError("landmark behind camera")
    J_proj = np.array([[1.0 / z, 0.0, -x / (z * z)],
                       [0.0, 1.0 / z, -y / (z * z)]])
    RcRt = cam.R_CI @ rot.R.T
    H = np.empty((2, 6))
    H[:, :3] = J_proj @ RcRt @ skew(p_f - p)
    H[:, 3:] = -J_proj @ RcRt
    return H


def _batch_projection(p_f, rot: Rotation3, p, cam: CameraExtrinsics):
    """Predictions (n,2), Jacobians (n,2,6) and a validity mask for many
    landmarks seen from one pose."""
    RcRt = cam.R_CI @ rot.R.T
    d = p_f - p
    pc = d @ RcRt.T + cam.p_CI
    z = pc[:, 2]
    ok = z > 1e-6
    zs = np.where(ok, z, 1.0)
    uv = pc[:, :2] / zs[:, None]
    n = len(z)
    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = J[:, 1, 1] = 1.0 / zs
    J[:, 0, 2] = -pc[:, 0] / zs ** 2
    J[:, 1, 2] = -pc[:, 1] / zs ** 2
    JR = J @ RcRt
    # JR @ skew(d) row-wise: a^T skew(d) = cross(a, d)^T
    H = np.empty((n, 2, 6))
    H[:, :, :3] = np.cross(JR, d[:, None, :])
    H[:, :, 3:] = -JR
    return uv, H, ok


def vision_update(state: CalibState, cov: BlockCovariance, observations, landmark_map,
                  pixel_std, cam: CameraExtrinsics, gate=0.999):
    """Standard EKF update with stacked reprojection residuals.

    Each observation is gated separately with a chi-square test (2 dof).
    Returns the updated state and the covariance (updated in place).
    """
    robot = state.robot
    thresh = chi2_threshold(gate, 2)
    var = pixel_std ** 2
    P = cov.P
    groups = {}
    for obs in observations:
        groups.setdefault(robot.clone_index(obs.t), []).append(obs)
    rows_r, rows_H, cols = [], [], []
    for ci, obs_list in groups.items():
        c = robot.clones[ci]
        sl = cov.clone_slice(ci)
        p_f = landmark_map[[o.landmark_id for o in obs_list]]
        z = np.array([o.uv for o in obs_list])
        z_hat, H, ok = _batch_projection(p_f, c.rot, c.p, cam)
        r = z - z_hat
        S = H @ P[sl, sl] @ H.transpose(0, 2, 1)
        S[:, 0, 0] += var
        S[:, 1, 1] += var
        det = S[:, 0, 0] * S[:, 1, 1] - S[:, 0, 1] * S[:, 1, 0]
        nis = (S[:, 1, 1] * r[:, 0] ** 2 - (S[:, 0, 1] + S[:, 1, 0]) * r[:, 0] * r[:, 1]
               + S[:, 0, 0] * r[:, 1] ** 2) / det
        keep = ok & (nis <= thresh)
        if np.any(keep):
            rows_r.append(r[keep].ravel())
            rows_H.append(H[keep].reshape(-1, 6))
            cols.append(sl.start)
    if not rows_r:
        raise NoValidObservationsError("no observation passed the gate")

    m = sum(len(x) for x in rows_r)
    idx = np.concatenate([np.arange(s, s + 6) for s in cols])
    H = np.zeros((m, idx.size))
    row = 0
    for g, Hg in enumerate(rows_H):
        H[row:row + len(Hg), 6 * g:6 * g + 6] = Hg
        row += len(Hg)
    r = np.concatenate(rows_r)

    PHt = P[:, idx] @ H.T
    S = H @ PHt[idx, :] + var * np.eye(m)
    S = 0.5 * (S + S.T)
    L = np.linalg.cholesky(S)
    # K = PHt S^-1 via the Cholesky factor
    W = solve_triangular(L, PHt.T, lower=True).T          # PHt L^-T
    K = solve_triangular(L, W.T, lower=True, trans="T").T
    dx = K @ r
    P -= W @ W.T              # W W^T is formed symmetric, so P stays symmetric
    return boxplus(state, dx), cov
