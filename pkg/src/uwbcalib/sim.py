"""Deterministic scenario generation.

Truth comes from a parametric trajectory.  IMU samples are the ideal
interval increments between consecutive grid poses (rotation increment as a
rate, specific force chosen so the trapezoid velocity update is exact), then
bias and white noise are added.  With all noise off, integrating the samples
with :func:`uwbcalib.propagation.propagate` reproduces the truth up to the
trapezoid position error.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial.transform import Rotation as SciRotation

from .config import ScenarioConfig
from .propagation import G_VEC, CameraExtrinsics, ImuSample, LandmarkObservation
from .state import Rotation3
from .uwb import RangingMeasurement, TagExtrinsics, UwbState


@dataclass
class SimData:
    t: np.ndarray
    R: np.ndarray                 # body-to-global, (K+1, 3, 3)
    p: np.ndarray
    v: np.ndarray
    bg: np.ndarray                # true biases at each grid time
    ba: np.ndarray
    imu: list
    frames: dict                  # grid index -> [LandmarkObservation]
    ranges: dict                  # grid index -> [RangingMeasurement]
    landmarks: np.ndarray
    anchors: list
    ext: TagExtrinsics
    cam: CameraExtrinsics
    dt: float
    init_bias: tuple = field(default=(None, None))

    def pose(self, k):
        """Truth pose at grid index ``k`` as an object with ``rot``/``p``."""
        return _Pose(Rotation3.from_matrix(self.R[k]), self.p[k])


@dataclass
class _Pose:
    rot: Rotation3
    p: np.ndarray


def trajectory_eval(traj, t):
    """Positions and velocities, each (n, 3), at times ``t``."""
    t = np.asarray(t, dtype=float)
    c = np.asarray(traj.center, dtype=float)
    A = np.asarray(traj.amplitude, dtype=float)
    T = np.asarray(traj.period, dtype=float)
    ph = np.asarray(traj.phase, dtype=float)
    if traj.kind == "lissajous":
        w = 2 * np.pi / T
        arg = np.outer(t, w) + ph
        return c + A * np.sin(arg), A * w * np.cos(arg)
    if traj.kind == "circle":
        w = 2 * np.pi / T[0]
        wz = 2 * np.pi / T[2]
        a = w * t + ph[0]
        az = wz * t + ph[2]
        p = np.stack([c[0] + A[0] * np.cos(a), c[1] + A[1] * np.sin(a),
                      c[2] + A[2] * np.sin(az)], axis=1)
        v = np.stack([-A[0] * w * np.sin(a), A[1] * w * np.cos(a),
                      A[2] * wz * np.cos(az)], axis=1)
        return p, v
    if traj.kind == "waypoint-spline":
        wp = np.asarray(traj.waypoints, dtype=float)
        if wp.ndim != 2 or wp.shape[0] < 2 or wp.shape[1] != 3:
            raise ValueError("waypoint-spline needs at least two [x, y, z] waypoints")
        loop = np.vstack([wp, wp[:1]])
        knots = np.linspace(0.0, T[0], len(loop))
        cs = CubicSpline(knots, loop, bc_type="periodic")
        tm = np.mod(t, T[0])
        return cs(tm), cs(tm, 1)
    raise ValueError(f"unknown trajectory kind {traj.kind!r}")


def attitude_eval(traj, t):
    t = np.asarray(t, dtype=float)
    yaw = traj.yaw_rate * t + traj.yaw_amplitude * np.sin(2 * np.pi * t / traj.yaw_period)
    pitch = traj.tilt_amplitude * np.sin(2 * np.pi * t / traj.tilt_period)
    roll = traj.tilt_amplitude * np.cos(2 * np.pi * t / (1.37 * traj.tilt_period))
    return SciRotation.from_euler("ZYX", np.stack([yaw, pitch, roll], axis=1)).as_matrix()


def _validate(sc: ScenarioConfig):
    if not (sc.duration > 0 and sc.imu_rate > 0 and sc.camera_rate >= 0 and sc.uwb_rate > 0):
        raise ValueError("duration and rates must be positive")
    if 1.0 / sc.imu_rate > 0.1:
        raise ValueError("imu_rate must be at least 10 Hz")
    if not sc.anchors:
        raise ValueError("scenario needs at least one anchor")


def landmark_map(sc: ScenarioConfig, rng):
    lm = sc.landmarks
    ang = rng.uniform(0, 2 * np.pi, lm.count)
    z = rng.uniform(lm.z_min, lm.z_max, lm.count)
    c = np.asarray(sc.trajectory.center, dtype=float)
    return np.stack([c[0] + lm.radius * np.cos(ang), c[1] + lm.radius * np.sin(ang), z], axis=1)


def generate(sc: ScenarioConfig) -> SimData:
    """Truth, IMU, camera and range streams; fully determined by ``sc.seed``."""
    _validate(sc)
    ss = np.random.SeedSequence([int(sc.seed), 0x5EED])
    rng_imu, rng_cam, rng_rng, rng_map = (np.random.default_rng(s) for s in ss.spawn(4))

    dt = 1.0 / sc.imu_rate
    K = int(round(sc.duration * sc.imu_rate))
    t = np.arange(K + 1) * dt
    p, v = trajectory_eval(sc.trajectory, t)
    R = attitude_eval(sc.trajectory, t)

    # ideal increments
    dR = np.einsum("kji,kjl->kil", R[:-1], R[1:])
    omega = SciRotation.from_matrix(dR).as_rotvec() / dt
    Cbar = 0.5 * (R[:-1] + R[1:])
    acc_w = (v[1:] - v[:-1]) / dt - G_VEC
    f = np.linalg.solve(Cbar, acc_w[:, :, None])[:, :, 0]

    n = sc.noise
    bg = np.empty((K + 1, 3))
    ba = np.empty((K + 1, 3))
    bg[0] = rng_imu.normal(0, n.init_gyro_bias, 3)
    ba[0] = rng_imu.normal(0, n.init_accel_bias, 3)
    bg[1:] = bg[0] + np.cumsum(rng_imu.normal(0, n.gyro_bias * np.sqrt(dt), (K, 3)), axis=0)
    ba[1:] = ba[0] + np.cumsum(rng_imu.normal(0, n.accel_bias * np.sqrt(dt), (K, 3)), axis=0)
    gyro = omega + bg[:-1] + rng_imu.normal(0, n.gyro / np.sqrt(dt), (K, 3))
    accel = f + ba[:-1] + rng_imu.normal(0, n.accel / np.sqrt(dt), (K, 3))
    imu = [ImuSample(float(t[k]), gyro[k], accel[k]) for k in range(K)]

    cam = CameraExtrinsics.forward_looking()
    lmap = landmark_map(sc, rng_map)
    frames = {}
    if sc.camera_rate > 0:
        step = max(1, int(round(sc.imu_rate / sc.camera_rate)))
        for k in range(0, K, step):
            frames[k] = _observe(lmap, R[k], p[k], cam, sc, rng_cam, float(t[k]))

    ext = TagExtrinsics(np.asarray(sc.tag_offset, dtype=float))
    anchors = [UwbState(i, np.asarray(a.position, dtype=float), a.beta, a.gamma)
               for i, a in enumerate(sc.anchors)]
    ranges = {}
    ustep = sc.imu_rate / sc.uwb_rate
    j = 0
    while True:
        k = int(round((j + 0.5) * ustep))
        if k >= K:
            break
        while k in frames:
            k += 1
        tag = p[k] + R[k] @ ext.p_T
        meas = []
        for a in anchors:
            rho = float(np.linalg.norm(tag - a.p_a))
            eta = rng_rng.normal(0.0, n.range_std) if n.range_std > 0 else 0.0
            meas.append(RangingMeasurement(a.anchor_id, a.beta * (rho + eta) + a.gamma, float(t[k])))
        ranges[k] = meas
        j += 1

    return SimData(t, R, p, v, bg, ba, imu, frames, ranges, lmap, anchors, ext, cam, dt,
                   (bg[0].copy(), ba[0].copy()))


def localization_errors(n, sigma_r, model, rng):
    """Position errors ``(n, 3)`` and their per-axis variances ``(n,)`` for a
    window of ``n`` pose estimates.

    ``"lognormal"``: independent errors, entry ``k`` with std
    ``sigma_r * exp(xi_k)``, ``xi_k ~ N(0, 1)``, so the quality of the pose
    estimates varies along the window.  ``"random-walk"``: cumulative errors
    with per-step std ``sigma_r``; the variance reported is the marginal
    ``(k + 1) sigma_r^2``.
    """
    if sigma_r <= 0:
        return np.zeros((n, 3)), np.zeros(n)
    if model == "lognormal":
        std = sigma_r * np.exp(rng.normal(0.0, 1.0, n))
        return std[:, None] * rng.normal(0.0, 1.0, (n, 3)), std ** 2
    if model == "random-walk":
        return (np.cumsum(rng.normal(0.0, sigma_r, (n, 3)), axis=0),
                sigma_r ** 2 * np.arange(1, n + 1))
    raise ValueError(f"unknown localization error model {model!r}")


def _observe(lmap, R, p, cam, sc, rng, t):
    lm = sc.landmarks
    pc = (cam.R_CI @ (R.T @ (lmap - p).T)).T + cam.p_CI
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = pc[:, :2] / z[:, None]
    ok = (z > lm.min_depth) & np.all(np.abs(uv) < lm.fov_tan, axis=1)
    ids = np.flatnonzero(ok)
    if ids.size > lm.max_per_frame:
        ids = np.sort(rng.choice(ids, lm.max_per_frame, replace=False))
    if sc.noise.pixel > 0:
        noise = rng.normal(0.0, sc.noise.pixel, (ids.size, 2))
    else:
        noise = np.zeros((ids.size, 2))
    return [LandmarkObservation(int(i), uv[i] + e, t) for i, e in zip(ids, noise)]
