"""Biased UWB ranging model and its Jacobians.

    d = beta * (|p_I + C p_T - p_a| + n) + gamma,    n ~ N(0, sigma^2)
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .state import UwbState, skew  # noqa: F401  (re-exported)


class DegenerateGeometryError(ValueError):
    """Tag and anchor coincide, so the range direction is undefined."""


@dataclass(frozen=True)
class RangingMeasurement:
    anchor_id: int
    distance: float
    t: float


@dataclass(frozen=True)
class TagExtrinsics:
    """Tag position in the IMU frame (m)."""

    p_T: np.ndarray = None

    def __post_init__(self):
        p = np.zeros(3) if self.p_T is None else np.asarray(self.p_T, dtype=float)
        if not np.all(np.isfinite(p)):
            raise ValueError("tag offset must be finite")
        object.__setattr__(self, "p_T", p)


def tag_position(pose, ext: TagExtrinsics):
    """World position of the tag for anything with ``rot`` and ``p``."""
    return pose.p + pose.rot.R @ ext.p_T


def _offset(pose, uwb, ext):
    diff = tag_position(pose, ext) - uwb.p_a
    rho = float(np.sqrt(diff @ diff))
    if rho < 1e-9:
        raise DegenerateGeometryError("tag coincides with anchor")
    return diff, rho


def predict_range(pose, uwb, ext: TagExtrinsics):
    _, rho = _offset(pose, uwb, ext)
    return uwb.beta * rho + uwb.gamma


def range_jacobians(pose, uwb, ext: TagExtrinsics):
    """Return ``(H_I, H_U)`` of shapes (15,) and (5,).

    Columns follow the error-state order ``(dtheta, dbg, dv, dba, dp)`` and
    ``(dp_a, dbeta, dgamma)``.
    """
    diff, rho = _offset(pose, uwb, ext)
    H_p = uwb.beta * diff / rho
    H_I = np.zeros(15)
    H_I[0:3] = -H_p @ skew(pose.rot.R @ ext.p_T)
    H_I[12:15] = H_p
    H_U = np.array([-H_p[0], -H_p[1], -H_p[2], rho, 1.0])
    return H_I, H_U


def simulate_range(pose, uwb, ext: TagExtrinsics, noise_std, rng, t=0.0):
    """Draw one measurement; the noise sits inside the ``beta`` scaling."""
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    _, rho = _offset(pose, uwb, ext)
    eta = rng.normal(0.0, noise_std) if noise_std > 0 else 0.0
    return RangingMeasurement(uwb.anchor_id, uwb.beta * (rho + eta) + uwb.gamma, t)


def range_noise_var(range_std, beta=1.0, scaled=True):
    """Filter-side variance of a range residual."""
    return (beta * range_std) ** 2 if scaled else range_std ** 2
