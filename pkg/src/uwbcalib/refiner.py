"""Tightly-coupled range updates: standard EKF and Schmidt (consider) update.

The Schmidt update keeps the gain of the active robot state (IMU + clones) at
zero.  With ``K = P H^T / S`` split into ``K_r`` (suppressed) and ``K_U``:

    x_U  <- x_U + K_U r
    P_UU <- P_UU - K_U S K_U^T
    P_rU <- P_rU - K_r S K_U^T = P_rU - K_r (H_r P_rU + H_U P_UU)

and ``P_rr`` is left untouched, so the robot mean and its covariance blocks
are bitwise identical to a run without range updates.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .propagation import chi2_threshold
from .state import ANCHOR_DIM, IMU_DIM, BlockCovariance, CalibState, UwbState, boxplus
from .uwb import RangingMeasurement, TagExtrinsics, predict_range, range_jacobians


class NumericalFailure(RuntimeError):
    pass


@dataclass
class UpdateReport:
    anchor_id: int
    residual: float
    S: float
    gated: bool
    mode: str
    nis: float = float("nan")
    delta_norms: dict = field(default_factory=dict)

    @property
    def applied(self):
        return not self.gated


@dataclass
class FejRegistry:
    """First estimates, written once per variable."""

    anchors: dict = field(default_factory=dict)
    clones: dict = field(default_factory=dict)

    def seed_anchor(self, uwb: UwbState):
        self.anchors.setdefault(uwb.anchor_id, uwb.copy())

    def seed_clone(self, t, rot, p):
        self.clones.setdefault(t, (rot, np.array(p, dtype=float)))

    def anchor(self, anchor_id):
        try:
            return self.anchors[anchor_id]
        except KeyError:
            raise KeyError(f"anchor {anchor_id} has no first estimate") from None


def fej_linearize(anchor_id, state: CalibState, registry: FejRegistry,
                  ext: TagExtrinsics = TagExtrinsics()):
    """Range Jacobians with the anchor taken at its first estimate."""
    first = registry.anchor(anchor_id)
    return range_jacobians(state.robot, first, ext)


def _prepare(state, cov, meas, ext, range_std, registry, scaled):
    j = state.anchor_index(meas.anchor_id)
    uwb = state.anchors[j]
    if registry is not None:
        H_I, H_U = fej_linearize(meas.anchor_id, state, registry, ext)
    else:
        H_I, H_U = range_jacobians(state.robot, uwb, ext)
    r = meas.distance - predict_range(state.robot, uwb, ext)
    sl = cov.anchor_slice(j)
    cols = np.r_[0:IMU_DIM, sl.start:sl.stop]
    h = np.concatenate([H_I, H_U])
    PHt = cov.P[:, cols] @ h
    R = (uwb.beta * range_std) ** 2 if scaled else range_std ** 2
    S = float(h @ PHt[cols] + R)
    if not S > 0 or not np.isfinite(S):
        raise NumericalFailure(f"innovation variance {S}")
    return r, S, PHt


def _gate(r, S, gate):
    nis = r * r / S
    return nis, nis > chi2_threshold(gate, 1)


def ekf_uwb_update(state: CalibState, cov: BlockCovariance, meas: RangingMeasurement,
                   ext: TagExtrinsics = TagExtrinsics(), range_std=0.1,
                   registry: FejRegistry | None = None, gate=0.999, scaled=True):
    """Joint update of robot and anchors.  ``cov`` is updated in place."""
    r, S, PHt = _prepare(state, cov, meas, ext, range_std, registry, scaled)
    nis, rejected = _gate(r, S, gate)
    report = UpdateReport(meas.anchor_id, r, S, rejected, "EKF", nis)
    if rejected:
        return state, cov, report
    K = PHt / S
    dx = K * r
    n = cov.n_active
    report.delta_norms = {
        "P_II": float(np.linalg.norm(np.outer(PHt[:IMU_DIM], PHt[:IMU_DIM]) / S)),
        "P_UU": float(np.linalg.norm(np.outer(PHt[n:], PHt[n:]) / S)),
    }
    cov.P -= np.outer(PHt, PHt) / S     # the outer product is exactly symmetric
    try:
        return boxplus(state, dx), cov, report
    except ValueError as exc:           # scale factor driven non-positive
        raise NumericalFailure(str(exc)) from None


def skf_uwb_update(state: CalibState, cov: BlockCovariance, meas: RangingMeasurement,
                   ext: TagExtrinsics = TagExtrinsics(), range_std=0.1,
                   registry: FejRegistry | None = None, gate=0.999, scaled=True):
    """Schmidt update: only the UWB block moves.  ``cov`` is updated in place."""
    r, S, PHt = _prepare(state, cov, meas, ext, range_std, registry, scaled)
    nis, rejected = _gate(r, S, gate)
    report = UpdateReport(meas.anchor_id, r, S, rejected, "SKF", nis)
    if rejected:
        return state, cov, report
    n = cov.n_active
    P = cov.P
    g_r = PHt[:n]
    g_u = PHt[n:]
    dP_rU = np.outer(g_r, g_u) / S        # K_r S K_U^T
    dP_UU = np.outer(g_u, g_u) / S        # K_U S K_U^T
    P[:n, n:] -= dP_rU
    P[n:, :n] = P[:n, n:].T
    P[n:, n:] -= dP_UU
    P[n:, n:] = 0.5 * (P[n:, n:] + P[n:, n:].T)
    report.delta_norms = {"P_rU": float(np.linalg.norm(dP_rU)),
                          "P_UU": float(np.linalg.norm(dP_UU))}
    dx_u = (g_u / S) * r
    anchors = []
    for k, a in enumerate(state.anchors):
        d = dx_u[ANCHOR_DIM * k:ANCHOR_DIM * (k + 1)]
        try:
            anchors.append(UwbState(a.anchor_id, a.p_a + d[:3], a.beta + d[3], a.gamma + d[4]))
        except ValueError as exc:
            raise NumericalFailure(str(exc)) from None
    return CalibState(state.robot, anchors), cov, report
