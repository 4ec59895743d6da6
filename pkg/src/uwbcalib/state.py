"""Rotation algebra, filter state containers and the partitioned covariance.

Conventions used throughout the package:

* Quaternions are Hamilton, stored ``[w, x, y, z]``.
* ``Rotation3`` holds the body-to-global rotation ``C`` (so a body vector
  ``b`` maps to ``C @ b`` in the global frame).
* Attitude errors are left-multiplicative in the global frame,
  ``C_true = Exp(dtheta) @ C_hat``.  With this choice the derivative of
  ``C @ p`` w.r.t. ``dtheta`` is ``-skew(C @ p)``, which is the form the range
  Jacobian uses.
* Error-state ordering: IMU block ``(dtheta, dbg, dv, dba, dp)`` (15), then one
  ``(dtheta, dp)`` pair per pose clone (6 each), then one
  ``(dp_a, dbeta, dgamma)`` group per anchor (5 each).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GRAVITY = 9.81
IMU_DIM = 15
CLONE_DIM = 6
ANCHOR_DIM = 5

# slices of the IMU error block
TH = slice(0, 3)
BG = slice(3, 6)
VEL = slice(6, 9)
BA = slice(9, 12)
POS = slice(12, 15)


def skew(v):
    """Cross-product matrix: ``skew(v) @ w == np.cross(v, w)``."""
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


def so3_exp(phi):
    """Rodrigues formula."""
    phi = np.asarray(phi, dtype=float)
    theta2 = phi @ phi
    K = skew(phi)
    if theta2 < 1e-16:
        return np.eye(3) + K + 0.5 * K @ K
    theta = np.sqrt(theta2)
    return (np.eye(3) + (np.sin(theta) / theta) * K
            + ((1.0 - np.cos(theta)) / theta2) * K @ K)


def so3_log(R):
    """Inverse of :func:`so3_exp`, valid for rotation angles below pi."""
    cos_t = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    theta = np.arccos(cos_t)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-6:
        return 0.5 * w
    if np.pi - theta < 1e-6:
        # near pi: axis from the symmetric part
        S = 0.5 * (R + np.eye(3))
        k = int(np.argmax(np.diag(S)))
        axis = S[:, k] / np.sqrt(max(S[k, k], 1e-300))
        if axis @ w < 0:
            axis = -axis
        return theta * axis / np.linalg.norm(axis)
    return theta / (2.0 * np.sin(theta)) * w


def so3_right_jacobian(phi):
    phi = np.asarray(phi, dtype=float)
    theta2 = phi @ phi
    K = skew(phi)
    if theta2 < 1e-12:
        return np.eye(3) - 0.5 * K + K @ K / 6.0
    theta = np.sqrt(theta2)
    return (np.eye(3) - ((1.0 - np.cos(theta)) / theta2) * K
            + ((theta - np.sin(theta)) / (theta2 * theta)) * K @ K)


def quat_mul(a, b):
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_from_rotvec(phi):
    phi = np.asarray(phi, dtype=float)
    theta = np.sqrt(phi @ phi)
    if theta < 1e-12:
        q = np.array([1.0, 0.5 * phi[0], 0.5 * phi[1], 0.5 * phi[2]])
        return q / np.linalg.norm(q)
    s = np.sin(0.5 * theta) / theta
    return np.array([np.cos(0.5 * theta), s * phi[0], s * phi[1], s * phi[2]])


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_matrix(R):
    # Shepperd's method
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s,
             (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s,
             (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s,
             (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
             (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


@dataclass(frozen=True, eq=False)
class Rotation3:
    """Unit quaternion for the body-to-global attitude.

    The rotation matrix is cached at construction; instances are immutable.
    """

    q: np.ndarray
    R: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        q = q / np.linalg.norm(q)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "R", quat_to_matrix(q))

    @classmethod
    def identity(cls):
        return cls(np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_rotvec(cls, phi):
        return cls(quat_from_rotvec(phi))

    @classmethod
    def from_matrix(cls, R):
        return cls(quat_from_matrix(R))

    def matrix(self):
        return self.R

    def boxplus(self, dtheta):
        """Left (global-frame) perturbation ``Exp(dtheta) * self``."""
        return Rotation3(quat_mul(quat_from_rotvec(dtheta), self.q))

    def boxminus(self, other):
        """Return ``dtheta`` such that ``other.boxplus(dtheta) == self``."""
        return so3_log(self.R @ other.R.T)

    def compose(self, other):
        return Rotation3(quat_mul(self.q, other.q))

    def inverse(self):
        w, x, y, z = self.q
        return Rotation3(np.array([w, -x, -y, -z]))

    def angle_to(self, other):
        """Geodesic distance in radians."""
        return float(np.linalg.norm(so3_log(self.R.T @ other.R)))


@dataclass(frozen=True)
class PoseClone:
    t: float
    rot: Rotation3
    p: np.ndarray
    # "vision" clones form the sliding window; "range" clones hold the
    # poses of an anchor-initialization window until it is consumed
    tag: str = "vision"


@dataclass
class RobotState:
    """IMU navigation state plus the pose clones."""

    rot: Rotation3
    bg: np.ndarray
    v: np.ndarray
    ba: np.ndarray
    p: np.ndarray
    t: float = 0.0
    clones: list = field(default_factory=list)

    @property
    def error_dim(self):
        return IMU_DIM + CLONE_DIM * len(self.clones)

    def copy(self):
        # clones are immutable, so the list can share them
        return RobotState(self.rot, self.bg.copy(), self.v.copy(), self.ba.copy(),
                          self.p.copy(), self.t, list(self.clones))

    def clone_index(self, t, tol=1e-9):
        for i, c in enumerate(self.clones):
            if abs(c.t - t) <= tol:
                return i
        raise KeyError(f"no clone at t={t}")


@dataclass
class UwbState:
    """Anchor position and range-bias pair."""

    anchor_id: int
    p_a: np.ndarray
    beta: float = 1.0
    gamma: float = 0.0

    def __post_init__(self):
        self.p_a = np.asarray(self.p_a, dtype=float)
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")

    def vector(self):
        return np.array([*self.p_a, self.beta, self.gamma])

    def copy(self):
        return UwbState(self.anchor_id, self.p_a.copy(), self.beta, self.gamma)


@dataclass
class CalibState:
    """Robot state together with every initialized anchor."""

    robot: RobotState
    anchors: list = field(default_factory=list)

    @property
    def error_dim(self):
        return self.robot.error_dim + ANCHOR_DIM * len(self.anchors)

    def copy(self):
        return CalibState(self.robot.copy(), [a.copy() for a in self.anchors])

    def anchor_index(self, anchor_id):
        for i, a in enumerate(self.anchors):
            if a.anchor_id == anchor_id:
                return i
        raise KeyError(f"anchor {anchor_id} not initialized")


class BlockCovariance:
    """Joint error-state covariance with IMU / clone / UWB partitions.

    ``P`` is a plain ndarray that operations update in place.
    """

    def __init__(self, P, n_clones=0, n_anchors=0):
        P = np.asarray(P, dtype=float)
        dim = IMU_DIM + CLONE_DIM * n_clones + ANCHOR_DIM * n_anchors
        if P.shape != (dim, dim):
            raise ValueError(f"covariance shape {P.shape} does not match "
                             f"{n_clones} clones and {n_anchors} anchors")
        self.P = P
        self.n_clones = n_clones
        self.n_anchors = n_anchors

    @property
    def dim(self):
        return self.P.shape[0]

    @property
    def n_active(self):
        """Dimension of the robot part (IMU plus clones)."""
        return IMU_DIM + CLONE_DIM * self.n_clones

    # index helpers
    @property
    def idx_I(self):
        return slice(0, IMU_DIM)

    @property
    def idx_C(self):
        return slice(IMU_DIM, self.n_active)

    @property
    def idx_U(self):
        return slice(self.n_active, self.dim)

    def clone_slice(self, i):
        if not 0 <= i < self.n_clones:
            raise IndexError(f"clone index {i} out of range")
        s = IMU_DIM + CLONE_DIM * i
        return slice(s, s + CLONE_DIM)

    def anchor_slice(self, j):
        if not 0 <= j < self.n_anchors:
            raise IndexError(f"anchor index {j} out of range")
        s = self.n_active + ANCHOR_DIM * j
        return slice(s, s + ANCHOR_DIM)

    # named blocks (views)
    @property
    def P_II(self):
        return self.P[self.idx_I, self.idx_I]

    @property
    def P_IC(self):
        return self.P[self.idx_I, self.idx_C]

    @property
    def P_IU(self):
        return self.P[self.idx_I, self.idx_U]

    @property
    def P_CC(self):
        return self.P[self.idx_C, self.idx_C]

    @property
    def P_CU(self):
        return self.P[self.idx_C, self.idx_U]

    @property
    def P_UU(self):
        return self.P[self.idx_U, self.idx_U]

    def blocks(self):
        """3x3 nested list of blocks; ``np.block(cov.blocks())`` rebuilds ``P``."""
        idx = (self.idx_I, self.idx_C, self.idx_U)
        return [[self.P[a, b] for b in idx] for a in idx]

    def copy(self):
        return BlockCovariance(self.P.copy(), self.n_clones, self.n_anchors)

    def symmetrize(self, sl=None):
        if sl is None:
            self.P[:] = 0.5 * (self.P + self.P.T)
        else:
            self.P[sl, :] = 0.5 * (self.P[sl, :] + self.P[:, sl].T)
            self.P[:, sl] = self.P[sl, :].T
        return self


def boxplus(state: CalibState, delta) -> CalibState:
    """Apply an error-state increment; returns a new state."""
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (state.error_dim,):
        raise ValueError(f"delta has shape {delta.shape}, "
                         f"expected ({state.error_dim},)")
    r = state.robot
    robot = RobotState(
        rot=r.rot.boxplus(delta[TH]),
        bg=r.bg + delta[BG],
        v=r.v + delta[VEL],
        ba=r.ba + delta[BA],
        p=r.p + delta[POS],
        t=r.t,
        clones=[],
    )
    off = IMU_DIM
    for c in r.clones:
        d = delta[off:off + CLONE_DIM]
        robot.clones.append(PoseClone(c.t, c.rot.boxplus(d[:3]), c.p + d[3:], c.tag))
        off += CLONE_DIM
    anchors = []
    for a in state.anchors:
        d = delta[off:off + ANCHOR_DIM]
        anchors.append(UwbState(a.anchor_id, a.p_a + d[:3], a.beta + d[3], a.gamma + d[4]))
        off += ANCHOR_DIM
    return CalibState(robot, anchors)


def boxminus(a: CalibState, b: CalibState):
    """Error vector ``delta`` with ``boxplus(b, delta) == a``."""
    ra, rb = a.robot, b.robot
    if len(ra.clones) != len(rb.clones) or len(a.anchors) != len(b.anchors):
        raise ValueError("states have different layouts")
    parts = [ra.rot.boxminus(rb.rot), ra.bg - rb.bg, ra.v - rb.v, ra.ba - rb.ba, ra.p - rb.p]
    for ca, cb in zip(ra.clones, rb.clones):
        parts += [ca.rot.boxminus(cb.rot), ca.p - cb.p]
    for ua, ub in zip(a.anchors, b.anchors):
        parts += [ua.p_a - ub.p_a, [ua.beta - ub.beta, ua.gamma - ub.gamma]]
    return np.concatenate([np.ravel(x) for x in parts])


def clone_augment(state: RobotState, cov: BlockCovariance, max_clones=11, tag="vision"):
    """Clone the current IMU pose.

    The new 6x6 block and its cross terms are exact copies of the current
    ``(dtheta, dp)`` rows, so the clone starts perfectly correlated with the
    IMU pose.  ``max_clones`` bounds the number of clones carrying ``tag``.
    Returns a new state and a new covariance.
    """
    if sum(c.tag == tag for c in state.clones) >= max_clones:
        raise ValueError(f"clone window for '{tag}' is full ({max_clones})")
    if state.clones and state.t <= state.clones[-1].t:
        raise ValueError("clone timestamps must be strictly increasing")
    n = cov.n_active
    D = cov.dim
    rows = np.r_[0:3, 12:15]
    P = cov.P
    out = np.empty((D + CLONE_DIM, D + CLONE_DIM))
    keep = np.r_[0:n, n + CLONE_DIM:D + CLONE_DIM]
    out[np.ix_(keep, keep)] = P
    new = slice(n, n + CLONE_DIM)
    out[new, keep] = P[rows, :]
    out[keep, new] = P[:, rows]
    out[new, new] = P[np.ix_(rows, rows)]
    new_state = state.copy()
    new_state.clones.append(PoseClone(state.t, state.rot, state.p.copy(), tag))
    return new_state, BlockCovariance(out, cov.n_clones + 1, cov.n_anchors)


def clone_marginalize(state: RobotState, cov: BlockCovariance, index):
    """Drop clone ``index`` and its rows/columns."""
    if not -len(state.clones) <= index < len(state.clones):
        raise IndexError(f"clone index {index} out of range")
    index %= len(state.clones)
    sl = cov.clone_slice(index)
    keep = np.r_[0:sl.start, sl.stop:cov.dim]
    new_state = state.copy()
    del new_state.clones[index]
    P = cov.P[np.ix_(keep, keep)]
    return new_state, BlockCovariance(P, cov.n_clones - 1, cov.n_anchors)


def min_eig_ok(P, rel=1e-9):
    """True when ``P`` is symmetric and its spectrum is PSD to ``rel`` tolerance."""
    if not np.allclose(P, P.T, atol=1e-9, rtol=0):
        return False
    w = np.linalg.eigvalsh(0.5 * (P + P.T))
    return bool(w[0] >= -rel * max(abs(w[-1]), 1e-300))
