"""Anchor initialization from a window of robot poses and ranges.

Two estimators over ``(p_a, gamma)`` with ``beta`` held at 1:

``ls_initialize``
    plain Gauss-Newton on the squared range residuals, treating the robot
    poses as exact.

``robust_initialize``
    adds the expected contribution of pose uncertainty,
    ``trace(H_I P_II H_I^T)``, to every squared residual and (optionally)
    weights each term by ``1 / (Q_d + H_I P_II H_I^T)``.  ``H_I`` depends on
    the anchor, so both the penalty and the weights are re-evaluated at every
    iterate.

``initialize_covariance`` then linearizes the stacked range model at the
estimate, splits it with a QR factorization into a part that constrains the
anchor and a part that does not, and appends the anchor block to the joint
covariance.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .state import ANCHOR_DIM, BlockCovariance, RobotState, skew
from .uwb import RangingMeasurement, TagExtrinsics, UwbState, range_jacobians


class InsufficientMeasurementsError(ValueError):
    pass


class SingularGeometryError(ValueError):
    pass


@dataclass
class InitEntry:
    """One range together with the robot estimate it was taken at."""

    robot: RobotState
    P_II: np.ndarray
    meas: RangingMeasurement
    # timestamp of the pose clone holding this entry's pose, when the
    # filter still carries it
    clone_t: float | None = None


@dataclass
class InitWindow:
    anchor_id: int
    entries: list = field(default_factory=list)
    min_size: int = 20

    def __len__(self):
        return len(self.entries)

    def validate(self):
        if len(self.entries) < self.min_size:
            raise InsufficientMeasurementsError(
                f"window has {len(self.entries)} entries, need {self.min_size}")
        ts = [e.meas.t for e in self.entries]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("window timestamps must be increasing")


@dataclass
class InitResult:
    anchor_id: int
    p_a: np.ndarray
    gamma: float
    beta: float = 1.0
    status: str = "converged"      # converged | max-iterations | singular
    cost: float = float("nan")
    iterations: int = 0
    cost_history: list = field(default_factory=list)

    def as_uwb(self):
        return UwbState(self.anchor_id, np.array(self.p_a, dtype=float), self.beta, self.gamma)


@dataclass(frozen=True)
class SolverOptions:
    range_std: float = 0.1
    max_iter: int = 50
    step_tol: float = 1e-8
    max_halvings: int = 10
    cond_limit: float = 1e12
    whiten: bool = True
    guess: str = "linear"        # linear | centroid


class _Geometry:
    """Per-window arrays shared by both estimators."""

    def __init__(self, window: InitWindow, ext: TagExtrinsics):
        e = window.entries
        self.tags = np.array([x.robot.p + x.robot.rot.R @ ext.p_T for x in e])
        self.d = np.array([x.meas.distance for x in e])
        # pose uncertainty mapped to the tag position: A P_II A^T,
        # A = [-skew(C p_T), 0, 0, 0, I]
        M = np.empty((len(e), 3, 3))
        for k, x in enumerate(e):
            A = np.zeros((3, 15))
            A[:, 0:3] = -skew(x.robot.rot.R @ ext.p_T)
            A[:, 12:15] = np.eye(3)
            M[k] = A @ x.P_II @ A.T
        self.M = 0.5 * (M + np.transpose(M, (0, 2, 1)))
        # square-root factors B with B B^T = M (eigen-based; M may be singular)
        w, V = np.linalg.eigh(self.M)
        self.B = V * np.sqrt(np.clip(w, 0.0, None))[:, None, :]

    def directions(self, p_a):
        diff = self.tags - p_a
        rho = np.linalg.norm(diff, axis=1)
        if np.any(rho < 1e-9):
            raise SingularGeometryError("anchor estimate coincides with a tag position")
        return diff / rho[:, None], rho

    def tau(self, u, beta=1.0):
        return beta ** 2 * np.einsum("ki,kij,kj->k", u, self.M, u)


def initial_guess(window: InitWindow, ext: TagExtrinsics, kind="linear"):
    """Starting iterate ``(p_a, gamma)`` for Gauss-Newton.

    ``"linear"`` solves the squared-range equations
    ``d_k^2 - |t_k|^2 = -2 t_k^T p_a + |p_a|^2`` by linear least squares
    (gamma taken as 0) and falls back to ``"centroid"`` when that system is
    rank deficient.  ``"centroid"`` lifts the tag centroid by the mean range
    along +z.
    """
    g = _Geometry(window, ext)
    c = g.tags.mean(axis=0)
    if kind == "linear":
        A = np.hstack([-2.0 * (g.tags - c), np.ones((len(g.d), 1))])
        b = g.d ** 2 - np.sum((g.tags - c) ** 2, axis=1)
        sol, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
        if rank == 4:
            return np.array([*(sol[:3] + c), 0.0])
    elif kind != "centroid":
        raise ValueError(f"unknown initial guess {kind!r}")
    return np.array([c[0], c[1], c[2] + g.d.mean(), 0.0])


def _solve(window, ext, opts: SolverOptions, robust, x0=None):
    window.validate()
    g = _Geometry(window, ext)
    q_d = opts.range_std ** 2
    x = np.array(initial_guess(window, ext, opts.guess) if x0 is None else x0, dtype=float)

    def evaluate(x):
        u, rho = g.directions(x[:3])
        r = g.d - rho - x[3]
        if not robust:
            return float(r @ r), r, u, rho, None, None
        tau = g.tau(u)
        w = 1.0 / (q_d + tau) if opts.whiten else np.ones_like(r)
        return float(np.sum(w * (r * r + tau))), r, u, rho, tau, w

    cost, r, u, rho, tau, w = evaluate(x)
    history = [cost]
    status = "max-iterations"
    it = 0
    for it in range(1, opts.max_iter + 1):
        # stacked residual e and Jacobian de/dx for the current weights
        J = np.hstack([u, -np.ones((len(r), 1))])
        if robust:
            sw = np.sqrt(w)
            Jr = J * sw[:, None]
            er = r * sw
            # s_k = sqrt(w_k) B_k^T u_k,  ds/dp_a = -sqrt(w_k) B_k^T (I - u u^T) / rho
            s = np.einsum("kij,ki->kj", g.B, u) * sw[:, None]
            proj = np.eye(3)[None] - u[:, :, None] * u[:, None, :]
            Js = -np.einsum("kij,kil->kjl", g.B, proj) / rho[:, None, None]
            Js = Js * sw[:, None, None]
            Js = np.concatenate([Js, np.zeros((len(r), 3, 1))], axis=2).reshape(-1, 4)
            Jall = np.vstack([Jr, Js])
            eall = np.concatenate([er, s.ravel()])
        else:
            Jall, eall = J, r
        N = Jall.T @ Jall
        if not np.all(np.isfinite(N)) or np.linalg.cond(N) > opts.cond_limit:
            status = "singular"
            break
        # residual is d - h, Jall is d(e)/dx with e = r, so the GN step is
        # -(J^T J)^-1 J^T e
        step = -np.linalg.solve(N, Jall.T @ eall)
        alpha = 1.0
        accepted = False
        for _ in range(opts.max_halvings + 1):
            cand = x + alpha * step
            try:
                c_new, *rest = evaluate(cand)
            except SingularGeometryError:
                c_new = np.inf
            # rounding slack: near the minimum the cost is flat to machine precision
            if c_new <= cost + 1e-13 * abs(cost):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # no descent along the GN direction: at numerical precision
            status = "converged"
            break
        x = cand
        cost = c_new
        r, u, rho, tau, w = rest
        history.append(cost)
        if np.linalg.norm(alpha * step) < opts.step_tol:
            status = "converged"
            break
    return InitResult(window.anchor_id, x[:3].copy(), float(x[3]), 1.0, status,
                      cost, it, history)


def ls_initialize(window: InitWindow, ext: TagExtrinsics = TagExtrinsics(),
                  opts: SolverOptions = SolverOptions(), x0=None) -> InitResult:
    """Least-squares anchor initialization ignoring pose uncertainty."""
    return _solve(window, ext, opts, robust=False, x0=x0)


def robust_initialize(window: InitWindow, ext: TagExtrinsics = TagExtrinsics(),
                      opts: SolverOptions = SolverOptions(), x0=None) -> InitResult:
    """Uncertainty-aware anchor initialization."""
    return _solve(window, ext, opts, robust=True, x0=x0)


# ---------------------------------------------------------------------------
# covariance initialization


def _stacked_system(window, uwb: UwbState, ext, range_std, beta_prior_std, scaled,
                    pose_aware=False):
    """Whitened anchor Jacobian ``H_B`` (rows: ranges then the beta prior),
    per-range pose Jacobians (1x15 each) and whitened residuals.

    With ``pose_aware`` each range row is whitened by
    ``sqrt(Q_d + H_I P_II H_I^T)`` instead of the range noise alone.
    """
    m = len(window.entries)
    H_B = np.zeros((m + 1, ANCHOR_DIM))
    H_I = np.zeros((m, 15))
    res = np.zeros(m + 1)
    var = (range_std * (uwb.beta if scaled else 1.0)) ** 2
    for k, e in enumerate(window.entries):
        hI, hU = range_jacobians(e.robot, uwb, ext)
        sd = np.sqrt(var + hI @ e.P_II @ hI) if pose_aware else np.sqrt(var)
        rho = hU[3]
        H_B[k] = hU / sd
        H_I[k] = hI / sd
        res[k] = (e.meas.distance - (uwb.beta * rho + uwb.gamma)) / sd
    H_B[m, 3] = 1.0 / beta_prior_std
    return H_B, H_I, res


def _qr_split(H_B):
    Q, R = np.linalg.qr(H_B, mode="complete")
    n = H_B.shape[1]
    H_B1 = R[:n]
    if np.linalg.cond(H_B1) > 1e12:
        raise SingularGeometryError("anchor Jacobian is rank deficient")
    return Q[:, :n], H_B1


def reopen_beta(window: InitWindow, init: InitResult, ext: TagExtrinsics = TagExtrinsics(),
                range_std=0.1, beta_prior_std=0.1, scaled=True, iterations=3,
                pose_aware=False):
    """Free ``beta`` again: Gauss-Newton on all five anchor parameters with a
    ``N(1, beta_prior_std^2)`` prior on ``beta``, started at ``init``.

    ``pose_aware`` weights each range by its total variance including the
    pose uncertainty, as the robust initializer does.  Returns the refined
    :class:`UwbState`.
    """
    uwb = init.as_uwb()
    for _ in range(iterations):
        H_B, _, res = _stacked_system(window, uwb, ext, range_std, beta_prior_std, scaled,
                                      pose_aware)
        res[-1] = (1.0 - uwb.beta) / beta_prior_std
        Q1, H_B1 = _qr_split(H_B)
        dx = np.linalg.solve(H_B1, Q1.T @ res)
        uwb = UwbState(uwb.anchor_id, uwb.p_a + dx[:3], uwb.beta + dx[3], uwb.gamma + dx[4])
    return uwb


def initialize_covariance(window: InitWindow, uwb: UwbState, robot: RobotState,
                          cov: BlockCovariance, ext: TagExtrinsics = TagExtrinsics(),
                          range_std=0.1, beta_prior_std=0.1, scaled=True):
    """Append a 5x5 anchor block and its cross terms to ``cov``.

    The stacked, whitened system ``r = H_A x_I + H_B x_U + n`` is rotated by
    the QR factor of ``H_B``; the top rows give
    ``x_U = -H_B1^-1 (H_A1 x_I + n_1)``.  When every window pose is still a
    clone in ``robot`` the exact joint covariance of those clones is used and
    the cross terms against the whole state follow.  Otherwise each entry's
    ``P_II`` is treated as independent and the cross terms are zero.

    ``beta`` enters through a prior row with standard deviation
    ``beta_prior_std``.  Existing blocks are not modified.  Returns a new
    :class:`BlockCovariance`.
    """
    m = len(window.entries)
    if m < ANCHOR_DIM:
        raise InsufficientMeasurementsError(
            f"{m} ranges cannot constrain {ANCHOR_DIM} anchor parameters")
    H_B, H_I, _ = _stacked_system(window, uwb, ext, range_std, beta_prior_std, scaled)
    Q1, H_B1 = _qr_split(H_B)
    Q1r = Q1[:m]                 # the prior row has no pose dependence

    P = cov.P
    D = cov.dim
    exact = all(e.clone_t is not None for e in window.entries)
    if exact:
        try:
            idx = [cov.clone_slice(robot.clone_index(e.clone_t)) for e in window.entries]
        except KeyError:
            exact = False
    if exact:
        # H_A over the full state: each range touches one clone's (dtheta, dp)
        H_A = np.zeros((m, D))
        for k, sl in enumerate(idx):
            H_A[k, sl.start:sl.start + 3] = H_I[k, 0:3]
            H_A[k, sl.start + 3:sl.stop] = H_I[k, 12:15]
        H_A1 = Q1r.T @ H_A
        inner = H_A1 @ P @ H_A1.T
        cross = -P @ H_A1.T              # D x 5, times H_B1^-T below
    else:
        tau = np.einsum("ki,kij,kj->k", H_I, np.array([e.P_II for e in window.entries]), H_I)
        inner = (Q1r.T * tau) @ Q1r
        cross = np.zeros((D, ANCHOR_DIM))

    Binv = np.linalg.inv(H_B1)
    P_UU = Binv @ (inner + np.eye(ANCHOR_DIM)) @ Binv.T
    P_UU = 0.5 * (P_UU + P_UU.T)
    P_xU = cross @ Binv.T

    out = np.empty((D + ANCHOR_DIM, D + ANCHOR_DIM))
    out[:D, :D] = P
    out[:D, D:] = P_xU
    out[D:, :D] = P_xU.T
    out[D:, D:] = P_UU
    return BlockCovariance(out, cov.n_clones, cov.n_anchors + 1)
