"""End-to-end calibration run on simulated data.

Timeline on the IMU grid: camera frames clone the pose and apply a
known-landmark update; UWB epochs first feed the anchor-initialization
window and, once every anchor is initialized, drive the range refinement.
During the window phase each admitted epoch is held as a ``"range"`` pose
clone, so the initializer sees the smoothed poses and their exact joint
covariance.  The clones are marginalized once all anchors are initialized.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .fim import SINGULAR_FLAGS, degeneracy_flags
from .initializer import (InitEntry, InitWindow, InsufficientMeasurementsError,
                          SingularGeometryError, SolverOptions, initialize_covariance,
                          ls_initialize, reopen_beta, robust_initialize)
from .propagation import ImuNoise, NoValidObservationsError, propagate, vision_update
from .refiner import FejRegistry, NumericalFailure, ekf_uwb_update, skf_uwb_update
from .sim import SimData, generate, localization_errors
from .state import (ANCHOR_DIM, IMU_DIM, BlockCovariance, CalibState, RobotState,
                    Rotation3, clone_augment, clone_marginalize, min_eig_ok)

NEES_EVERY = 1.0     # seconds between NEES samples in the metrics


class PipelineSingular(RuntimeError):
    """The initializer met a degenerate window; ``flags`` names the geometry."""

    def __init__(self, msg, flags):
        super().__init__(msg)
        self.flags = list(flags)


@dataclass
class TrialMetrics:
    mode: str
    seed: int
    status: str = "ok"              # ok | singular | failed
    prmse: float = float("nan")     # m, refinement segment
    ormse: float = float("nan")     # deg, refinement segment
    anchor_pos_err: list = field(default_factory=list)
    beta_err: list = field(default_factory=list)
    gamma_err: list = field(default_factory=list)
    anchor_nees: list = field(default_factory=list)
    init_anchor_pos_err: list = field(default_factory=list)
    init_prmse: float = float("nan")
    nees_series: list = field(default_factory=list)   # [t, nees_0, nees_1, ...]
    init_cov_psd: bool = True
    uwb_updates: int = 0
    flags: list = field(default_factory=list)
    message: str = ""

    @property
    def mean_anchor_err(self):
        return float(np.mean(self.anchor_pos_err)) if self.anchor_pos_err else float("nan")

    def to_dict(self):
        return {
            "mode": self.mode, "seed": self.seed, "status": self.status,
            "prmse": self.prmse, "ormse": self.ormse,
            "mean_anchor_err": self.mean_anchor_err,
            "anchor_pos_err": list(self.anchor_pos_err),
            "beta_err": list(self.beta_err), "gamma_err": list(self.gamma_err),
            "anchor_nees": list(self.anchor_nees),
            "init_anchor_pos_err": list(self.init_anchor_pos_err),
            "init_prmse": self.init_prmse,
            "nees_series": [list(r) for r in self.nees_series],
            "init_cov_psd": self.init_cov_psd, "uwb_updates": self.uwb_updates,
            "flags": list(self.flags), "message": self.message,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d.pop("mean_anchor_err", None)
        return cls(**d)


@dataclass
class PipelineResult:
    metrics: TrialMetrics
    state: CalibState | None
    cov: BlockCovariance | None
    trace: list                      # rows as dicts, see TRACE_FIELDS
    n_anchors: int


def trace_fields(n_anchors):
    cols = ["t", "phase",
            "true_px", "true_py", "true_pz", "true_qw", "true_qx", "true_qy", "true_qz",
            "est_px", "est_py", "est_pz", "est_qw", "est_qx", "est_qy", "est_qz",
            "pos_3sig_x", "pos_3sig_y", "pos_3sig_z", "pos_err", "att_err_deg"]
    for i in range(n_anchors):
        for name in ("px", "py", "pz", "beta", "gamma"):
            cols.append(f"a{i}_{name}")
        for name in ("px", "py", "pz", "beta", "gamma"):
            cols.append(f"a{i}_3sig_{name}")
        cols.append(f"a{i}_err")
    return cols


def initial_robot(data: SimData, cfg: RunConfig, rng):
    n = cfg.scenario.noise
    rot = Rotation3.from_matrix(data.R[0]).boxplus(rng.normal(0, n.init_attitude, 3))
    robot = RobotState(rot, np.zeros(3), data.v[0] + rng.normal(0, n.init_velocity, 3),
                       np.zeros(3), data.p[0] + rng.normal(0, n.init_position, 3), float(data.t[0]))
    sd = np.concatenate([np.full(3, n.init_attitude), np.full(3, n.init_gyro_bias),
                         np.full(3, n.init_velocity), np.full(3, n.init_accel_bias),
                         np.full(3, n.init_position)])
    return robot, BlockCovariance(np.diag(sd ** 2))


def _entry_from_clone(clone, cov, ci, meas):
    sl = cov.clone_slice(ci)
    P6 = cov.P[sl, sl]
    P15 = np.zeros((IMU_DIM, IMU_DIM))
    ix = np.r_[0:3, 12:15]
    P15[np.ix_(ix, ix)] = P6
    robot = RobotState(clone.rot, np.zeros(3), np.zeros(3), np.zeros(3), clone.p.copy(), clone.t)
    return InitEntry(robot, P15, meas, clone.t)


def _inject_sigma_r(entries, offsets):
    """Corrupt window poses; ``offsets`` maps clone time to (error, variance)."""
    out = []
    for e in entries:
        err, var = offsets[e.clone_t]
        P = e.P_II.copy()
        P[12:15, 12:15] += var * np.eye(3)
        r = e.robot.copy()
        r.p = r.p + err
        out.append(InitEntry(r, P, e.meas, None))
    return out


def _anchor_nees(state, cov, data, j):
    a = state.anchors[j]
    truth = data.anchors[a.anchor_id]
    e = a.p_a - truth.p_a
    sl = cov.anchor_slice(j)
    P = cov.P[sl, sl][:3, :3]
    return float(e @ np.linalg.solve(P, e))


class _Run:
    """Mutable filter run over a :class:`SimData`; ``step(k)`` processes the
    events at grid index ``k`` and then propagates to ``k + 1``."""

    def __init__(self, cfg: RunConfig, data: SimData, init_kind, keep_trace):
        sc = cfg.scenario
        self.cfg = cfg
        self.data = data
        self.init_kind = init_kind
        self.upd_kind = None
        self.keep_trace = keep_trace
        self.observer = None
        ss = np.random.SeedSequence([int(sc.seed), 1])
        rng_init, self.rng_sig_i, self.rng_sig_r = (np.random.default_rng(s)
                                                    for s in ss.spawn(3))
        self.noise = ImuNoise(sc.noise.gyro, sc.noise.accel, sc.noise.gyro_bias,
                              sc.noise.accel_bias)
        self.filt_std = sc.noise.range_std * sc.sigma_u
        self.opts = SolverOptions(range_std=self.filt_std, max_iter=cfg.solver.max_iter,
                                  step_tol=cfg.solver.step_tol,
                                  max_halvings=cfg.solver.max_halvings,
                                  whiten=cfg.solver.whiten, guess=cfg.solver.initial_guess)
        robot, self.cov = initial_robot(data, cfg, rng_init)
        self.state = CalibState(robot, [])
        self.registry = FejRegistry() if cfg.filter.use_fej else None
        self.windows = {a.anchor_id: InitWindow(a.anchor_id, [], cfg.filter.min_window)
                        for a in data.anchors}
        self.last_range_p = None
        self.initialized = False
        self.done = False            # stopped early (singular / failure)
        self.metrics = TrialMetrics(init_kind, int(sc.seed))
        self.trace = []
        self.err_p, self.err_o, self.init_err_p = [], [], []
        self.next_nees = 0.0

    def branch(self, upd_kind, observer=None):
        run = copy.copy(self)
        run.state = self.state.copy()
        run.cov = self.cov.copy()
        run.registry = copy.deepcopy(self.registry)
        run.metrics = copy.deepcopy(self.metrics)
        run.metrics.mode = f"{self.init_kind}+{upd_kind}"
        run.trace = list(self.trace)
        run.err_p, run.err_o = list(self.err_p), list(self.err_o)
        run.init_err_p = list(self.init_err_p)
        run.upd_kind = upd_kind
        run.observer = observer
        return run

    def _stop(self, status, message, flags=()):
        self.metrics.status = status
        self.metrics.message = message
        self.metrics.flags = list(flags)
        self.done = True

    def step(self, k):
        data, fc, sc = self.data, self.cfg.filter, self.cfg.scenario
        self.state.robot.t = float(data.t[k])
        if k in data.frames:
            self._camera(k)
        if k in data.ranges:
            if not self.initialized:
                self._collect(k)
            elif fc.uwb_updates:
                self._refine(k)
            if not self.done:
                self._record(k)
        if not self.done and k < len(data.imu):
            robot, self.cov = propagate(self.state.robot, self.cov, data.imu[k], data.dt,
                                        self.noise)
            self.state = CalibState(robot, self.state.anchors)

    def _camera(self, k):
        data, fc = self.data, self.cfg.filter
        robot, self.cov = clone_augment(self.state.robot, self.cov, fc.clone_window + 1,
                                        "vision")
        self.state = CalibState(robot, self.state.anchors)
        try:
            self.state, self.cov = vision_update(self.state, self.cov, data.frames[k],
                                                 data.landmarks, self.cfg.scenario.noise.pixel,
                                                 data.cam, fc.gate)
        except NoValidObservationsError:
            pass
        vis = [i for i, c in enumerate(self.state.robot.clones) if c.tag == "vision"]
        if len(vis) > fc.clone_window:
            robot, self.cov = clone_marginalize(self.state.robot, self.cov, vis[0])
            self.state = CalibState(robot, self.state.anchors)
        if self.observer is not None:
            self.observer("camera", k, self.state, self.cov)

    def _collect(self, k):
        data, fc, sc = self.data, self.cfg.filter, self.cfg.scenario
        robot = self.state.robot
        n_range = sum(c.tag == "range" for c in robot.clones)
        moved = self.last_range_p is None or \
            np.linalg.norm(robot.p - self.last_range_p) >= sc.range_spacing
        if moved and n_range < fc.max_init_clones:
            robot, self.cov = clone_augment(robot, self.cov, fc.max_init_clones, "range")
            self.state = CalibState(robot, self.state.anchors)
            self.last_range_p = robot.p.copy()
            for m in data.ranges[k]:
                self.windows[m.anchor_id].entries.append(InitEntry(None, None, m, float(data.t[k])))
        ready = data.t[k] >= sc.init_duration and \
            all(len(w) >= fc.min_window for w in self.windows.values())
        if not ready:
            return
        try:
            self.state, self.cov = _initialize_all(
                self.state, self.cov, self.windows, data, self.cfg, self.init_kind, self.opts,
                self.filt_std, self.registry, self.rng_sig_i, self.rng_sig_r, self.metrics)
        except PipelineSingular as exc:
            self._stop("singular", str(exc), exc.flags)
            return
        self.initialized = True
        self.metrics.init_anchor_pos_err = [
            float(np.linalg.norm(a.p_a - data.anchors[a.anchor_id].p_a))
            for a in self.state.anchors]

    def _refine(self, k):
        update = skf_uwb_update if self.upd_kind == "skf" else ekf_uwb_update
        fc = self.cfg.filter
        for m in self.data.ranges[k]:
            try:
                self.state, self.cov, rep = update(self.state, self.cov, m, self.data.ext,
                                                   self.filt_std, self.registry, fc.gate,
                                                   fc.scale_range_noise)
            except NumericalFailure as exc:
                self._stop("failed", str(exc))
                return
            self.metrics.uwb_updates += rep.applied

    def _record(self, k):
        data, state = self.data, self.state
        pe = float(np.linalg.norm(state.robot.p - data.p[k]))
        oe = math.degrees(Rotation3.from_matrix(data.R[k]).angle_to(state.robot.rot))
        if self.initialized:
            self.err_p.append(pe)
            self.err_o.append(oe)
            if data.t[k] >= self.next_nees:
                self.metrics.nees_series.append(
                    [float(data.t[k])] + [_anchor_nees(state, self.cov, data, j)
                                          for j in range(len(state.anchors))])
                self.next_nees = data.t[k] + NEES_EVERY
        else:
            self.init_err_p.append(pe)
        if self.keep_trace:
            self.trace.append(_trace_row(k, data, state, self.cov, self.initialized, pe, oe,
                                         len(data.anchors)))
        if self.observer is not None:
            self.observer("uwb", k, state, self.cov)

    def finish(self):
        m = self.metrics
        result = PipelineResult(m, self.state, self.cov, self.trace, len(self.data.anchors))
        if self.done:
            return result
        if not self.initialized:
            self._stop("failed", "anchor initialization window never filled")
            return result

        def rms(x):
            return float(np.sqrt(np.mean(np.square(x)))) if x else float("nan")

        m.prmse, m.ormse, m.init_prmse = rms(self.err_p), rms(self.err_o), rms(self.init_err_p)
        for j, a in enumerate(self.state.anchors):
            tr = self.data.anchors[a.anchor_id]
            m.anchor_pos_err.append(float(np.linalg.norm(a.p_a - tr.p_a)))
            m.beta_err.append(float(a.beta - tr.beta))
            m.gamma_err.append(float(a.gamma - tr.gamma))
            m.anchor_nees.append(_anchor_nees(self.state, self.cov, self.data, j))
        return result


def run_modes(cfg: RunConfig, data: SimData | None = None, modes=None, observer=None,
              keep_trace=True):
    """Run several modes on the same data; returns ``{mode: PipelineResult}``.

    Modes that share an initializer share the window phase, which contains no
    mode-dependent step, and branch when the anchors are initialized.  Each
    result is identical to a separate :func:`run_pipeline` call.
    """
    modes = list(modes or [cfg.mode])
    data = data if data is not None else generate(cfg.scenario)
    K = len(data.imu)
    out = {}
    for init_kind in dict.fromkeys(m.split("+")[0] for m in modes):
        run = _Run(cfg, data, init_kind, keep_trace)
        run.observer = observer
        k = 0
        while k <= K and not run.done and not run.initialized:
            run.step(k)
            k += 1
        for mode in modes:
            ik, uk = mode.split("+")
            if ik != init_kind:
                continue
            br = run.branch(uk, observer)
            kk = k
            while kk <= K and not br.done:
                br.step(kk)
                kk += 1
            out[mode] = br.finish()
    return {m: out[m] for m in modes}


def run_pipeline(cfg: RunConfig, data: SimData | None = None, mode: str | None = None,
                 observer=None, keep_trace=True) -> PipelineResult:
    """Run one calibration trial.

    ``observer(kind, k, state, cov)`` is called after every camera frame
    (``"camera"``) and UWB epoch (``"uwb"``).  Initializer degeneracy is
    reported through ``metrics.status == "singular"`` with the geometry flags.
    """
    mode = mode or cfg.mode
    return run_modes(cfg, data, [mode], observer, keep_trace)[mode]


def _initialize_all(state, cov, windows, data, cfg, init_kind, opts, filt_std, registry,
                    rng_sig_i, rng_sig_r, metrics):
    sc = cfg.scenario
    fc = cfg.filter
    robot = state.robot
    anchors = list(state.anchors)
    # each window pose is corrupted once, shared by all anchors' windows
    times = [c.t for c in robot.clones if c.tag == "range"]
    err, var = localization_errors(len(times), sc.sigma_r, sc.sigma_r_model, rng_sig_r)
    offsets = {t: (err[i], var[i]) for i, t in enumerate(times)}
    # refresh window entries from the (smoothed) range clones
    for w in windows.values():
        entries = []
        for e in w.entries:
            ci = robot.clone_index(e.clone_t)
            entries.append(_entry_from_clone(robot.clones[ci], cov, ci, e.meas))
        if sc.sigma_r > 0:
            entries = _inject_sigma_r(entries, offsets)
        w.entries = entries

    solve = robust_initialize if init_kind == "ri" else ls_initialize
    for aid in sorted(windows):
        w = windows[aid]
        flags = degeneracy_flags(w, data.ext)
        if any(f in SINGULAR_FLAGS for f in flags):
            raise PipelineSingular(f"anchor {aid}: window is {flags[0]}", flags)
        try:
            res = solve(w, data.ext, opts)
        except (SingularGeometryError, InsufficientMeasurementsError) as exc:
            raise PipelineSingular(f"anchor {aid}: {exc}", degeneracy_flags(w, data.ext)) from None
        if res.status == "singular":
            raise PipelineSingular(f"anchor {aid}: singular initialization geometry",
                                   degeneracy_flags(w, data.ext))
        try:
            if fc.reopen_beta:
                uwb = reopen_beta(w, res, data.ext, filt_std, fc.beta_prior_std,
                                  fc.scale_range_noise, pose_aware=(init_kind == "ri"))
            else:
                uwb = res.as_uwb()
        except (SingularGeometryError, ValueError) as exc:
            raise PipelineSingular(f"anchor {aid}: {exc}", degeneracy_flags(w, data.ext)) from None
        if sc.sigma_i > 0:
            uwb.p_a = uwb.p_a + rng_sig_i.normal(0.0, sc.sigma_i, 3)
            g_noise = rng_sig_i.normal(0.0, sc.sigma_i)
            if fc.sigma_i_gamma:
                uwb.gamma = uwb.gamma + g_noise
        cov = initialize_covariance(w, uwb, robot, cov, data.ext, filt_std,
                                    fc.beta_prior_std, fc.scale_range_noise)
        sl = cov.anchor_slice(cov.n_anchors - 1)
        if sc.sigma_i > 0 and fc.sigma_i_in_covariance:
            ix = np.arange(sl.start, sl.stop)[[0, 1, 2, 4]]
            cov.P[ix, ix] += sc.sigma_i ** 2
        metrics.init_cov_psd &= min_eig_ok(cov.P[sl, sl]) and min_eig_ok(cov.P)
        anchors.append(uwb)
        if registry is not None:
            registry.seed_anchor(uwb)
    state = CalibState(robot, anchors)
    # the window poses are no longer needed
    for i in reversed(range(len(state.robot.clones))):
        if state.robot.clones[i].tag == "range":
            robot, cov = clone_marginalize(state.robot, cov, i)
            state = CalibState(robot, state.anchors)
    return state, cov


def _trace_row(k, data, state, cov, initialized, pe, oe, n_anchors):
    r = state.robot
    qt = Rotation3.from_matrix(data.R[k]).q
    sig = 3.0 * np.sqrt(np.clip(np.diag(cov.P)[12:15], 0.0, None))
    row = {"t": float(data.t[k]), "phase": "refine" if initialized else "init",
           "true_px": data.p[k][0], "true_py": data.p[k][1], "true_pz": data.p[k][2],
           "true_qw": qt[0], "true_qx": qt[1], "true_qy": qt[2], "true_qz": qt[3],
           "est_px": r.p[0], "est_py": r.p[1], "est_pz": r.p[2],
           "est_qw": r.rot.q[0], "est_qx": r.rot.q[1], "est_qy": r.rot.q[2],
           "est_qz": r.rot.q[3],
           "pos_3sig_x": sig[0], "pos_3sig_y": sig[1], "pos_3sig_z": sig[2],
           "pos_err": pe, "att_err_deg": oe}
    have = {a.anchor_id: j for j, a in enumerate(state.anchors)}
    diag = np.diag(cov.P)
    for i in range(n_anchors):
        names = ("px", "py", "pz", "beta", "gamma")
        if i in have:
            j = have[i]
            a = state.anchors[j]
            vals = a.vector()
            sl = cov.anchor_slice(j)
            s3 = 3.0 * np.sqrt(np.clip(diag[sl], 0.0, None))
            err = float(np.linalg.norm(a.p_a - data.anchors[i].p_a))
        else:
            vals = s3 = np.full(ANCHOR_DIM, np.nan)
            err = float("nan")
        for n_, v in zip(names, vals):
            row[f"a{i}_{n_}"] = float(v)
        for n_, v in zip(names, s3):
            row[f"a{i}_3sig_{n_}"] = float(v)
        row[f"a{i}_err"] = err
    return {key: (float(v) if not isinstance(v, str) else v) for key, v in row.items()}
