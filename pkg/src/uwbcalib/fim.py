"""Fisher information of a range window about the anchor parameters.

The range ``d_k`` is modelled as ``N(h_k(x_U), Sigma_k(x_U))`` with
``Sigma_k = Q_d + H_I P_II H_I^T``.  Because the variance depends on ``x_U``
too, the information per range is

    F_ij = dh_i dh_j / Sigma + 1/2 * dSigma_i dSigma_j / Sigma^2

(the general-Gaussian form).  ``form="printed"`` swaps ``dSigma`` for ``dh``
in the second term, for comparison only.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .initializer import InitWindow, _Geometry
from .uwb import TagExtrinsics

FD_STEP = 1e-6


@dataclass
class FimReport:
    F: np.ndarray
    det: float
    eigenvalues: np.ndarray
    rank: int
    position_rank: int
    flags: list = field(default_factory=list)

    def to_dict(self):
        return {
            "F": self.F.tolist(),
            "det_f": float(self.det),
            "eigenvalues": self.eigenvalues.tolist(),
            "rank": int(self.rank),
            "position_rank": int(self.position_rank),
            "flags": list(self.flags),
        }


def _split(x_U, fix_beta):
    x_U = np.asarray(x_U, dtype=float)
    if fix_beta:
        if x_U.size == 5:
            x_U = x_U[[0, 1, 2, 4]]
        p_a, beta, gamma = x_U[:3], 1.0, x_U[3]
    else:
        p_a, beta, gamma = x_U[:3], x_U[3], x_U[4]
    return p_a, beta, gamma


def build_sigma(window: InitWindow, x_U, range_std=0.1, ext: TagExtrinsics = TagExtrinsics(),
                fix_beta=False, _geom=None):
    """Per-range variance ``Q_d + H_I P_II H_I^T`` evaluated at ``x_U``.

    ``x_U`` is ``(p_a, beta, gamma)``, or ``(p_a, gamma)`` with
    ``fix_beta=True``.
    """
    g = _geom or _Geometry(window, ext)
    p_a, beta, _ = _split(x_U, fix_beta)
    u, _ = g.directions(p_a)
    return range_std ** 2 + g.tau(u, beta)


def _mean_jacobian(g, x_U, fix_beta):
    p_a, beta, _ = _split(x_U, fix_beta)
    u, rho = g.directions(p_a)
    cols = [-beta * u]
    if not fix_beta:
        cols.append(rho[:, None])
    cols.append(np.ones((len(rho), 1)))
    return np.hstack(cols)


def sigma_jacobian(window: InitWindow, x_U, range_std=0.1, ext: TagExtrinsics = TagExtrinsics(),
                   fix_beta=False, _geom=None):
    """Analytic ``dSigma_k / dx_U`` (one row per range).

    With ``u = (t - p_a) / rho`` and ``tau = beta^2 u^T M u``:
    ``dtau/dp_a = -2 beta^2 (M u)^T (I - u u^T) / rho``,
    ``dtau/dbeta = 2 beta u^T M u`` and ``dtau/dgamma = 0``.
    """
    g = _geom or _Geometry(window, ext)
    p_a, beta, _ = _split(x_U, fix_beta)
    u, rho = g.directions(p_a)
    Mu = np.einsum("kij,kj->ki", g.M, u)
    uMu = np.einsum("ki,ki->k", u, Mu)
    dp = -2.0 * beta ** 2 * (Mu - uMu[:, None] * u) / rho[:, None]
    cols = [dp]
    if not fix_beta:
        cols.append((2.0 * beta * uMu)[:, None])
    cols.append(np.zeros((len(rho), 1)))
    return np.hstack(cols)


def sigma_jacobian_fd(window: InitWindow, x_U, range_std=0.1, ext: TagExtrinsics = TagExtrinsics(),
                      fix_beta=False, step=FD_STEP):
    """Central finite differences of :func:`build_sigma`, for checking."""
    g = _Geometry(window, ext)
    x_U = np.asarray(x_U, dtype=float)
    if fix_beta and x_U.size == 5:
        x_U = x_U[[0, 1, 2, 4]]
    n = x_U.size
    out = np.empty((len(window.entries), n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = step
        hi = build_sigma(window, x_U + e, range_std, ext, fix_beta, g)
        lo = build_sigma(window, x_U - e, range_std, ext, fix_beta, g)
        out[:, i] = (hi - lo) / (2 * step)
    return out


def general_gaussian_fim(window: InitWindow, x_U, range_std=0.1,
                         ext: TagExtrinsics = TagExtrinsics(), fix_beta=False,
                         form="general", terms="both", rank_tol=1e-8) -> FimReport:
    """Plug-in FIM at ``x_U``.

    ``terms`` selects ``"both"`` or ``"mean"`` (first term only);
    ``form`` is ``"general"`` or ``"printed"``.
    """
    if form not in ("general", "printed"):
        raise ValueError(f"unknown form {form!r}")
    if terms not in ("both", "mean"):
        raise ValueError(f"unknown terms {terms!r}")
    g = _Geometry(window, ext)
    sigma = build_sigma(window, x_U, range_std, ext, fix_beta, g)
    Jh = _mean_jacobian(g, x_U, fix_beta)
    F = (Jh / sigma[:, None]).T @ Jh
    if terms == "both":
        dS = sigma_jacobian(window, x_U, range_std, ext, fix_beta, g) if form == "general" else Jh
        F = F + 0.5 * (dS / (sigma ** 2)[:, None]).T @ dS
    F = 0.5 * (F + F.T)
    eig = np.linalg.eigvalsh(F)
    top = max(eig[-1], 0.0)
    rank = int(np.sum(eig > rank_tol * top)) if top > 0 else 0
    Fp = F[:3, :3]
    eig_p = np.linalg.eigvalsh(Fp)
    top_p = max(eig_p[-1], 0.0)
    prank = int(np.sum(eig_p > rank_tol * top_p)) if top_p > 0 else 0
    return FimReport(F, float(np.linalg.det(F)), eig, rank, prank, degeneracy_flags(window, ext))


def degeneracy_flags(window: InitWindow, ext: TagExtrinsics = TagExtrinsics(), tol=1e-3,
                     n_sigma=3.0):
    """Geometric classification of the window's tag positions.

    A principal direction counts as unexcited when the RMS spread along it is
    below ``max(tol, n_sigma * sigma_p)``, where ``sigma_p`` is the RMS
    per-axis position std reported in the entries' ``P_II``.  Returns at most
    one of ``static``, ``collinear``, ``planar-z`` (plane normal along z) or
    ``planar``; an empty list for a 3-D rich window.
    """
    pts = np.array([e.robot.p + e.robot.rot.R @ ext.p_T for e in window.entries])
    n = len(pts)
    if n == 0:
        return ["static"]
    var = [np.trace(e.P_II[12:15, 12:15]) / 3.0 for e in window.entries
           if e.P_II is not None]
    thr = max(tol, n_sigma * float(np.sqrt(np.mean(var)))) if var else tol
    c = pts - pts.mean(axis=0)
    _, s, Vt = np.linalg.svd(c, full_matrices=False)
    s = np.concatenate([s, np.zeros(3 - s.size)]) / np.sqrt(n)
    if s[0] < thr:
        return ["static"]
    if s[1] < thr:
        return ["collinear"]
    if s[2] < thr:
        normal = Vt[2] if Vt.shape[0] == 3 else np.cross(Vt[0], Vt[1])
        return ["planar-z"] if abs(normal[2]) > np.cos(np.deg2rad(1.0)) else ["planar"]
    return []


SINGULAR_FLAGS = ("static", "collinear")
