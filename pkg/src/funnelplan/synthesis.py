"""Offline funnel synthesis for a planar double integrator under LQR tracking.

The closed loop is ``xdot = A x + B (u0 + K (x0 - x)) + B_w w`` with a bounded
disturbance ``|w| <= w_max``.  Each funnel is certified by a quadratic Lyapunov
function with a time-varying level ``rho(t)``; the level is maximised by a
backward sweep that bisects on each knot and falsifies the invariance condition
on sampled boundary points.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .config import SynthesisConfig
from .errors import SynthesisFailure
from .funnel import Funnel, FunnelLibrary, LyapunovCertificate
from .geometry import Ellipsoid, contains_ellipsoid, project, selection_matrix


@dataclass(eq=False)
class ClosedLoopModel:
    A: np.ndarray
    B: np.ndarray
    K: np.ndarray
    B_w: np.ndarray
    w_max: float = 0.0

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.K = np.atleast_2d(np.asarray(self.K, dtype=float))
        self.B_w = np.atleast_2d(np.asarray(self.B_w, dtype=float))
        self.Acl = self.A - self.B @ self.K

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    def nominal_rhs(self, x0):
        """Open-loop nominal driven by the regulator ``u0 = -K x0``."""
        return self.Acl @ x0

    def rhs(self, x, x0, u0, w=None):
        xdot = self.A @ x + self.B @ (u0 + self.K @ (x0 - x))
        if w is not None:
            xdot = xdot + self.B_w @ w
        return xdot

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "K": self.K.tolist(),
            "B_w": self.B_w.tolist(),
            "w_max": self.w_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClosedLoopModel":
        return cls(d["A"], d["B"], d["K"], d["B_w"], float(d["w_max"]))


def double_integrator(cfg: SynthesisConfig = SynthesisConfig()) -> ClosedLoopModel:
    """Planar double integrator with an infinite-horizon LQR gain."""
    A = np.zeros((4, 4))
    A[0, 2] = A[1, 3] = 1.0
    B = np.zeros((4, 2))
    B[2, 0] = B[3, 1] = 1.0
    Q = np.diag(cfg.state_weights)
    R = np.diag(cfg.input_weights)
    S = sla.solve_continuous_are(A, B, Q, R)
    K = np.linalg.solve(R, B.T @ S)
    return ClosedLoopModel(A, B, K, B.copy(), cfg.w_max)


def rk4_step(f, x, h):
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def nominal_trajectory(model: ClosedLoopModel, q_start, cfg: SynthesisConfig = SynthesisConfig()):
    """Rest-to-rest nominal from ``q_start`` to the origin.

    Returns ``(times, states, inputs)`` sampled every ``knot_spacing`` seconds,
    stopping at the first knot inside the goal ball with speed below
    ``settle_speed``.  A start already at the goal gives a single knot.
    """
    n = model.state_dim
    d = n // 2
    x = np.zeros(n)
    x[:d] = np.asarray(q_start, dtype=float)
    sub = int(round(cfg.knot_spacing / cfg.rk4_step))
    if sub < 1 or abs(sub * cfg.rk4_step - cfg.knot_spacing) > 1e-12:
        raise ValueError("knot spacing must be a positive multiple of the RK4 step")

    def settled(x):
        return np.linalg.norm(x[:d]) <= cfg.goal_radius and np.linalg.norm(x[d:]) <= cfg.settle_speed

    states = [x.copy()]
    max_knots = int(math.floor(cfg.max_time / cfg.knot_spacing + 1e-9))
    while not settled(x):
        if len(states) > max_knots:
            raise SynthesisFailure(f"nominal from {q_start} did not settle within {cfg.max_time} s")
        for _ in range(sub):
            x = rk4_step(model.nominal_rhs, x, cfg.rk4_step)
        states.append(x.copy())
    states = np.array(states)
    times = cfg.knot_spacing * np.arange(len(states))
    inputs = -(states @ model.K.T)
    return times, states, inputs


def lyapunov_matrices(model: ClosedLoopModel, times, Q=None) -> np.ndarray:
    """Constant Lyapunov matrix ``P`` solving ``Acl^T P + P Acl = -Q`` at every knot."""
    n = model.state_dim
    Q = np.eye(n) if Q is None else np.asarray(Q, dtype=float)
    try:
        P = sla.solve_continuous_lyapunov(model.Acl.T, -Q)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SynthesisFailure(f"Lyapunov solve failed: {exc}") from exc
    P = 0.5 * (P + P.T)
    residual = np.abs(model.Acl.T @ P + P @ model.Acl + Q).max()
    if not np.all(np.isfinite(P)) or residual > 1e-8 * max(1.0, np.abs(Q).max()):
        raise SynthesisFailure("Lyapunov solve produced an inaccurate solution")
    if np.linalg.eigvalsh(P).min() <= 0:
        raise SynthesisFailure("closed loop is not stable: Lyapunov matrix is not positive definite")
    return np.repeat(P[None], len(np.atleast_1d(times)), axis=0)


class _BoundaryFalsifier:
    """Worst-case ``Vdot`` on the level set ``V = rho`` for one Lyapunov matrix.

    In whitened coordinates ``e = sqrt(rho) G z`` with ``|z| = 1`` the worst
    case is ``rho z^T H z + 2 w sqrt(rho) |C z|``.  Samples are polished by a
    shifted fixed-point ascent, which is monotone for this convex objective.
    """

    def __init__(self, model: ClosedLoopModel, P, Pdot, z: np.ndarray, polish: int = 8, polish_iters: int = 30):
        L = np.linalg.cholesky(P)
        G = np.linalg.inv(L).T
        M = model.Acl.T @ P + P @ model.Acl + Pdot
        self.H = G.T @ (0.5 * (M + M.T)) @ G
        self.C = model.B_w.T @ P @ G
        self.w = model.w_max
        self.z = z
        self.zH = np.einsum("ij,jk,ik->i", z, self.H, z)
        self.zC = np.linalg.norm(z @ self.C.T, axis=1)
        self.shift = max(0.0, -np.linalg.eigvalsh(self.H).min())
        self.polish = polish
        self.polish_iters = polish_iters

    def worst(self, rho: float) -> float:
        if rho <= 0:
            return 0.0
        sr = math.sqrt(rho)
        vals = rho * self.zH + 2.0 * self.w * sr * self.zC
        best = float(vals.max())
        if self.polish <= 0:
            return best
        Z = self.z[np.argsort(vals)[-self.polish :]].copy()
        for _ in range(self.polish_iters):
            CZ = Z @ self.C.T
            nCZ = np.linalg.norm(CZ, axis=1, keepdims=True)
            Gr = 2.0 * rho * (Z @ self.H + self.shift * Z)
            Gr += 2.0 * self.w * sr * np.divide(CZ @ self.C, nCZ, out=np.zeros_like(Z), where=nCZ > 0)
            nG = np.linalg.norm(Gr, axis=1, keepdims=True)
            Z = np.where(nG > 0, Gr / np.where(nG > 0, nG, 1.0), Z)
        pol = rho * np.einsum("ij,jk,ik->i", Z, self.H, Z) + 2.0 * self.w * sr * np.linalg.norm(Z @ self.C.T, axis=1)
        best = max(best, float(pol.max()))
        return best


def _terminal_level(x_f, P_f, goal: Ellipsoid, Bc) -> float:
    def inside(rho):
        return contains_ellipsoid(goal, project(Ellipsoid(x_f, P_f / rho), Bc))

    hi = 1.0
    for _ in range(200):
        if not inside(hi):
            break
        hi *= 2.0
    else:
        raise SynthesisFailure("terminal level is unbounded")
    lo = 0.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if mid <= 0:
            break
        if inside(mid):
            lo = mid
        else:
            hi = mid
    return lo


def maximize_rho(model: ClosedLoopModel, P_seq, times, states, goal: Ellipsoid, cfg: SynthesisConfig = SynthesisConfig()):
    """Largest certified level per knot, swept backward from the goal.

    Returns ``(rho, report)``.  ``report`` records the number of boundary samples
    per check and the worst observed ``max Vdot - rhodot`` (non-positive on success).
    """
    P_seq = np.asarray(P_seq, dtype=float)
    times = np.asarray(times, dtype=float)
    n = model.state_dim
    Bc = selection_matrix(n, range(goal.dim))
    nk = len(times)
    if nk < 2:
        raise SynthesisFailure("nominal has a single knot")
    rho = np.zeros(nk)
    rho[-1] = _terminal_level(np.asarray(states[-1]), P_seq[-1], goal, Bc)
    if rho[-1] <= 0:
        raise SynthesisFailure("terminal ellipsoid cannot fit inside the goal region")
    rng = np.random.default_rng(cfg.seed)
    z = rng.standard_normal((cfg.boundary_samples, n))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    m = max(1, cfg.segment_checks)
    fals_cache = {}

    def falsifier(k, s):
        key = (k, s)
        if key not in fals_cache:
            dt = times[k + 1] - times[k]
            Pdot = (P_seq[k + 1] - P_seq[k]) / dt
            Ps = (1 - s / m) * P_seq[k] + (s / m) * P_seq[k + 1]
            fals_cache[key] = _BoundaryFalsifier(model, 0.5 * (Ps + Ps.T), Pdot, z)
        return fals_cache[key]

    def margin(k, rho_k):
        dt = times[k + 1] - times[k]
        rdot = (rho[k + 1] - rho_k) / dt
        worst = -math.inf
        for s in range(m + 1):
            rs = rho_k + (s / m) * (rho[k + 1] - rho_k)
            worst = max(worst, falsifier(k, s).worst(rs) - rdot)
        return worst

    worst_margin = -math.inf
    for k in range(nk - 2, -1, -1):
        fals_cache.clear()
        hi = max(rho[k + 1], 1e-12) * 2.0
        for _ in range(200):
            if margin(k, hi) > 0:
                break
            hi *= 2.0
        else:
            raise SynthesisFailure(f"level at knot {k} is unbounded")
        lo = 0.0
        for _ in range(cfg.bisection_steps):
            mid = 0.5 * (lo + hi)
            if margin(k, mid) <= 0:
                lo = mid
            else:
                hi = mid
        if lo <= 0:
            raise SynthesisFailure(f"no positive level certifies knot {k}")
        rho[k] = lo
        worst_margin = max(worst_margin, margin(k, lo))
    report = {"boundary_samples": cfg.boundary_samples, "worst_margin": worst_margin, "rho_f": rho[-1]}
    return rho, report


def synthesize_funnel(model: ClosedLoopModel, q_start, fid: str, cfg: SynthesisConfig = SynthesisConfig()) -> Funnel:
    times, states, inputs = nominal_trajectory(model, q_start, cfg)
    if len(times) < 2:
        raise SynthesisFailure(f"start {q_start} is already inside the goal region")
    P_seq = lyapunov_matrices(model, times)
    d = model.state_dim // 2
    goal = Ellipsoid(np.zeros(d), np.eye(d) / cfg.goal_radius**2)
    rho, report = maximize_rho(model, P_seq, times, states, goal, cfg)
    ellipsoids = [Ellipsoid(x, P / r) for x, P, r in zip(states, P_seq, rho)]
    cert = LyapunovCertificate(P_seq, rho, report["boundary_samples"], float(report["worst_margin"]))
    return Funnel(fid, times, states, inputs, ellipsoids, tuple(range(d)), tuple(range(d, 2 * d)), cert)


def _synth_job(args):
    model_d, q, fid, cfg_d = args
    return synthesize_funnel(ClosedLoopModel.from_dict(model_d), q, fid, SynthesisConfig.from_dict(cfg_d))


def generate_library(cfg: SynthesisConfig = SynthesisConfig(), workers: int = 1) -> FunnelLibrary:
    """One funnel per evenly spaced start bearing at distance ``epsilon``."""
    model = double_integrator(cfg)
    jobs = []
    for i in range(cfg.n_bearings):
        theta = 2 * math.pi * i / cfg.n_bearings
        q = (cfg.epsilon * math.cos(theta), cfg.epsilon * math.sin(theta))
        jobs.append((model.to_dict(), q, f"f{i:02d}", cfg.to_dict()))
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            funnels = list(ex.map(_synth_job, jobs))
    else:
        funnels = [_synth_job(j) for j in jobs]
    meta = {"generator": cfg.to_dict(), "model": model.to_dict()}
    return FunnelLibrary({F.id: F for F in funnels}, cfg.epsilon, cfg.goal_radius, meta)


def library_model(lib: FunnelLibrary) -> ClosedLoopModel:
    """Closed-loop model stored in a library's metadata."""
    if "model" not in lib.metadata:
        raise SynthesisFailure("library metadata carries no closed-loop model")
    return ClosedLoopModel.from_dict(lib.metadata["model"])
