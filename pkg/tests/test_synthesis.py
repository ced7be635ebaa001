import math
from dataclasses import replace

import numpy as np
import pytest

from funnelplan.config import SynthesisConfig
from funnelplan.errors import SynthesisFailure
from funnelplan.funnel import FunnelEdge
from funnelplan.geometry import Ellipsoid
from funnelplan.synthesis import (
    ClosedLoopModel,
    double_integrator,
    generate_library,
    library_model,
    lyapunov_matrices,
    maximize_rho,
    nominal_trajectory,
    rk4_step,
    synthesize_funnel,
)
from funnelplan.world import invariance_trials

FAST = SynthesisConfig(boundary_samples=300, bisection_steps=14, segment_checks=2)


def test_lqr_gain_closed_form():
    # per axis: k_p = sqrt(q_p / r), k_v = sqrt(2 k_p + q_v / r)
    m = double_integrator()
    assert np.allclose(m.K, [[4, 0, 4, 0], [0, 4, 0, 4]], atol=1e-9)
    assert np.all(np.linalg.eigvals(m.Acl).real < 0)


def test_scalar_lyapunov():
    m = ClosedLoopModel([[-1.0]], [[0.0]], [[0.0]], [[0.0]])
    P = lyapunov_matrices(m, [0.0, 0.1], Q=[[1.0]])
    assert P.shape == (2, 1, 1) and P[0, 0, 0] == pytest.approx(0.5, abs=1e-12)


def test_unstable_loop_rejected():
    m = ClosedLoopModel([[1.0]], [[0.0]], [[0.0]], [[0.0]])
    with pytest.raises(SynthesisFailure):
        lyapunov_matrices(m, [0.0])


def test_lyapunov_symmetric_and_decreasing():
    m = double_integrator()
    P = lyapunov_matrices(m, [0.0])[0]
    assert np.max(np.abs(P - P.T)) < 1e-10
    rng = np.random.default_rng(0)
    h = 1e-4
    for _ in range(20):
        e = rng.normal(0, 1, 4)
        f = lambda x: m.Acl @ x
        e1 = rk4_step(f, e, h)
        e0 = rk4_step(f, e, -h)
        dV = (e1 @ P @ e1 - e0 @ P @ e0) / (2 * h)
        assert dV == pytest.approx(-(e @ e), rel=0.01)


def test_nominal_trajectory_axis_decoupled():
    m = double_integrator()
    times, states, inputs = nominal_trajectory(m, (5.0, 0.0))
    assert np.max(np.abs(states[:, 1])) < 1e-9 and np.max(np.abs(states[:, 3])) < 1e-9
    assert np.all(np.diff(states[:, 0]) <= 1e-12)
    assert np.linalg.norm(states[-1, :2]) <= 0.3
    assert np.allclose(np.diff(times), 0.1)
    assert np.allclose(inputs, -states @ m.K.T)


def test_nominal_at_goal_is_single_knot():
    times, states, _ = nominal_trajectory(double_integrator(), (0.0, 0.0))
    assert len(times) == 1
    with pytest.raises(SynthesisFailure):
        synthesize_funnel(double_integrator(), (0.0, 0.0), "x", FAST)


def test_nominal_timeout():
    with pytest.raises(SynthesisFailure):
        nominal_trajectory(double_integrator(), (5.0, 0.0), replace(SynthesisConfig(), max_time=0.5))


def test_zero_disturbance_rho_at_least_terminal():
    cfg = replace(FAST, w_max=0.0)
    F = synthesize_funnel(double_integrator(cfg), (5.0, 0.0), "z", cfg)
    rho = F.certificate.rho
    assert np.all(rho[:-1] >= rho[-1] - 1e-9)


def test_min_rho_shrinks_with_disturbance():
    mins = []
    for w in (0.0, 0.2, 0.5, 1.0):
        cfg = replace(FAST, w_max=w)
        try:
            F = synthesize_funnel(double_integrator(cfg), (5.0, 0.0), "w", cfg)
            mins.append(float(F.certificate.rho.min()))
        except SynthesisFailure:
            mins.append(0.0)
    assert all(a >= b for a, b in zip(mins, mins[1:]))
    assert mins[-1] < mins[0]
    with pytest.raises(SynthesisFailure):
        cfg = replace(FAST, w_max=10.0)
        synthesize_funnel(double_integrator(cfg), (5.0, 0.0), "w", cfg)


def test_maximize_rho_requires_two_knots():
    m = double_integrator()
    goal = Ellipsoid(np.zeros(2), np.eye(2) / 0.09)
    with pytest.raises(SynthesisFailure):
        maximize_rho(m, lyapunov_matrices(m, [0.0]), [0.0], np.zeros((1, 4)), goal)


def _independent_margin(model, P, rho, times, rng, samples):
    """Worst of Vdot - rhodot over fresh boundary samples, at knots and segment midpoints."""
    M = model.Acl.T @ P + P @ model.Acl
    L = np.linalg.cholesky(P)
    worst = -math.inf
    for k in range(len(times) - 1):
        rdot = (rho[k + 1] - rho[k]) / (times[k + 1] - times[k])
        for s in (0.0, 0.5):
            r = rho[k] + s * (rho[k + 1] - rho[k])
            z = rng.standard_normal((samples, P.shape[0]))
            z /= np.linalg.norm(z, axis=1, keepdims=True)
            e = math.sqrt(r) * np.linalg.solve(L.T, z.T).T
            vdot = np.einsum("ij,jk,ik->i", e, M, e) + 2 * model.w_max * np.linalg.norm(e @ P @ model.B_w, axis=1)
            worst = max(worst, float(np.max(vdot)) - rdot)
    return worst


def test_certificate_soundness_fresh_falsifier(lib):
    model = library_model(lib)
    rng = np.random.default_rng(12345)
    n = lib.metadata["generator"]["boundary_samples"] * 10
    for fid in ("f00", "f05", "f11"):
        F = lib.funnels[fid]
        c = F.certificate
        assert c.worst_margin <= 1e-6
        # scale-aware tolerance: margins are in units of V per second
        assert _independent_margin(model, c.P[0], c.rho, F.knot_times, rng, n) <= 1e-6 * c.rho.max()
        for E, P, r in zip(F.ellipsoids, c.P, c.rho):
            assert np.allclose(E.shape, P / r, rtol=1e-12, atol=1e-12)


def test_monte_carlo_from_boundary(lib):
    worst = invariance_trials(FunnelEdge(lib, 0, [0, 0], 0), 10_000, seed=99, level=0.95)
    assert np.all(worst <= 1.0)


def test_library_rotation_symmetry(lib):
    base = lib.funnels["f00"]
    for i, fid in enumerate(lib.ids()):
        th = 2 * math.pi * i / len(lib)
        R2 = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
        R = np.kron(np.eye(2), R2)
        F = lib.funnels[fid]
        assert F.n_knots == base.n_knots
        assert np.allclose(F.nominal_states, base.nominal_states @ R.T, atol=1e-6)
        for Ea, Eb in zip(base.ellipsoids, F.ellipsoids):
            assert np.allclose(Eb.shape, R @ Ea.shape @ R.T, atol=1e-6 * np.abs(Ea.shape).max())


def test_generate_small_library_deterministic():
    cfg = replace(FAST, n_bearings=4)
    a = generate_library(cfg)
    b = generate_library(cfg)
    assert len(a) == 4 and a.ids() == ["f00", "f01", "f02", "f03"]
    assert a.dumps() == b.dumps()
    a.check_invariants()
    assert a.index.angular_tolerance == pytest.approx(math.pi / 4)


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError):
        SynthesisConfig.from_dict({"bogus": 1})
    cfg = SynthesisConfig.from_dict({"w_max": 0.1, "state_weights": [1, 1, 1, 1]})
    assert cfg.w_max == 0.1 and cfg.state_weights == (1.0, 1.0, 1.0, 1.0)
    assert SynthesisConfig.from_dict(cfg.to_dict()) == cfg
