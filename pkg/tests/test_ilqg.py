from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

from reachgen import ilqg
from reachgen.arm import ArmParams, JointState, forward_kinematics, inverse_kinematics
from reachgen.errors import DomainError, NotConverged, Unreachable
from reachgen.ilqg import (ILQGConfig, Terminal, ilqg_solve, ilqr, linearize, linearize_step,
                           rollout)

from oracles import batch_lqr, riccati_lqr

ARM = ArmParams()
CFG = ILQGConfig()
DT = 0.02


def double_integrator_step(x, u):
    # RK4 on xdot = (v, u) with u held; RK4 is exact for this quadratic-in-time flow
    def f(x):
        return np.concatenate([x[..., 2:], u], axis=-1)
    k1 = f(x)
    k2 = f(x + 0.5 * DT * k1)
    k3 = f(x + 0.5 * DT * k2)
    k4 = f(x + DT * k3)
    return x + DT / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def quadratic_terminal(Qf):
    def fn(x):
        x = np.asarray(x)
        value = np.einsum("...i,ij,...j->...", x, Qf, x)
        if x.ndim > 1:
            return value, None, None
        return value, 2 * Qf @ x, 2 * Qf
    return Terminal(fn)


def pair(start, end):
    return SimpleNamespace(start=np.asarray(start, float), end=np.asarray(end, float))


def test_double_integrator_linearization_is_exact():
    rng = np.random.default_rng(0)
    xs, us = rng.normal(size=(5, 4)), rng.normal(size=(5, 2))
    A, B = linearize(double_integrator_step, xs, us)
    A_ref = np.block([[np.eye(2), DT * np.eye(2)], [np.zeros((2, 2)), np.eye(2)]])
    B_ref = np.vstack([0.5 * DT ** 2 * np.eye(2), DT * np.eye(2)])
    for k in range(5):
        np.testing.assert_allclose(A[k], A_ref, atol=1e-8)
        np.testing.assert_allclose(B[k], B_ref, atol=1e-8)


def test_arm_linearization():
    x = JointState(np.array([0.4, 1.3]), np.array([0.2, -0.5]))
    u = np.array([0.1, -0.05])
    A, B = linearize_step(ARM, x, u, DT)
    assert np.all(np.isfinite(B)) and np.abs(B).max() > 0
    assert np.abs(B[2:]).max() > 0
    A2, _ = linearize_step(ARM, x, u, DT, h=0.5e-6)
    assert np.abs(A - A2).max() < 1e-6


def test_one_iteration_reproduces_lqr():
    Qf = np.diag([1e3, 1e3, 10.0, 10.0])
    r = 1e-2 * DT
    x0 = np.array([0.1, -0.05, 0.0, 0.0])
    cfg = ILQGConfig(reg_init=0.0, reg_min=0.0, max_iter=1)
    res = ilqr(double_integrator_step, x0, np.zeros((50, 2)), r, quadratic_terminal(Qf), cfg)
    assert res.iterations == 1 and len(res.cost_history) == 2
    A = np.block([[np.eye(2), DT * np.eye(2)], [np.zeros((2, 2)), np.eye(2)]])
    B = np.vstack([0.5 * DT ** 2 * np.eye(2), DT * np.eye(2)])
    u_riccati = riccati_lqr(A, B, Qf, r, x0, 50)
    u_batch = batch_lqr(A, B, Qf, r, x0, 50)
    np.testing.assert_allclose(u_riccati, u_batch, atol=1e-9)
    np.testing.assert_allclose(res.u, u_riccati, atol=1e-6)


def test_rollout_cost_examples():
    q0 = inverse_kinematics(ARM, (0.05, 0.35))
    x0 = JointState.at_rest(q0)
    u0 = np.zeros((50, 2))
    assert rollout(ARM, x0, u0, CFG, forward_kinematics(ARM, q0)).cost == 0.0
    target = np.array([0.1, 0.3])
    r = rollout(ARM, x0, u0, CFG, target)
    d = forward_kinematics(ARM, q0) - target
    assert r.cost == CFG.w_p * (d @ d)
    u = np.full((50, 2), 0.05)
    e1 = rollout(ARM, x0, u, CFG, target).terms["effort"]
    e2 = rollout(ARM, x0, u, replace(CFG, w_u=2 * CFG.w_u), target).terms["effort"]
    assert e2 == pytest.approx(2 * e1, rel=1e-15)
    with pytest.raises(DomainError):
        rollout(ARM, x0, np.full((50, 2), np.nan), CFG, target)


def test_zero_reach():
    res = ilqg_solve(ARM, pair((0.05, 0.35), (0.05, 0.35)))
    assert np.abs(res.u).max() < 1e-6
    assert res.cost_history[-1] < 1e-10


def test_reaches_converge_and_are_deterministic():
    rng = np.random.default_rng(4)
    for _ in range(5):
        s = np.array([rng.uniform(-0.25, 0.25), rng.uniform(0.25, 0.45)])
        th = rng.uniform(0, 2 * np.pi)
        p = pair(s, s + rng.uniform(0.01, 0.1) * np.array([np.cos(th), np.sin(th)]))
        res = ilqg_solve(ARM, p)
        hand = forward_kinematics(ARM, res.states[-1, :2])
        assert np.linalg.norm(hand - p.end) < 2e-3
        assert np.all(np.diff(res.cost_history) < 0)
        assert res.converged
    again = ilqg_solve(ARM, p)
    assert again.u.tobytes() == res.u.tobytes()
    assert again.cost_history == res.cost_history


def test_unreachable_pair():
    with pytest.raises(Unreachable):
        ilqg_solve(ARM, pair((0.05, 0.35), (0.9, 0.0)))


def test_not_converged_is_reported():
    p = pair((0.0, 0.35), (0.08, 0.35))
    res = ilqg_solve(ARM, p, ILQGConfig(max_iter=1))
    assert not res.converged and len(res.cost_history) == 2
    with pytest.raises(NotConverged) as exc:
        ilqg_solve(ARM, p, ILQGConfig(max_iter=1), strict=True)
    assert exc.value.result.u.shape == (50, 2)


def test_backward_pass_rejects_indefinite_control_hessian():
    A = np.eye(4)[None]
    B = np.vstack([np.zeros((2, 2)), np.eye(2)])[None]
    us = np.zeros((1, 2))
    Vx, Vxx = np.zeros(4), -np.eye(4)
    assert ilqg._backward(A, B, us, 0.0, Vx, Vxx, reg=0.0) is None
    assert ilqg._backward(A, B, us, 0.0, Vx, Vxx, reg=2.0) is not None


def test_config_validation():
    assert CFG.problems() == []
    assert ILQGConfig(horizon=40).problems()
    assert ILQGConfig(w_u=-1).problems()
    assert ILQGConfig(reg_init=1e12).problems()
