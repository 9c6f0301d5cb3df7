"""Iterative LQR for torque-controlled reaches.

The nominal (noise-free) controls of iLQG coincide with iLQR, so the solver
here is the deterministic variant: finite-difference linearization of the
discrete RK4 step, a regularized Riccati backward pass, and a line-searched
forward pass.  The core routine :func:`ilqr` works on any discrete plant given
as a batched ``step(x, u)``; :func:`ilqg_solve` specializes it to the arm.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from . import arm as arm_model
from .arm import ArmParams, JointState
from .errors import DomainError, NotConverged, NumericalBlowup

log = logging.getLogger(__name__)

FD_STEP = 1e-6


@dataclass
class ILQGConfig:
    horizon: int = 50
    dt: float = 0.02
    w_p: float = 1e4
    w_v: float = 1e2
    w_u: float = 1e-2
    reg_init: float = 1.0
    reg_min: float = 1e-9
    reg_max: float = 1e10
    max_iter: int = 100
    tol_rel: float = 1e-9
    alphas: tuple = tuple(2.0 ** -k for k in range(11))

    def problems(self) -> list[str]:
        out = []
        if self.horizon < 1:
            out.append("ilqg.horizon must be >= 1")
        if abs(self.horizon * self.dt - 1.0) > 1e-9:
            out.append("ilqg.horizon * ilqg.dt must equal 1.0 s")
        for name in ("w_p", "w_v", "w_u"):
            if getattr(self, name) < 0:
                out.append(f"ilqg.{name} must be >= 0")
        if not self.reg_min <= self.reg_init <= self.reg_max:
            out.append("ilqg regularization must satisfy reg_min <= reg_init <= reg_max")
        if self.max_iter < 0:
            out.append("ilqg.max_iter must be >= 0")
        if not self.alphas or any(a <= 0 for a in self.alphas):
            out.append("ilqg.alphas must be a non-empty list of positive step sizes")
        return out

    def to_dict(self):
        d = asdict(self)
        d["alphas"] = list(self.alphas)
        return d


@dataclass
class Terminal:
    """Quadratic-model terminal cost: ``fn(x) -> (value, grad, hess)``."""
    fn: object


@dataclass
class ILQRResult:
    u: np.ndarray
    states: np.ndarray
    cost_history: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    reason: str = ""

    @property
    def cost(self):
        return self.cost_history[-1]


@dataclass
class Rollout:
    states: np.ndarray
    cost: float
    terms: dict


def linearize(step, xs, us, h: float = FD_STEP):
    """Central-difference Jacobians of ``step`` at each ``(xs[k], us[k])``.

    All perturbed evaluations go through ``step`` in a single batched call.
    Returns ``A`` of shape ``(N, nx, nx)`` and ``B`` of shape ``(N, nx, nu)``.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    us = np.atleast_2d(np.asarray(us, dtype=float))
    N, nx = xs.shape
    nu = us.shape[1]
    nz = nx + nu
    eye = np.eye(nz) * h
    pert = np.concatenate([eye, -eye])                          # (2nz, nz)
    z = np.concatenate([xs, us], axis=1)[:, None, :] + pert     # (N, 2nz, nz)
    out = step(z[..., :nx].reshape(-1, nx), z[..., nx:].reshape(-1, nu)).reshape(N, 2 * nz, nx)
    J = (out[:, :nz] - out[:, nz:]) / (2 * h)                   # (N, nz, nx)
    J = np.swapaxes(J, 1, 2)
    return J[:, :, :nx], J[:, :, nx:]


def _rollout_cost(states, us, w_u_dt, terminal):
    # states (..., N+1, nx), us (..., N, nu)
    effort = w_u_dt * np.sum(us * us, axis=(-2, -1))
    return effort + terminal.fn(states[..., -1, :])[0]


def _simulate(step, x0, us):
    xs = np.empty(us.shape[:-2] + (us.shape[-2] + 1, np.shape(x0)[-1]))
    xs[..., 0, :] = x0
    for k in range(us.shape[-2]):
        xs[..., k + 1, :] = step(xs[..., k, :], us[..., k, :])
    return xs


def _check_finite(xs):
    if not np.all(np.isfinite(xs)) or np.max(np.abs(xs)) > arm_model.BLOWUP:
        raise NumericalBlowup("rollout state magnitude exceeded bound")


def _backward(A, B, us, w_u_dt, Vx, Vxx, reg):
    N, nx, nu = B.shape
    ks = np.empty((N, nu))
    Ks = np.empty((N, nu, nx))
    expected = 0.0
    for k in range(N - 1, -1, -1):
        Ak, Bk = A[k], B[k]
        Qx = Ak.T @ Vx
        Qu = 2.0 * w_u_dt * us[k] + Bk.T @ Vx
        VxxA = Vxx @ Ak
        Qxx = Ak.T @ VxxA
        Quu = 2.0 * w_u_dt * np.eye(nu) + Bk.T @ Vxx @ Bk
        Qux = Bk.T @ VxxA
        Quu_reg = Quu + reg * np.eye(nu)
        Quu_reg = 0.5 * (Quu_reg + Quu_reg.T)
        if np.linalg.eigvalsh(Quu_reg)[0] <= 0.0:
            return None
        L = np.linalg.cholesky(Quu_reg)
        kff = -np.linalg.solve(L.T, np.linalg.solve(L, Qu))
        Kfb = -np.linalg.solve(L.T, np.linalg.solve(L, Qux))
        ks[k], Ks[k] = kff, Kfb
        expected += kff @ Qu
        Vx = Qx + Kfb.T @ Quu @ kff + Kfb.T @ Qu + Qux.T @ kff
        Vxx = Qxx + Kfb.T @ Quu @ Kfb + Kfb.T @ Qux + Qux.T @ Kfb
        Vxx = 0.5 * (Vxx + Vxx.T)
    return ks, Ks, expected


def ilqr(step, x0, u_init, w_u_dt: float, terminal: Terminal, cfg: ILQGConfig,
         h: float = FD_STEP) -> ILQRResult:
    """Minimize ``terminal(x_N) + w_u_dt * sum_k |u_k|^2`` over the control sequence.

    ``step(x, u)`` maps batched states ``(m, nx)`` and controls ``(m, nu)`` to
    next states.  Iterations stop once the relative cost decrease falls below
    ``cfg.tol_rel``, after ``cfg.max_iter`` iterations, or when regularization
    exceeds ``cfg.reg_max``.
    """
    x0 = np.asarray(x0, dtype=float)
    us = np.array(u_init, dtype=float)
    xs = _simulate(step, x0, us)
    _check_finite(xs)
    cost = float(_rollout_cost(xs, us, w_u_dt, terminal))
    history = [cost]
    alphas = np.asarray(cfg.alphas, dtype=float)
    reg = cfg.reg_init
    converged = cost == 0.0
    reason = "zero cost" if converged else ""
    it = 0
    while not converged and it < cfg.max_iter:
        it += 1
        A, B = linearize(step, xs[:-1], us, h)
        _, Vx, Vxx = terminal.fn(xs[-1])
        accepted = False
        while not accepted:
            back = _backward(A, B, us, w_u_dt, Vx, Vxx, reg)
            if back is None:
                reg *= 10.0
                if reg > cfg.reg_max:
                    break
                continue
            ks, Ks, _ = back
            # forward pass for all step sizes at once
            n_a = len(alphas)
            xn = np.empty((n_a, len(us) + 1, xs.shape[1]))
            un = np.empty((n_a,) + us.shape)
            xn[:, 0] = x0
            with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
                for k in range(len(us)):
                    un[:, k] = us[k] + alphas[:, None] * ks[k] + (xn[:, k] - xs[k]) @ Ks[k].T
                    xn[:, k + 1] = step(xn[:, k], un[:, k])
                costs = _rollout_cost(xn, un, w_u_dt, terminal)
                costs[np.max(np.abs(xn), axis=(1, 2)) > arm_model.BLOWUP] = np.inf
            ok = np.flatnonzero(np.isfinite(costs) & (costs < cost))
            if ok.size:
                j = ok[0]
                new_cost = float(costs[j])
                rel = (cost - new_cost) / cost
                xs, us, cost = xn[j], un[j], new_cost
                history.append(cost)
                reg = max(cfg.reg_min, reg / 10.0)
                accepted = True
                if rel < cfg.tol_rel:
                    converged, reason = True, "relative decrease below tolerance"
            else:
                reg *= 10.0
                if reg > cfg.reg_max:
                    break
        if not accepted:
            # no descent possible even with maximal regularization: local optimum
            converged, reason = True, "no further decrease"
            break
    if not converged:
        reason = f"max_iter={cfg.max_iter} reached"
    return ILQRResult(us, xs, history, converged, it, reason)


def arm_step(params: ArmParams, dt: float):
    def step(x, u):
        return arm_model.rk4_step(params, x, u, dt)
    return step


def arm_terminal(params: ArmParams, target, cfg: ILQGConfig) -> Terminal:
    target = np.asarray(target, dtype=float)

    def fn(x):
        x = np.asarray(x, dtype=float)
        q, qd = x[..., :2], x[..., 2:]
        err = arm_model.forward_kinematics(params, q) - target
        value = cfg.w_p * np.sum(err * err, axis=-1) + cfg.w_v * np.sum(qd * qd, axis=-1)
        if x.ndim > 1:
            return value, None, None
        J = arm_model.jacobian(params, q)
        grad = np.concatenate([2 * cfg.w_p * J.T @ err, 2 * cfg.w_v * qd])
        # Gauss-Newton Hessian keeps the terminal model convex
        hess = np.zeros((4, 4))
        hess[:2, :2] = 2 * cfg.w_p * J.T @ J
        hess[2:, 2:] = 2 * cfg.w_v * np.eye(2)
        return value, grad, hess

    return Terminal(fn)


def rollout(params: ArmParams, x0: JointState, u, cfg: ILQGConfig, target) -> Rollout:
    """Integrate the arm under ``u`` (one RK4 step per control interval) and price it."""
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise DomainError("controls must be finite")
    xs = _simulate(arm_step(params, cfg.dt), x0.as_vector(), u)
    _check_finite(xs)
    q, qd = xs[-1, :2], xs[-1, 2:]
    err = arm_model.forward_kinematics(params, q) - np.asarray(target, dtype=float)
    terms = {"endpoint": float(cfg.w_p * err @ err),
             "velocity": float(cfg.w_v * qd @ qd),
             "effort": float(cfg.w_u * cfg.dt * np.sum(u * u))}
    return Rollout(xs, sum(terms.values()), terms)


def linearize_step(params: ArmParams, x: JointState, u_k, dt: float, h: float = FD_STEP):
    A, B = linearize(arm_step(params, dt), x.as_vector()[None], np.asarray(u_k, dtype=float)[None], h)
    return A[0], B[0]


def ilqg_solve(params: ArmParams, pair, cfg: ILQGConfig | None = None, strict: bool = False) -> ILQRResult:
    """Torque controls moving the hand from ``pair.start`` to ``pair.end`` in ``horizon*dt`` s.

    Starts at rest at ``IK(pair.start)`` with zero controls.  With ``strict``
    a run that hits ``max_iter`` raises :class:`NotConverged` carrying the
    best iterate; otherwise it is returned with ``converged=False``.
    """
    cfg = cfg or ILQGConfig()
    q0 = arm_model.inverse_kinematics(params, pair.start, 1)
    arm_model.inverse_kinematics(params, pair.end, 1)
    x0 = np.concatenate([q0, np.zeros(2)])
    res = ilqr(arm_step(params, cfg.dt), x0, np.zeros((cfg.horizon, 2)), cfg.w_u * cfg.dt,
               arm_terminal(params, pair.end, cfg), cfg)
    if not res.converged:
        log.warning("iLQG did not converge: %s", res.reason)
        if strict:
            raise NotConverged(res.reason, res)
    return res
