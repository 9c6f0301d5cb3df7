"""Planar two-link, six-muscle arm moving in the horizontal plane.

Every function broadcasts over leading dimensions: ``q`` may be a single
2-vector or an ``(..., 2)`` stack of configurations.  The state vector used by
the integrators is ``x = (q1, q2, qd1, qd2)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NumericalBlowup, SingularConfiguration, Unreachable

# muscles: shoulder flexor/extensor, elbow flexor/extensor, biarticular flexor/extensor
DEFAULT_R = np.array([[4.0, -4.0, 0.0, 0.0, 2.8, -3.5],
                      [0.0, 0.0, 2.5, -2.5, 2.8, -3.5]])
DEFAULT_B = np.array([[0.05, 0.025],
                      [0.025, 0.05]])

MUSCLE_NAMES = ("shoulder_flexor", "shoulder_extensor", "elbow_flexor",
                "elbow_extensor", "biarticular_flexor", "biarticular_extensor")

SINGULAR_DET = 1e-8
BLOWUP = 1e6


@dataclass(frozen=True)
class ArmParams:
    l1: float = 0.30
    l2: float = 0.33
    m1: float = 1.4
    m2: float = 1.0
    I1: float = 0.025
    I2: float = 0.045
    s1: float = 0.11
    s2: float = 0.16
    B: np.ndarray = field(default_factory=lambda: DEFAULT_B.copy())
    R: np.ndarray = field(default_factory=lambda: DEFAULT_R.copy())

    def __post_init__(self):
        object.__setattr__(self, "B", np.array(self.B, dtype=float).reshape(2, 2))
        object.__setattr__(self, "R", np.array(self.R, dtype=float).reshape(2, 6))

    def problems(self) -> list[str]:
        """Invariant violations, empty when the parameters are usable."""
        out = []
        for name in ("l1", "l2", "m1", "m2", "I1", "I2", "s1", "s2"):
            if not getattr(self, name) > 0:
                out.append(f"arm.{name} must be > 0 (got {getattr(self, name)})")
        if self.s1 > self.l1:
            out.append("arm.s1 must not exceed arm.l1")
        if self.s2 > self.l2:
            out.append("arm.s2 must not exceed arm.l2")
        if not np.allclose(self.B, self.B.T):
            out.append("arm.B must be symmetric")
        elif np.linalg.eigvalsh(self.B).min() < -1e-12:
            out.append("arm.B must be positive semidefinite")
        if not np.all(np.isfinite(self.R)) or np.linalg.matrix_rank(self.R) < 2:
            out.append("arm.R must have full row rank 2")
        return out

    def inertia_constants(self):
        a1 = self.I1 + self.I2 + self.m2 * self.l1 ** 2
        a2 = self.m2 * self.l1 * self.s2
        a3 = self.I2
        return a1, a2, a3

    def to_dict(self) -> dict:
        return {"l1": self.l1, "l2": self.l2, "m1": self.m1, "m2": self.m2,
                "I1": self.I1, "I2": self.I2, "s1": self.s1, "s2": self.s2,
                "B": self.B.tolist(), "R": self.R.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ArmParams":
        return cls(**d)


@dataclass
class JointState:
    q: np.ndarray
    qd: np.ndarray

    @classmethod
    def at_rest(cls, q) -> "JointState":
        q = np.asarray(q, dtype=float)
        return cls(q.copy(), np.zeros_like(q))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.qd], axis=-1)


@dataclass
class HandKinematics:
    p: np.ndarray
    v: np.ndarray
    a: np.ndarray


def forward_kinematics(params: ArmParams, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    q1, q12 = q[..., 0], q[..., 0] + q[..., 1]
    x = params.l1 * np.cos(q1) + params.l2 * np.cos(q12)
    y = params.l1 * np.sin(q1) + params.l2 * np.sin(q12)
    return np.stack([x, y], axis=-1)


def inverse_kinematics(params: ArmParams, p, elbow_sign: int = 1) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    l1, l2 = params.l1, params.l2
    r2 = np.sum(p * p, axis=-1)
    r = np.sqrt(r2)
    if np.any(r > l1 + l2) or np.any(r < abs(l1 - l2)) or not np.all(np.isfinite(p)):
        raise Unreachable(f"hand position {p.tolist()} is outside the workspace")
    c2 = np.clip((r2 - l1 ** 2 - l2 ** 2) / (2 * l1 * l2), -1.0, 1.0)
    q2 = np.sign(elbow_sign) * np.arccos(c2)
    q1 = np.arctan2(p[..., 1], p[..., 0]) - np.arctan2(l2 * np.sin(q2), l1 + l2 * np.cos(q2))
    return np.stack([q1, q2], axis=-1)


def jacobian(params: ArmParams, q) -> np.ndarray:
    """Hand Jacobian d(FK)/dq, shape ``(..., 2, 2)``."""
    q = np.asarray(q, dtype=float)
    q1, q12 = q[..., 0], q[..., 0] + q[..., 1]
    s1, c1, s12, c12 = np.sin(q1), np.cos(q1), np.sin(q12), np.cos(q12)
    l1, l2 = params.l1, params.l2
    J = np.empty(q.shape[:-1] + (2, 2))
    J[..., 0, 0] = -l1 * s1 - l2 * s12
    J[..., 0, 1] = -l2 * s12
    J[..., 1, 0] = l1 * c1 + l2 * c12
    J[..., 1, 1] = l2 * c12
    return J


def _solve2(M, b):
    # closed-form 2x2 solve, broadcasting over leading dims
    det = M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]
    x0 = (M[..., 1, 1] * b[..., 0] - M[..., 0, 1] * b[..., 1]) / det
    x1 = (M[..., 0, 0] * b[..., 1] - M[..., 1, 0] * b[..., 0]) / det
    return np.stack([x0, x1], axis=-1)


def hand_to_joint_derivatives(params: ArmParams, q, v, a):
    """Map hand velocity/acceleration to joint velocity/acceleration at ``q``."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    J = jacobian(params, q)
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    if np.any(np.abs(det) <= SINGULAR_DET):
        raise SingularConfiguration(f"|det J| <= {SINGULAR_DET} at q={q.tolist()}")
    qd = _solve2(J, v)
    # Jdot @ qd, written out
    q1, q12 = q[..., 0], q[..., 0] + q[..., 1]
    w1, w12 = qd[..., 0], qd[..., 0] + qd[..., 1]
    l1, l2 = params.l1, params.l2
    jdq = np.stack([-l1 * np.cos(q1) * w1 ** 2 - l2 * np.cos(q12) * w12 ** 2,
                    -l1 * np.sin(q1) * w1 ** 2 - l2 * np.sin(q12) * w12 ** 2], axis=-1)
    qdd = _solve2(J, a - jdq)
    return qd, qdd


def mass_matrix(params: ArmParams, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    a1, a2, a3 = params.inertia_constants()
    c2 = np.cos(q[..., 1])
    H = np.empty(q.shape[:-1] + (2, 2))
    H[..., 0, 0] = a1 + 2 * a2 * c2
    H[..., 0, 1] = a3 + a2 * c2
    H[..., 1, 0] = a3 + a2 * c2
    H[..., 1, 1] = a3
    return H


def _bias_torque(params: ArmParams, q, qd):
    # Coriolis/centripetal plus joint viscosity
    _, a2, _ = params.inertia_constants()
    s2 = a2 * np.sin(q[..., 1])
    c = np.stack([-qd[..., 1] * (2 * qd[..., 0] + qd[..., 1]) * s2,
                  qd[..., 0] ** 2 * s2], axis=-1)
    return c + qd @ params.B.T


def inverse_dynamics(params: ArmParams, q, qd, qdd) -> np.ndarray:
    q, qd, qdd = (np.asarray(v, dtype=float) for v in (q, qd, qdd))
    H = mass_matrix(params, q)
    return np.einsum("...ij,...j->...i", H, qdd) + _bias_torque(params, q, qd)


def forward_dynamics(params: ArmParams, q, qd, tau) -> np.ndarray:
    q, qd, tau = (np.asarray(v, dtype=float) for v in (q, qd, tau))
    return _solve2(mass_matrix(params, q), tau - _bias_torque(params, q, qd))


def kinetic_energy(params: ArmParams, q, qd):
    H = mass_matrix(params, q)
    qd = np.asarray(qd, dtype=float)
    return 0.5 * np.einsum("...i,...ij,...j->...", qd, H, qd)


def activation_to_torque(params: ArmParams, act) -> np.ndarray:
    act = np.asarray(act, dtype=float)
    if np.any(act < -1e-9) or np.any(act > 1 + 1e-9):
        raise DomainError("activations must lie in [0, 1]")
    return act @ params.R.T


def state_derivative(params: ArmParams, x, tau):
    x = np.asarray(x, dtype=float)
    q, qd = x[..., :2], x[..., 2:]
    return np.concatenate([qd, forward_dynamics(params, q, qd, tau)], axis=-1)


def rk4_step(params: ArmParams, x, tau, dt: float):
    k1 = state_derivative(params, x, tau)
    k2 = state_derivative(params, x + 0.5 * dt * k1, tau)
    k3 = state_derivative(params, x + 0.5 * dt * k2, tau)
    k4 = state_derivative(params, x + dt * k3, tau)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_torques(params: ArmParams, x0, torques, dt_ctrl: float, dt_int: float):
    """Zero-order-hold torques on the control grid, RK4 at ``dt_int``.

    ``torques`` has shape ``(..., n_steps, 2)``; returns states ``(..., n_steps + 1, 4)``
    sampled on the control grid, starting with ``x0``.
    """
    substeps = int(round(dt_ctrl / dt_int))
    if substeps < 1 or abs(substeps * dt_int - dt_ctrl) > 1e-12:
        raise DomainError(f"dt_int={dt_int} must divide dt_ctrl={dt_ctrl}")
    torques = np.asarray(torques, dtype=float)
    n = torques.shape[-2]
    x = np.broadcast_to(np.asarray(x0, dtype=float), torques.shape[:-2] + (4,)).copy()
    states = np.empty(torques.shape[:-2] + (n + 1, 4))
    states[..., 0, :] = x
    for k in range(n):
        tau = torques[..., k, :]
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(substeps):
                x = rk4_step(params, x, tau, dt_int)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > BLOWUP:
            raise NumericalBlowup(f"state magnitude exceeded {BLOWUP:g} at control step {k}")
        states[..., k + 1, :] = x
    return states


def simulate_activations(params: ArmParams, q0: JointState, traj, dt_ctrl: float = 0.02,
                         dt_int: float = 0.001):
    """Drive the arm with an activation trajectory.

    Parameters
    ----------
    q0 : JointState
        Initial state; ``q``/``qd`` may carry a leading batch dimension.
    traj : array, shape (..., n_steps, 6)
        Activations held constant over each control step.

    Returns
    -------
    states : array, shape (..., n_steps + 1, 4)
        Joint states at the control instants, including ``t = 0``.
    final_hand : array, shape (..., 2)
    """
    traj = np.asarray(traj, dtype=float)
    torques = activation_to_torque(params, traj)
    states = integrate_torques(params, q0.as_vector(), torques, dt_ctrl, dt_int)
    return states, forward_kinematics(params, states[..., -1, :2])
