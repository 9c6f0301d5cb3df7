"""Static optimization: least-norm bounded activations for a target torque.

Solves, per time step,

    minimize ||a||^2  subject to  R a = tau,  0 <= a <= 1

with an active-set iteration on the box.  Each candidate face (every muscle
free, pinned at 0, or pinned at 1) is an equality-constrained least-norm
problem with a closed-form solution; the face is accepted once the KKT sign
conditions hold.  Faces are proposed from the two torque multipliers, which
are improved by damped Newton ascent on the dual.
"""
from __future__ import annotations

import itertools

import numpy as np

from .errors import Infeasible, InfeasibleStep

LOWER, FREE, UPPER = 0, 1, 2

FEAS_TOL = 1e-10
KKT_TOL = 1e-9
MAX_FACE_VISITS = 2 ** 6


def achievable(R, tau, tol: float = FEAS_TOL) -> bool:
    """True when ``tau`` lies in the zonotope ``R [0,1]^n``.

    The facets of a planar zonotope are normal to its generators, so checking
    the support function along each generator's perpendicular is exact.
    """
    R = np.asarray(R, dtype=float)
    tau = np.asarray(tau, dtype=float)
    scale = 1.0 + np.abs(R).sum()
    norms = np.hypot(R[0], R[1])
    keep = norms > 0
    normals = np.stack([-R[1, keep], R[0, keep]], axis=1) / norms[keep, None]
    proj = normals @ R
    hi = np.where(proj > 0, proj, 0.0).sum(axis=1)
    lo = np.where(proj < 0, proj, 0.0).sum(axis=1)
    t = normals @ tau
    return bool(np.all(t <= hi + tol * scale) and np.all(t >= lo - tol * scale))


def _face_solution(R, tau, pattern):
    """Least-norm solution on one face; returns ``(a, lam)`` or ``None``."""
    free = pattern == FREE
    a = (pattern == UPPER).astype(float)
    rhs = tau - R @ a
    Rf = R[:, free]
    if not free.any():
        return (a, np.zeros(2)) if np.all(np.abs(rhs) <= FEAS_TOL * (1 + np.abs(tau).max())) else None
    G = Rf @ Rf.T
    det = G[0, 0] * G[1, 1] - G[0, 1] * G[1, 0]
    if det > 1e-12 * (G[0, 0] + G[1, 1]) ** 2:
        lam = 2.0 * np.array([G[1, 1] * rhs[0] - G[0, 1] * rhs[1],
                              G[0, 0] * rhs[1] - G[1, 0] * rhs[0]]) / det
        a[free] = Rf.T @ lam / 2.0
        return a, lam
    # rank-deficient face: least-norm point, multipliers only up to the null space
    af, *_ = np.linalg.lstsq(Rf, rhs, rcond=None)
    if np.linalg.norm(Rf @ af - rhs) > FEAS_TOL * (1 + np.abs(tau).max()):
        return None
    a[free] = af
    lam, *_ = np.linalg.lstsq(Rf.T, 2.0 * af, rcond=None)
    return a, lam


def _kkt_ok(R, a, lam, pattern, tol=KKT_TOL) -> bool:
    s = R.T @ lam
    free = pattern == FREE
    if np.any(a[free] < -tol) or np.any(a[free] > 1 + tol):
        return False
    if np.any(np.abs(2 * a[free] - s[free]) > tol * (1 + np.abs(s[free]))):
        return False
    if np.any(s[pattern == LOWER] > tol):
        return False
    if np.any(s[pattern == UPPER] < 2 - tol):
        return False
    return True


def _pattern_from_dual(s):
    pattern = np.full(s.shape, FREE)
    pattern[s <= 0] = LOWER
    pattern[s >= 2] = UPPER
    return pattern


def _dual_value(R, tau, lam):
    s = R.T @ lam
    phi = np.where(s <= 0, 0.0, np.where(s >= 2, 1.0 - s, -0.25 * s * s))
    return lam @ tau + phi.sum()


def _enumerate_faces(R, tau):
    best, best_val = None, np.inf
    for combo in itertools.product((LOWER, FREE, UPPER), repeat=R.shape[1]):
        pattern = np.array(combo)
        sol = _face_solution(R, tau, pattern)
        if sol is None:
            continue
        a = sol[0]
        if np.any(a < -FEAS_TOL) or np.any(a > 1 + FEAS_TOL):
            continue
        val = a @ a
        if val < best_val:
            best, best_val = a, val
    return best


def solve_activation_qp(R, tau) -> np.ndarray:
    """Least-norm activations in ``[0, 1]`` reproducing ``tau`` exactly.

    Raises
    ------
    Infeasible
        If no admissible activation vector produces ``tau``.
    """
    R = np.asarray(R, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if not achievable(R, tau):
        raise Infeasible(f"torque {tau.tolist()} is outside the achievable set")

    # pseudoinverse seed: exact when the box is inactive
    lam = 2.0 * np.linalg.solve(R @ R.T, tau)
    mu = 1e-10 * (1.0 + np.sum(R * R))
    visited = set()
    for _ in range(MAX_FACE_VISITS):
        s = R.T @ lam
        pattern = _pattern_from_dual(s)
        key = pattern.tobytes()
        if key not in visited:
            visited.add(key)
            sol = _face_solution(R, tau, pattern)
            if sol is not None and _kkt_ok(R, sol[0], sol[1], pattern):
                return np.clip(sol[0], 0.0, 1.0)
        # damped Newton ascent on the concave dual
        a_lam = np.clip(s / 2.0, 0.0, 1.0)
        grad = tau - R @ a_lam
        Rf = R[:, pattern == FREE]
        step = np.linalg.solve(0.5 * Rf @ Rf.T + mu * np.eye(2), grad)
        g0 = _dual_value(R, tau, lam)
        slope = grad @ step
        t = 1.0
        for _ in range(60):
            if _dual_value(R, tau, lam + t * step) >= g0 + 1e-4 * t * slope:
                break
            t *= 0.5
        lam = lam + t * step

    # degenerate cases (e.g. tau on the zonotope boundary, where the dual
    # optimum is at infinity): exhaust the 3^n faces
    a = _enumerate_faces(R, tau)
    if a is None:
        raise Infeasible(f"torque {tau.tolist()} is outside the achievable set")
    return np.clip(a, 0.0, 1.0)


def torques_to_activations(R, torques) -> np.ndarray:
    """Per-step static optimization over a ``(n_steps, 2)`` torque trajectory."""
    torques = np.asarray(torques, dtype=float)
    out = np.empty((torques.shape[0], np.shape(R)[1]))
    for k, tau in enumerate(torques):
        try:
            out[k] = solve_activation_qp(R, tau)
        except Infeasible as exc:
            raise InfeasibleStep(k) from exc
    return out
