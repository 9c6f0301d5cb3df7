"""Minimum-jerk point-to-point hand trajectories."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arm import HandKinematics
from .errors import DomainError


@dataclass(frozen=True)
class MinJerkSpec:
    p0: tuple
    pf: tuple
    T: float = 1.0
    n: int = 50

    def __post_init__(self):
        if not self.T > 0:
            raise DomainError("duration T must be positive")
        if self.n < 2:
            raise DomainError("sample count n must be at least 2")


def profile(s):
    """Quintic time-scaling and its first two derivatives with respect to ``s``."""
    s = np.asarray(s, dtype=float)
    s2 = s * s
    sigma = s2 * s * (10 - 15 * s + 6 * s2)
    dsigma = 30 * s2 * (1 - 2 * s + s2)
    ddsigma = 60 * s * (1 - 3 * s + 2 * s2)
    return sigma, dsigma, ddsigma


def _evaluate(spec: MinJerkSpec, t):
    p0 = np.asarray(spec.p0, dtype=float)
    d = np.asarray(spec.pf, dtype=float) - p0
    sigma, dsigma, ddsigma = profile(np.asarray(t, dtype=float) / spec.T)
    p = p0 + sigma[..., None] * d
    v = dsigma[..., None] * d / spec.T
    a = ddsigma[..., None] * d / spec.T ** 2
    return p, v, a


def minjerk_point(spec: MinJerkSpec, t: float) -> HandKinematics:
    if not 0.0 <= t <= spec.T:
        raise DomainError(f"t={t} outside [0, {spec.T}]")
    p, v, a = _evaluate(spec, t)
    return HandKinematics(p, v, a)


def sample_times(spec: MinJerkSpec) -> np.ndarray:
    # t=0 is the known rest state, so the grid starts one step in
    return spec.T * np.arange(1, spec.n + 1) / spec.n


def sample_minjerk(spec: MinJerkSpec) -> list[HandKinematics]:
    p, v, a = sample_minjerk_arrays(spec)
    return [HandKinematics(p[k], v[k], a[k]) for k in range(spec.n)]


def sample_minjerk_arrays(spec: MinJerkSpec):
    """Same samples as :func:`sample_minjerk`, as ``(n, 2)`` arrays ``p, v, a``."""
    t = sample_times(spec)
    t[-1] = spec.T
    return _evaluate(spec, t)
