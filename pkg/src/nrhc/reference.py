"""Desired trajectories from second-order reference filters.

Each joint runs a unit-DC-gain filter ω²/(s² + 2ξωs + ω²) driven by a
smooth step r(t). The filter state (q_ref, q̇_ref) is integrated alongside
the plant; q̈_ref follows algebraically from the filter equation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RefModelParams:
    omega: tuple[float, ...] = (10.0, 10.0)
    xi: tuple[float, ...] = (1.0, 1.0)
    amplitude: float = 1.5
    rate: float = 5.0
    # evaluate a(1 - e^{-kt})(1 + kt) instead of the bounded smooth step
    literal_form: bool = False

    def __post_init__(self):
        omega = tuple(float(w) for w in self.omega)
        xi = tuple(float(x) for x in self.xi)
        if len(omega) != len(xi):
            raise ValueError("omega and xi need one entry per joint")
        if any(w <= 0 for w in omega) or any(x <= 0 for x in xi):
            raise ValueError("omega and xi must be positive")
        if self.rate <= 0:
            raise ValueError("rate must be positive")
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "xi", xi)

    @property
    def n(self) -> int:
        return len(self.omega)


@dataclass(frozen=True)
class RefState:
    qref: np.ndarray
    qdref: np.ndarray
    qddref: np.ndarray

    @classmethod
    def at_rest(cls, n: int) -> "RefState":
        return cls(np.zeros(n), np.zeros(n), np.zeros(n))


def input_signal(t: float, p: RefModelParams) -> np.ndarray:
    """Smooth step r(t) = a(1 - e^{-kt}(1 + kt)): r(0) = ṙ(0) = 0, r(∞) = a."""
    if t < 0:
        raise ValueError("t must be >= 0")
    kt = p.rate * t
    if p.literal_form:
        value = p.amplitude * (1.0 - math.exp(-kt)) * (1.0 + kt)
    else:
        value = p.amplitude * (1.0 - math.exp(-kt) * (1.0 + kt))
    return np.full(p.n, value)


def reference_acceleration(qref, qdref, r, p: RefModelParams) -> np.ndarray:
    w = np.asarray(p.omega)
    return w * w * (np.asarray(r) - qref) - 2.0 * np.asarray(p.xi) * w * qdref


def ref_derivative(rs: RefState, r, p: RefModelParams) -> tuple[RefState, np.ndarray]:
    """Filter derivative.

    Returns the refreshed state (its ``qddref`` recomputed from the filter
    equation) together with the time derivative ``(q̇_ref, q̈_ref)`` stacked
    into one vector.
    """
    qdd = reference_acceleration(rs.qref, rs.qdref, r, p)
    fresh = RefState(rs.qref, rs.qdref, qdd)
    return fresh, np.concatenate([rs.qdref, qdd])
