"""Closed-form receding-horizon torque laws.

The tracking cost over the horizon [t, t + 2h] is collapsed with Simpson's
rule and the future errors are predicted by Taylor expansion, which makes
the optimal first control move available in closed form. No online
optimisation is performed.

Three laws are provided:

* ``nrhc_torque``: the basic law with tracking weight Q = q_w I and effort
  weight R = r_w I.
* ``computed_torque``: its R = 0 limit, written with the nominal C and G.
* ``nrhc_integral_torque``: the same construction applied to the integral of
  the position error, which removes steady-state error under constant
  disturbances.

All laws consume nominal-model quantities only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .dynamics import JointState, RobotParams, coriolis_matrix, gravity_vector, mass_matrix
from .reference import RefState

VARIANTS = ("basic", "computed_torque", "integral", "none")


@dataclass(frozen=True)
class ControllerParams:
    q_w: float = 1e7
    r_w: float = 1e-14
    h: float = 1e-3
    variant: str = "basic"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not self.q_w > 0:
            raise ValueError("q_w must be positive (Q positive definite)")
        if not self.r_w >= 0:
            raise ValueError("r_w must be >= 0 (R positive semi-definite)")
        if not self.h > 0:
            raise ValueError("h must be positive")
        if self.variant == "computed_torque" and self.r_w != 0:
            object.__setattr__(self, "r_w", 0.0)


@dataclass(frozen=True)
class TrackingError:
    e1: np.ndarray
    e2: np.ndarray
    e0: np.ndarray | None = None

    @classmethod
    def from_states(cls, s: JointState, ref: RefState, e0=None) -> "TrackingError":
        return cls(s.q - ref.qref, s.qd - ref.qdref, e0)


def _spd_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        c = scipy.linalg.cho_factor(A, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"inner matrix not positive definite: {exc}") from None
    return scipy.linalg.cho_solve(c, b, check_finite=False)


def _inner_solve(scale: float, M: np.ndarray, r_w: float, rhs: np.ndarray) -> np.ndarray:
    """Solve (scale*I + r_w*M M) x = rhs for a symmetric M."""
    if M.shape == (2, 2):
        # closed form of the 2x2 SPD solve; same result as the factorisation
        a, b, d = M[0, 0], M[0, 1], M[1, 1]
        s11 = scale + r_w * (a * a + b * b)
        s12 = r_w * b * (a + d)
        s22 = scale + r_w * (b * b + d * d)
        det = s11 * s22 - s12 * s12
        if not (det > 0 and s11 > 0):
            raise np.linalg.LinAlgError("inner matrix not positive definite")
        return np.array([(s22 * rhs[0] - s12 * rhs[1]) / det,
                         (s11 * rhs[1] - s12 * rhs[0]) / det])
    return _spd_solve(scale * np.eye(len(M)) + r_w * M @ M, rhs)


def nrhc_torque(err: TrackingError, drift, qddref, M_nom, cp: ControllerParams) -> np.ndarray:
    """u = −h² M (h⁴Q + M R M)⁻¹ Q (e1 + 2h e2 + h²(f − q̈_ref))."""
    h = cp.h
    M = np.asarray(M_nom, dtype=float)
    bracket = err.e1 + 2.0 * h * err.e2 + h * h * (np.asarray(drift) - qddref)
    # Q = q_w I; dividing through by q_w keeps the inner matrix well scaled
    x = _inner_solve(h ** 4, M, cp.r_w / cp.q_w, bracket)
    return -h * h * (M @ x)


def computed_torque(err: TrackingError, s: JointState, ref: RefState,
                    nominal: RobotParams, h: float) -> np.ndarray:
    """u = −M₀(e1 + 2h e2)/h² + C₀ q̇ + G₀ + M₀ q̈_ref."""
    if not h > 0:
        raise ValueError("h must be positive")
    M0 = mass_matrix(s.q, nominal)
    C0 = coriolis_matrix(s.q, s.qd, nominal)
    G0 = gravity_vector(s.q, nominal)
    return (-M0 @ (err.e1 + 2.0 * h * err.e2) / (h * h)
            + C0 @ s.qd + G0 + M0 @ ref.qddref)


def nrhc_integral_torque(err: TrackingError, drift, qddref, M_nom,
                         cp: ControllerParams) -> np.ndarray:
    """Integral-action law.

    u = −(2/3) h³ M₀ ((5/9) h⁶ Q + M₀ R M₀)⁻¹ Q
        × (2 e0 + 3h e1 + 2h² e2 + (5/6) h³ (f − q̈_ref))
    """
    h = cp.h
    M = np.asarray(M_nom, dtype=float)
    e0 = err.e0 if err.e0 is not None else np.zeros_like(err.e1)
    bracket = (2.0 * e0 + 3.0 * h * err.e1 + 2.0 * h * h * err.e2
               + (5.0 / 6.0) * h ** 3 * (np.asarray(drift) - qddref))
    x = _inner_solve((5.0 / 9.0) * h ** 6, M, cp.r_w / cp.q_w, bracket)
    return -(2.0 / 3.0) * h ** 3 * (M @ x)


def integral_torque_r0(err: TrackingError, drift, qddref, M_nom, h: float) -> np.ndarray:
    """The R = 0 integral law in expanded gain form.

    u = −(9/5) M₀ (4/(3h³) e0 + 2/h² e1 + 4/(3h) e2 + (5/9)(f − q̈_ref))
    """
    e0 = err.e0 if err.e0 is not None else np.zeros_like(err.e1)
    inner = (4.0 / (3.0 * h ** 3) * e0 + 2.0 / h ** 2 * err.e1
             + 4.0 / (3.0 * h) * err.e2 + (5.0 / 9.0) * (np.asarray(drift) - qddref))
    return -(9.0 / 5.0) * (np.asarray(M_nom) @ inner)


def stage_cost(e, u, q_w: float, r_w: float) -> float:
    e, u = np.asarray(e), np.asarray(u)
    return q_w * float(e @ e) + r_w * float(u @ u)


def simpson_cost(samples, q_w: float, r_w: float, h: float) -> float:
    """Simpson approximation of ∫ L over [t, t + 2h] from three (e, u) samples.

    ``samples`` holds the pairs at t, t + h and t + 2h. Only used for
    diagnostics; the torque laws never evaluate it.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    if len(samples) != 3:
        raise ValueError("Simpson's rule needs exactly three samples")
    L = [stage_cost(e, u, q_w, r_w) for e, u in samples]
    return simpson(L, h)


def simpson(values, h: float) -> float:
    """(h/3)(L0 + 4 L1 + L2)."""
    L0, L1, L2 = values
    return h / 3.0 * (L0 + 4.0 * L1 + L2)


def predict_error(err: TrackingError, drift, qddref, u, P, h: float):
    """Taylor predictions of the position error at t + h and t + 2h.

    ``P`` is the inverse inertia used to map torque to acceleration.
    """
    e, ed = np.asarray(err.e1), np.asarray(err.e2)
    e_h = e + h * ed
    e_2h = (e + 2.0 * h * ed + h * h * (np.asarray(drift) - qddref)
            + h * h * (np.asarray(P) @ np.asarray(u)))
    return e_h, e_2h
