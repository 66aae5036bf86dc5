"""High-gain velocity observer driven by joint position measurements.

The state is ordered per joint, ẑ = (q̂₁, q̇̂₁, q̂₂, q̇̂₂, ...). Each joint
is a double integrator with output injection gain K = Γ⁻¹(α) V, where V
places the poles of A − VC and Γ(α) = diag(α, α²) speeds them up by 1/α.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import JointState, Model, forward_dynamics, mass_matrix


@dataclass(frozen=True)
class ObserverParams:
    alpha: float = 0.01
    poles: tuple[float, float] = (-0.4, -0.8)
    # "design": poles are assigned to A - VC and end up scaled by 1/alpha.
    # "effective": poles are those of the final error matrix A - KC.
    pole_mode: str = "design"
    # evaluate M(q)⁻¹u at the estimate instead of the measured positions
    p_on_estimate: bool = False
    # saturate the estimate at ± this value; 0 disables
    clamp: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        p = tuple(float(x) for x in self.poles)
        if len(p) != 2:
            raise ValueError("exactly two poles per joint are assigned")
        if any(not x < 0 for x in p):
            raise ValueError(f"observer poles must be strictly negative, got {p}")
        if self.pole_mode not in ("design", "effective"):
            raise ValueError("pole_mode must be 'design' or 'effective'")
        object.__setattr__(self, "poles", p)


@dataclass(frozen=True)
class ObserverState:
    zhat: np.ndarray

    @classmethod
    def from_estimates(cls, qhat, qdhat) -> "ObserverState":
        return cls(interleave(qhat, qdhat))

    @property
    def qhat(self) -> np.ndarray:
        return self.zhat[0::2]

    @property
    def qdhat(self) -> np.ndarray:
        return self.zhat[1::2]


def interleave(q, qd) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    z = np.empty(2 * len(q))
    z[0::2] = q
    z[1::2] = qd
    return z


def observer_gain(op: ObserverParams) -> np.ndarray:
    """Per-joint gain (K₁, K₂)."""
    p1, p2 = op.poles
    if op.pole_mode == "effective":
        return np.array([-(p1 + p2), p1 * p2])
    # characteristic polynomial of A - VC is λ² + v1 λ + v2
    v1, v2 = -(p1 + p2), p1 * p2
    return np.array([v1 / op.alpha, v2 / op.alpha ** 2])


def observer_derivative(os: ObserverState, y, u, nominal: Model,
                        op: ObserverParams) -> np.ndarray:
    """ẑ̇ = Aẑ + H f(ẑ) + H P(y) u + K(y − ŷ)."""
    y = np.asarray(y, dtype=float)
    zhat = os.zhat
    if op.clamp > 0:
        zhat = np.clip(zhat, -op.clamp, op.clamp)
    qhat, qdhat = zhat[0::2], zhat[1::2]
    est = JointState(qhat, qdhat)
    u = np.asarray(u, dtype=float)
    if op.p_on_estimate:
        acc = forward_dynamics(est, u, nominal)
    else:
        f_hat = forward_dynamics(est, np.zeros_like(u), nominal)
        acc = f_hat + np.linalg.solve(mass_matrix(y, nominal), u)
    k1, k2 = observer_gain(op)
    innov = y - qhat
    dz = np.empty_like(zhat)
    dz[0::2] = qdhat + k1 * innov
    dz[1::2] = acc + k2 * innov
    return dz


def error_matrix(op: ObserverParams) -> np.ndarray:
    """Per-joint estimation error matrix [[−K₁, 1], [−K₂, 0]]."""
    k1, k2 = observer_gain(op)
    return np.array([[-k1, 1.0], [-k2, 0.0]])
