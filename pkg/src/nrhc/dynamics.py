"""Rigid-link manipulator model: inertia, Coriolis, gravity, friction.

The built-in model is the planar two-link arm moving in a vertical plane,
with joint angles measured from the horizontal:

    M(q) q̈ + C(q, q̇) q̇ + G(q) + F(q̇) = u

Every function here is pure. The same evaluators serve the true plant and
the nominal model a controller uses; the two are just different
``RobotParams`` values. Arms with more links plug in through ``CustomArm``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

GRAVITY = 9.81
# largest condition number of M(q) accepted before declaring a parameter fault
MAX_CONDITION = 1e12


class ParameterError(ValueError):
    """Physical parameters that cannot describe a real arm."""


@dataclass(frozen=True)
class Link:
    mass: float
    length: float
    com: float
    inertia: float

    def __post_init__(self):
        for name in ("mass", "length", "inertia"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ParameterError(f"{name} must be positive, got {v}")
        if not (math.isfinite(self.com) and 0 <= self.com <= self.length):
            raise ParameterError(
                f"com must lie in [0, length={self.length}], got {self.com}")


@dataclass(frozen=True)
class RobotParams:
    """Physical constants of a serial arm.

    ``motor_inertia`` is the constant reflected actuator inertia (gear ratio
    squared times rotor inertia) added to the diagonal of the link inertia.
    """

    links: tuple[Link, ...]
    gravity: float = GRAVITY
    motor_inertia: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        if len(self.links) == 0:
            raise ParameterError("at least one link is required")
        J = tuple(float(j) for j in self.motor_inertia) or (0.0,) * len(self.links)
        if len(J) != len(self.links):
            raise ParameterError(
                f"motor_inertia has {len(J)} entries for {len(self.links)} links")
        if any(not (math.isfinite(j) and j >= 0) for j in J):
            raise ParameterError(f"motor_inertia entries must be >= 0, got {J}")
        object.__setattr__(self, "motor_inertia", J)
        if not math.isfinite(self.gravity):
            raise ParameterError("gravity must be finite")

    @property
    def n(self) -> int:
        return len(self.links)

    @classmethod
    def two_link(cls, m1, l1, lc1, I1, m2, l2, lc2, I2, gravity=GRAVITY,
                 motor_inertia=()) -> "RobotParams":
        return cls((Link(m1, l1, lc1, I1), Link(m2, l2, lc2, I2)), gravity,
                   motor_inertia)

    @classmethod
    def benchmark_arm(cls) -> "RobotParams":
        """The classic two-link benchmark arm (10 kg / 5 kg, 1 m links)."""
        return cls.two_link(10.0, 1.0, 0.5, 10.0 / 12.0,
                            5.0, 1.0, 0.5, 5.0 / 12.0)


@dataclass(frozen=True)
class CustomArm:
    """User-supplied model for arms other than the built-in two-link one.

    The callables must honour the same contracts as the built-in evaluators:
    ``mass(q)`` symmetric positive definite, ``coriolis(q, qd) @ qd`` the
    velocity torques, ``gravity(q)`` the gradient of ``potential(q)``.
    """

    n: int
    mass: Callable[[np.ndarray], np.ndarray]
    coriolis: Callable[[np.ndarray, np.ndarray], np.ndarray]
    gravity: Callable[[np.ndarray], np.ndarray]
    potential: Callable[[np.ndarray], float] | None = None


@dataclass(frozen=True)
class JointState:
    q: np.ndarray
    qd: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(-1)
        qd = np.asarray(self.qd, dtype=float).reshape(-1)
        if q.shape != qd.shape:
            raise ValueError(f"q has shape {q.shape} but qd has {qd.shape}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            raise ValueError("joint state must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qd", qd)

    @classmethod
    def unchecked(cls, q: np.ndarray, qd: np.ndarray) -> "JointState":
        """Skip validation; for hot loops that already hold float vectors."""
        s = object.__new__(cls)
        object.__setattr__(s, "q", q)
        object.__setattr__(s, "qd", qd)
        return s


@dataclass(frozen=True)
class FrictionParams:
    """Joint friction F = fs*q̇ + fv*tanh(q̇/eps).

    ``fs`` multiplies velocity (viscous), ``fv`` is the Coulomb level. With
    ``on_position`` the first term uses q instead of q̇.
    """

    fs: tuple[float, ...]
    fv: tuple[float, ...]
    eps: float = 1e-3
    on_position: bool = False

    def __post_init__(self):
        fs = tuple(float(v) for v in self.fs)
        fv = tuple(float(v) for v in self.fv)
        if len(fs) != len(fv):
            raise ParameterError("fs and fv must have the same length")
        if any(not (math.isfinite(v) and v >= 0) for v in fs + fv):
            raise ParameterError("friction gains must be >= 0")
        if not (math.isfinite(self.eps) and self.eps > 0):
            raise ParameterError(f"eps must be positive, got {self.eps}")
        object.__setattr__(self, "fs", fs)
        object.__setattr__(self, "fv", fv)


@dataclass(frozen=True)
class PayloadPerturbation:
    """Load carried by the last link, seen as changes of its parameters."""

    dm2: float = 0.0
    dlc2: float = 0.0
    dI2: float = 0.0


Model = RobotParams | CustomArm


def _vec(x, name="q") -> np.ndarray:
    a = np.asarray(x, dtype=float).reshape(-1)
    if not np.isfinite(a).all():
        raise ValueError(f"{name} must be finite, got {a}")
    return a


def _check_two_link(p: RobotParams, q: np.ndarray):
    if p.n != 2:
        raise NotImplementedError(
            "closed-form model covers two links; use CustomArm for n != 2")
    if q.shape != (2,):
        raise ValueError(f"expected 2 joint values, got shape {q.shape}")


def _mass_entries(p: RobotParams, q2: float):
    a, b = p.links
    k = b.mass * a.length * b.com
    c = math.cos(q2)
    m22 = b.inertia + b.mass * b.com ** 2
    m12 = m22 + k * c
    m11 = (a.mass * a.com ** 2 + b.mass * a.length ** 2 + a.inertia
           + m22 + 2.0 * k * c)
    J = p.motor_inertia
    return m11 + J[0], m12, m22 + J[1]


def _velocity_torque(p: RobotParams, q2, qd1, qd2):
    # C(q, q̇) q̇ written out
    k = p.links[1].mass * p.links[0].length * p.links[1].com * math.sin(q2)
    return -k * qd2 * (2.0 * qd1 + qd2), k * qd1 * qd1


def _gravity_entries(p: RobotParams, q1, q2):
    a, b = p.links
    g2 = b.mass * b.com * p.gravity * math.cos(q1 + q2)
    return (a.mass * a.com + b.mass * a.length) * p.gravity * math.cos(q1) + g2, g2


def _solve_spd2(m11, m12, m22, r1, r2):
    """Solve a 2x2 SPD system by Cramer's rule after a condition check."""
    det = m11 * m22 - m12 * m12
    tr = m11 + m22
    disc = math.sqrt(max(0.25 * (m11 - m22) ** 2 + m12 * m12, 0.0))
    lo, hi = 0.5 * tr - disc, 0.5 * tr + disc
    if not (det > 0 and lo > 0) or hi > MAX_CONDITION * lo:
        raise ParameterError(
            f"mass matrix singular or ill-conditioned (eigenvalues {lo:.3g}, {hi:.3g})")
    return (m22 * r1 - m12 * r2) / det, (m11 * r2 - m12 * r1) / det


def mass_matrix(q, p: Model) -> np.ndarray:
    q = _vec(q)
    if isinstance(p, CustomArm):
        M = np.asarray(p.mass(q), dtype=float)
        if not is_spd(M):
            raise ParameterError("user-supplied mass matrix is not symmetric positive definite")
        return M
    _check_two_link(p, q)
    m11, m12, m22 = _mass_entries(p, q[1])
    if not (m11 > 0 and m11 * m22 - m12 * m12 > 0):
        raise ParameterError("mass matrix is not positive definite")
    return np.array([[m11, m12], [m12, m22]])


def coriolis_matrix(q, qd, p: Model) -> np.ndarray:
    q, qd = _vec(q), _vec(qd, "qd")
    if isinstance(p, CustomArm):
        return np.asarray(p.coriolis(q, qd), dtype=float)
    _check_two_link(p, q)
    k = p.links[1].mass * p.links[0].length * p.links[1].com * math.sin(q[1])
    return np.array([[-qd[1] * k, -(qd[0] + qd[1]) * k],
                     [qd[0] * k, 0.0]])


def gravity_vector(q, p: Model) -> np.ndarray:
    q = _vec(q)
    if isinstance(p, CustomArm):
        return np.asarray(p.gravity(q), dtype=float)
    _check_two_link(p, q)
    return np.array(_gravity_entries(p, q[0], q[1]))


def potential_energy(q, p: Model) -> float:
    """Gravitational potential with U(0, 0) = 0; its gradient is G(q)."""
    q = _vec(q)
    if isinstance(p, CustomArm):
        if p.potential is None:
            raise NotImplementedError("CustomArm has no potential energy evaluator")
        return float(p.potential(q))
    _check_two_link(p, q)
    a, b = p.links
    return p.gravity * ((a.mass * a.com + b.mass * a.length) * math.sin(q[0])
                        + b.mass * b.com * math.sin(q[0] + q[1]))


def kinetic_energy(s: JointState, p: Model) -> float:
    return 0.5 * float(s.qd @ mass_matrix(s.q, p) @ s.qd)


def friction_torque(qd, f: FrictionParams | None, q=None) -> np.ndarray:
    qd = _vec(qd, "qd")
    if f is None:
        return np.zeros_like(qd)
    first = qd if not f.on_position else _vec(q)
    return np.asarray(f.fs) * first + np.asarray(f.fv) * np.tanh(qd / f.eps)


def is_spd(M: np.ndarray, tol: float = 0.0) -> bool:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or not np.all(np.isfinite(M)):
        return False
    if not np.allclose(M, M.T, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(M).max())):
        return False
    return bool(np.linalg.eigvalsh(0.5 * (M + M.T)).min() > tol)


def solve_mass(M: np.ndarray, rhs) -> np.ndarray:
    """Solve M x = rhs for an inertia matrix, refusing ill-conditioned M."""
    if M.shape == (2, 2):
        return np.array(_solve_spd2(M[0, 0], M[0, 1], M[1, 1], rhs[0], rhs[1]))
    if np.linalg.cond(M) > MAX_CONDITION:
        raise ParameterError("mass matrix ill-conditioned")
    return np.linalg.solve(M, rhs)


def bias_torque(q, qd, p: Model) -> np.ndarray:
    """C(q, q̇) q̇ + G(q)."""
    if isinstance(p, CustomArm):
        q, qd = _vec(q), _vec(qd, "qd")
        return coriolis_matrix(q, qd, p) @ qd + gravity_vector(q, p)
    q1, q2 = q
    qd1, qd2 = qd
    c1, c2 = _velocity_torque(p, q2, qd1, qd2)
    g1, g2 = _gravity_entries(p, q1, q2)
    return np.array([c1 + g1, c2 + g2])


def forward_dynamics(s: JointState, u, p: Model,
                     f: FrictionParams | None = None) -> np.ndarray:
    """Joint accelerations q̈ = M⁻¹(u − C q̇ − G − F)."""
    u = _vec(u, "u")
    if isinstance(p, CustomArm):
        rhs = u - bias_torque(s.q, s.qd, p) - friction_torque(s.qd, f, s.q)
        return solve_mass(mass_matrix(s.q, p), rhs)
    _check_two_link(p, s.q)
    q1, q2 = s.q
    qd1, qd2 = s.qd
    c1, c2 = _velocity_torque(p, q2, qd1, qd2)
    g1, g2 = _gravity_entries(p, q1, q2)
    r1, r2 = u[0] - c1 - g1, u[1] - c2 - g2
    if f is not None:
        fr = friction_torque(s.qd, f, s.q)
        r1, r2 = r1 - fr[0], r2 - fr[1]
    return np.array(_solve_spd2(*_mass_entries(p, q2), r1, r2))


def drift_term(s: JointState, p: Model) -> np.ndarray:
    """Unforced, frictionless acceleration −M⁻¹(C q̇ + G)."""
    return forward_dynamics(s, np.zeros_like(s.q), p, None)


def apply_payload(p: RobotParams, d: PayloadPerturbation) -> RobotParams:
    """True-plant parameters for a load carried by the last link."""
    last = p.links[-1]
    try:
        new_last = Link(last.mass + d.dm2, last.length, last.com + d.dlc2,
                        last.inertia + d.dI2)
    except ParameterError as exc:
        raise ParameterError(f"payload {d} gives invalid last link: {exc}") from None
    return replace(p, links=p.links[:-1] + (new_last,))


def mass_bounds(p: Model, samples: int = 1000, seed: int = 0) -> tuple[float, float]:
    """Extreme eigenvalues of M(q) over sampled configurations."""
    rng = np.random.default_rng(seed)
    n = p.n
    lo, hi = math.inf, 0.0
    for q in rng.uniform(-math.pi, math.pi, size=(samples, n)):
        w = np.linalg.eigvalsh(mass_matrix(q, p))
        lo, hi = min(lo, w[0]), max(hi, w[-1])
    return lo, hi
