"""Fixed-step closed-loop simulation and run metrics.

Plant, reference filters, the integral of the tracking error and the
observer are stacked into one state vector and advanced together by
classical RK4, so every component shares one clock. The control law is
re-evaluated inside every derivative call (continuous-time control) unless
a zero-order-hold sample period is configured.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .control import (ControllerParams, TrackingError, computed_torque,
                      nrhc_integral_torque, nrhc_torque)
from .dynamics import (FrictionParams, JointState, RobotParams,
                       _solve_spd2, bias_torque,
                       forward_dynamics, kinetic_energy, mass_matrix,
                       potential_energy, solve_mass)
from .observer import observer_gain
from .observer import ObserverParams, ObserverState, interleave, observer_derivative
from .reference import RefModelParams, RefState, input_signal

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """The closed loop blew up; carries the time and the partial log."""

    def __init__(self, t: float, reason: str, partial: "TrajectoryLog | None" = None):
        super().__init__(f"diverged at t = {t:.6g} s: {reason}")
        self.t = t
        self.reason = reason
        self.partial = partial

    def __reduce__(self):
        # keep the error picklable so parallel runs can return it
        return (type(self), (self.t, self.reason, self.partial))


def rk4_step(derivative: Callable[[float, np.ndarray], np.ndarray],
             state: np.ndarray, t: float, dt: float) -> np.ndarray:
    k1 = derivative(t, state)
    if not np.isfinite(k1).all():
        raise DivergenceError(t, "non-finite derivative")
    k2 = derivative(t + 0.5 * dt, state + 0.5 * dt * k1)
    k3 = derivative(t + 0.5 * dt, state + 0.5 * dt * k2)
    k4 = derivative(t + dt, state + dt * k3)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass(frozen=True)
class SimConfig:
    nominal: RobotParams = field(default_factory=RobotParams.benchmark_arm)
    plant: RobotParams = field(default_factory=RobotParams.benchmark_arm)
    controller: ControllerParams = field(default_factory=ControllerParams)
    reference: RefModelParams = field(default_factory=RefModelParams)
    friction: FrictionParams | None = None
    observer: ObserverParams = field(default_factory=ObserverParams)
    use_observer: bool = False
    initial: JointState = field(default_factory=lambda: JointState(np.zeros(2), np.zeros(2)))
    observer_initial: ObserverState | None = None
    dt: float = 1e-4
    t_end: float = 4.0
    log_stride: int = 10
    # zero-order hold period for the torque; 0 means continuous control
    sample_period: float = 0.0
    # bound on each entry of the integral state; 0 disables
    e0_clamp: float = 0.0
    divergence_limit: float = 1e4

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end < 10 * self.dt:
            raise ValueError(f"t_end = {self.t_end} is shorter than 10*dt = {10 * self.dt}")
        if self.log_stride < 1:
            raise ValueError("log_stride must be >= 1")
        n = self.nominal.n
        if self.plant.n != n or self.reference.n != n or len(self.initial.q) != n:
            raise ValueError("nominal, plant, reference and initial state must share n")
        if self.sample_period < 0:
            raise ValueError("sample_period must be >= 0")
        if self.sample_period > 0:
            k = self.sample_period / self.dt
            if abs(k - round(k)) > 1e-9 * k or round(k) < 1:
                raise ValueError("sample_period must be a positive multiple of dt")
        if self.controller.variant != "none" and self.dt > self.controller.h / 10 * (1 + 1e-12):
            warnings.warn(f"dt = {self.dt} does not resolve h = {self.controller.h} "
                          "(want dt <= h/10)", stacklevel=2)

    @property
    def n(self) -> int:
        return self.nominal.n

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass
class TrajectoryLog:
    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    qref: np.ndarray
    qdref: np.ndarray
    qddref: np.ndarray
    e0: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    u: np.ndarray
    zhat: np.ndarray | None = None
    est_err: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.t)

    @property
    def qhat(self):
        return None if self.zhat is None else self.zhat[:, 0::2]

    @property
    def qdhat(self):
        return None if self.zhat is None else self.zhat[:, 1::2]


@dataclass
class Metrics:
    rms_e1: np.ndarray
    steady_state_e1: np.ndarray
    max_torque: np.ndarray
    settling_time: float | None
    energy_u: float

    @property
    def settled(self) -> bool:
        return self.settling_time is not None


class _Layout:
    def __init__(self, n: int, integral: bool, observer: bool):
        self.n = n
        self.q = slice(0, n)
        self.qd = slice(n, 2 * n)
        self.qref = slice(2 * n, 3 * n)
        self.qdref = slice(3 * n, 4 * n)
        end = 4 * n
        self.e0 = slice(end, end + n) if integral else None
        end += n if integral else 0
        self.z = slice(end, end + 2 * n) if observer else None
        end += 2 * n if observer else 0
        self.size = end


class _ClosedLoop:
    """Augmented closed-loop vector field for one configuration."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        cp = cfg.controller
        self.L = _Layout(cfg.n, cp.variant == "integral", cfg.use_observer)
        self.held_u: np.ndarray | None = None
        w = np.asarray(cfg.reference.omega)
        self._w2 = w * w
        self._damp = 2.0 * np.asarray(cfg.reference.xi) * w

    def initial_state(self) -> np.ndarray:
        cfg, L = self.cfg, self.L
        x = np.zeros(L.size)
        x[L.q] = cfg.initial.q
        x[L.qd] = cfg.initial.qd
        if L.z is not None:
            z0 = cfg.observer_initial or ObserverState(interleave(cfg.initial.q, cfg.initial.qd))
            x[L.z] = z0.zhat
        return x

    def reference(self, t: float, x: np.ndarray) -> RefState:
        L, p = self.L, self.cfg.reference
        qref, qdref = x[L.qref], x[L.qdref]
        qdd = self._w2 * (input_signal(t, p) - qref) - self._damp * qdref
        return RefState(qref, qdref, qdd)

    def controller_input(self, x: np.ndarray) -> JointState:
        """State the controller sees: measured positions, true or estimated velocity."""
        L = self.L
        if L.z is None:
            return JointState.unchecked(x[L.q], x[L.qd])
        return JointState.unchecked(x[L.q], x[L.z][1::2])

    def torque(self, t: float, x: np.ndarray, ref: RefState) -> np.ndarray:
        cfg, L = self.cfg, self.L
        cp = cfg.controller
        if cp.variant == "none":
            return np.zeros(L.n)
        s = self.controller_input(x)
        e0 = x[L.e0] if L.e0 is not None else None
        err = TrackingError.from_states(s, ref, e0)
        if cp.variant == "computed_torque":
            return computed_torque(err, s, ref, cfg.nominal, cp.h)
        M0 = mass_matrix(s.q, cfg.nominal)
        f0 = -solve_mass(M0, bias_torque(s.q, s.qd, cfg.nominal))
        if cp.variant == "integral":
            return nrhc_integral_torque(err, f0, ref.qddref, M0, cp)
        return nrhc_torque(err, f0, ref.qddref, M0, cp)

    def derivative(self, t: float, x: np.ndarray, u: np.ndarray | None = None):
        cfg, L = self.cfg, self.L
        ref = self.reference(t, x)
        if u is None:
            u = self.held_u if self.held_u is not None else self.torque(t, x, ref)
        plant = JointState.unchecked(x[L.q], x[L.qd])
        dx = np.empty(L.size)
        dx[L.q] = plant.qd
        dx[L.qd] = forward_dynamics(plant, u, cfg.plant, cfg.friction)
        dx[L.qref] = ref.qdref
        dx[L.qdref] = ref.qddref
        if L.e0 is not None:
            de0 = plant.q - ref.qref
            if cfg.e0_clamp > 0:
                e0 = x[L.e0]
                de0 = np.where((np.abs(e0) >= cfg.e0_clamp) & (np.sign(de0) == np.sign(e0)),
                               0.0, de0)
            dx[L.e0] = de0
        if L.z is not None:
            dx[L.z] = observer_derivative(ObserverState(x[L.z]), plant.q, u,
                                          cfg.nominal, cfg.observer)
        return dx, u


class _Arm2:
    """Constants of the closed-form two-link model, evaluated on plain floats.

    Mirrors ``dynamics.mass_matrix``/``coriolis_matrix``/``gravity_vector``;
    the test suite checks the two against each other.
    """

    def __init__(self, p: RobotParams):
        a, b = p.links
        self.k = b.mass * a.length * b.com
        self.m22 = b.inertia + b.mass * b.com ** 2
        self.m11 = a.mass * a.com ** 2 + b.mass * a.length ** 2 + a.inertia + self.m22
        self.J1, self.J2 = p.motor_inertia
        self.G1 = (a.mass * a.com + b.mass * a.length) * p.gravity
        self.G2 = b.mass * b.com * p.gravity

    def mass(self, q2):
        kc = self.k * math.cos(q2)
        return self.m11 + 2.0 * kc + self.J1, self.m22 + kc, self.m22 + self.J2

    def terms(self, q1, q2, qd1, qd2):
        """(m11, m12, m22, (C q̇)_1, (C q̇)_2, G_1, G_2)."""
        kc, ks = self.k * math.cos(q2), self.k * math.sin(q2)
        g2 = self.G2 * math.cos(q1 + q2)
        return (self.m11 + 2.0 * kc + self.J1, self.m22 + kc, self.m22 + self.J2,
                -ks * qd2 * (2.0 * qd1 + qd2), ks * qd1 * qd1,
                self.G1 * math.cos(q1) + g2, g2)


class _TwoLinkLoop(_ClosedLoop):
    """Scalar fast path of the same vector field for the built-in two-link arm.

    Produces the same derivative as ``_ClosedLoop`` (checked in the test
    suite) without per-call small-array overhead.
    """

    def __init__(self, cfg: SimConfig):
        super().__init__(cfg)
        cp, ref = cfg.controller, cfg.reference
        self._wsq = [w * w for w in ref.omega]
        self._dmp = [2.0 * z * w for z, w in zip(ref.xi, ref.omega)]
        self._s = cp.r_w / cp.q_w
        if cp.variant == "integral":
            self._scale, self._gain = (5.0 / 9.0) * cp.h ** 6, (2.0 / 3.0) * cp.h ** 3
        else:
            self._scale, self._gain = cp.h ** 4, cp.h ** 2
        self._K = tuple(float(k) for k in observer_gain(cfg.observer))
        self._plant, self._nom = _Arm2(cfg.plant), _Arm2(cfg.nominal)
        self._amp, self._rate, self._lit = ref.amplitude, ref.rate, ref.literal_form
        f = cfg.friction
        self._fr = None if f is None else (f.fs, f.fv, f.eps, f.on_position)

    def _ref(self, t, x):
        kt = self._rate * t
        if self._lit:
            r = self._amp * (1.0 - math.exp(-kt)) * (1.0 + kt)
        else:
            r = self._amp * (1.0 - math.exp(-kt) * (1.0 + kt))
        return ((x[4], x[5]), (x[6], x[7]),
                (self._wsq[0] * (r - x[4]) - self._dmp[0] * x[6],
                 self._wsq[1] * (r - x[5]) - self._dmp[1] * x[7]))

    def _torque_f(self, x, ref):
        cfg, L = self.cfg, self.L
        cp, nom = cfg.controller, cfg.nominal
        q1, q2 = x[0], x[1]
        if L.z is not None:
            v1, v2 = x[L.z.start + 1], x[L.z.start + 3]
        else:
            v1, v2 = x[2], x[3]
        (r1, r2), (rd1, rd2), (rdd1, rdd2) = ref
        e1, e2 = q1 - r1, q2 - r2
        d1, d2 = v1 - rd1, v2 - rd2
        a, b, d, c1, c2, g1, g2 = self._nom.terms(q1, q2, v1, v2)
        h = cp.h
        if cp.variant == "computed_torque":
            w1 = (e1 + 2.0 * h * d1) / (h * h) - rdd1
            w2 = (e2 + 2.0 * h * d2) / (h * h) - rdd2
            return (-(a * w1 + b * w2) + c1 + g1, -(b * w1 + d * w2) + c2 + g2)
        f1, f2 = _solve_spd2(a, b, d, -(c1 + g1), -(c2 + g2))
        if cp.variant == "integral":
            e01, e02 = x[L.e0.start], x[L.e0.start + 1]
            k3 = (5.0 / 6.0) * h ** 3
            y1 = 2.0 * e01 + 3.0 * h * e1 + 2.0 * h * h * d1 + k3 * (f1 - rdd1)
            y2 = 2.0 * e02 + 3.0 * h * e2 + 2.0 * h * h * d2 + k3 * (f2 - rdd2)
        else:
            y1 = e1 + 2.0 * h * d1 + h * h * (f1 - rdd1)
            y2 = e2 + 2.0 * h * d2 + h * h * (f2 - rdd2)
        s, sc = self._s, self._scale
        s11 = sc + s * (a * a + b * b)
        s12 = s * b * (a + d)
        s22 = sc + s * (b * b + d * d)
        det = s11 * s22 - s12 * s12
        z1 = (s22 * y1 - s12 * y2) / det
        z2 = (s11 * y2 - s12 * y1) / det
        g = self._gain
        return (-g * (a * z1 + b * z2), -g * (b * z1 + d * z2))

    def torque(self, t, x, ref=None):
        if self.cfg.controller.variant == "none":
            return np.zeros(2)
        xs = x.tolist()
        return np.array(self._torque_f(xs, self._ref(t, xs)))

    def derivative(self, t, x, u=None):
        cfg, L = self.cfg, self.L
        xs = x.tolist()
        ref = self._ref(t, xs)
        if u is None:
            if self.held_u is not None:
                u = self.held_u
            elif cfg.controller.variant == "none":
                u = (0.0, 0.0)
            else:
                u = self._torque_f(xs, ref)
        u1, u2 = float(u[0]), float(u[1])
        q1, q2, qd1, qd2 = xs[0], xs[1], xs[2], xs[3]
        m11, m12, m22, c1, c2, g1, g2 = self._plant.terms(q1, q2, qd1, qd2)
        r1, r2 = u1 - c1 - g1, u2 - c2 - g2
        if self._fr is not None:
            fs, fv, eps, on_pos = self._fr
            p1, p2 = (q1, q2) if on_pos else (qd1, qd2)
            r1 -= fs[0] * p1 + fv[0] * math.tanh(qd1 / eps)
            r2 -= fs[1] * p2 + fv[1] * math.tanh(qd2 / eps)
        a1, a2 = _solve_spd2(m11, m12, m22, r1, r2)
        out = [qd1, qd2, a1, a2, ref[1][0], ref[1][1], ref[2][0], ref[2][1]]
        if L.e0 is not None:
            de = [q1 - ref[0][0], q2 - ref[0][1]]
            if cfg.e0_clamp > 0:
                for j in range(2):
                    e0 = xs[L.e0.start + j]
                    if abs(e0) >= cfg.e0_clamp and de[j] * e0 > 0:
                        de[j] = 0.0
            out += de
        if L.z is not None:
            out += self._observer(xs[L.z.start:L.z.stop], q1, q2, u1, u2)
        return np.array(out), u

    def _observer(self, z, y1, y2, u1, u2):
        cfg = self.cfg
        op, nom = cfg.observer, self._nom
        if op.clamp > 0:
            z = [min(max(v, -op.clamp), op.clamp) for v in z]
        qh1, qdh1, qh2, qdh2 = z
        m11, m12, m22, c1, c2, g1, g2 = nom.terms(qh1, qh2, qdh1, qdh2)
        if op.p_on_estimate:
            a1, a2 = _solve_spd2(m11, m12, m22, u1 - c1 - g1, u2 - c2 - g2)
        else:
            f1, f2 = _solve_spd2(m11, m12, m22, -(c1 + g1), -(c2 + g2))
            p1, p2 = _solve_spd2(*nom.mass(y2), u1, u2)
            a1, a2 = f1 + p1, f2 + p2
        k1, k2 = self._K
        i1, i2 = y1 - qh1, y2 - qh2
        return [qdh1 + k1 * i1, a1 + k2 * i1, qdh2 + k1 * i2, a2 + k2 * i2]


def _make_loop(cfg: SimConfig, fast: bool = True) -> _ClosedLoop:
    built_in = (isinstance(cfg.nominal, RobotParams) and isinstance(cfg.plant, RobotParams)
                and cfg.n == 2)
    return _TwoLinkLoop(cfg) if (fast and built_in) else _ClosedLoop(cfg)


def run_scenario(cfg: SimConfig, fast: bool = True) -> TrajectoryLog:
    """Integrate the closed loop from t = 0 to ``cfg.t_end``.

    ``fast=False`` forces the generic array path even for the two-link arm.
    """
    loop = _make_loop(cfg, fast)
    L = loop.L
    n, dt, N = cfg.n, cfg.dt, cfg.n_steps
    hold = int(round(cfg.sample_period / dt)) if cfg.sample_period > 0 else 0
    rows = N // cfg.log_stride + 1
    buf = {k: np.zeros((rows, n)) for k in
           ("q", "qd", "qref", "qdref", "qddref", "e0", "e1", "e2", "u")}
    tbuf = np.zeros(rows)
    zbuf = np.zeros((rows, 2 * n)) if L.z is not None else None

    def fvec(t, x):
        return loop.derivative(t, x)[0]

    def record(r, t, x, u):
        ref = loop.reference(t, x)
        tbuf[r] = t
        buf["q"][r], buf["qd"][r] = x[L.q], x[L.qd]
        buf["qref"][r], buf["qdref"][r], buf["qddref"][r] = ref.qref, ref.qdref, ref.qddref
        if L.e0 is not None:
            buf["e0"][r] = x[L.e0]
        buf["e1"][r] = x[L.q] - ref.qref
        buf["e2"][r] = x[L.qd] - ref.qdref
        buf["u"][r] = u
        if zbuf is not None:
            zbuf[r] = x[L.z]

    def finish(upto):
        zhat = zbuf[:upto] if zbuf is not None else None
        est = None
        if zhat is not None:
            est = np.hstack([buf["q"][:upto] - zhat[:, 0::2], buf["qd"][:upto] - zhat[:, 1::2]])
        return TrajectoryLog(tbuf[:upto].copy(), *(buf[k][:upto].copy() for k in
                             ("q", "qd", "qref", "qdref", "qddref", "e0", "e1", "e2", "u")),
                             zhat=None if zhat is None else zhat.copy(), est_err=est)

    x = loop.initial_state()
    r = 0
    for i in range(N + 1):
        t = i * dt
        if hold and i % hold == 0:
            loop.held_u = loop.torque(t, x, loop.reference(t, x))
        if i % cfg.log_stride == 0:
            record(r, t, x, loop.derivative(t, x)[1])
            r += 1
        if i == N:
            break
        try:
            x = rk4_step(fvec, x, t, dt)
        except DivergenceError as exc:
            raise DivergenceError(t, exc.reason, finish(r)) from None
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise DivergenceError(t, str(exc), finish(r)) from None
        qd = x[L.qd]
        if not np.isfinite(x).all() or np.max(np.abs(qd)) > cfg.divergence_limit:
            raise DivergenceError(t + dt, f"|qd| exceeded {cfg.divergence_limit:g} rad/s",
                                  finish(r))
    return finish(r)


def _run_quiet(cfg: SimConfig):
    try:
        return run_scenario(cfg)
    except DivergenceError as exc:
        return exc


def run_many(cfgs: list[SimConfig], workers: int | None = None) -> list:
    """Run independent scenarios in parallel.

    Each entry of the result is a ``TrajectoryLog`` or the
    ``DivergenceError`` that stopped that run.
    """
    if len(cfgs) <= 1 or workers == 1:
        return [_run_quiet(c) for c in cfgs]
    with ProcessPoolExecutor(max_workers=workers or min(len(cfgs), 8)) as ex:
        return list(ex.map(_run_quiet, cfgs))


def compute_metrics(log: TrajectoryLog, band: float) -> Metrics:
    if len(log) == 0:
        raise ValueError("empty log")
    e1 = np.abs(log.e1)
    t = log.t
    t_end = t[-1]
    window = t >= t[0] + 0.9 * (t_end - t[0])
    rms = np.sqrt(np.mean(log.e1 ** 2, axis=0))
    steady = e1[window].mean(axis=0)
    outside = np.nonzero(e1.max(axis=1) >= band)[0]
    if len(outside) == 0:
        settling = float(t[0])
    elif outside[-1] == len(t) - 1:
        settling = None
    else:
        settling = float(t[outside[-1] + 1])
    energy = float(np.trapezoid(np.sum(log.u ** 2, axis=1), t)) if len(t) > 1 else 0.0
    return Metrics(rms, steady, np.abs(log.u).max(axis=0), settling, energy)


def reference_bounds(log: TrajectoryLog) -> tuple[float, float, float]:
    """(r0, r1, r2): largest ‖q_ref‖, ‖q̇_ref‖, ‖q̈_ref‖ over the log."""
    return tuple(float(np.max(np.linalg.norm(a, axis=1))) if len(a) else 0.0
                 for a in (log.qref, log.qdref, log.qddref))


def total_energy(log: TrajectoryLog, p: RobotParams) -> np.ndarray:
    """Kinetic plus potential energy of the plant at every logged row."""
    return np.array([kinetic_energy(JointState(q, qd), p) + potential_energy(q, p)
                     for q, qd in zip(log.q, log.qd)])
