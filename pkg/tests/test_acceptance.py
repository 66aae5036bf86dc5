"""Acceptance criteria for the library, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line with the measured
numbers; the lines are also repeated in the terminal summary.
"""

import math
import time

import numpy as np

import conftest
from conftest import scenario
from nrhc import analysis as an
from nrhc.config import to_sim_config
from nrhc.control import (ControllerParams, TrackingError, computed_torque,
                          integral_torque_r0, nrhc_integral_torque, nrhc_torque, simpson_cost)
from nrhc.dynamics import (JointState, RobotParams, drift_term, gravity_vector, mass_matrix,
                           potential_energy)
from nrhc.reference import RefState
from nrhc.sim import DivergenceError, SimConfig, compute_metrics, run_scenario, total_energy

from oracles import random_spd, rel_err
from test_control import predict_error_order
from test_sim import rk4_order

T1 = RobotParams.benchmark_arm()


def report(n: int, ok: bool, detail: str):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(line)
    conftest.ACCEPTANCE_LINES[n] = line
    assert ok, line


def random_case(rng):
    s = JointState(rng.uniform(-np.pi, np.pi, 2), rng.uniform(-3, 3, 2))
    ref = RefState(s.q + rng.normal(0, 0.05, 2), s.qd + rng.normal(0, 0.5, 2),
                   rng.normal(0, 20, 2))
    err = TrackingError.from_states(s, ref, rng.normal(0, 1e-3, 2))
    return s, ref, err


def steady(res):
    if isinstance(res, DivergenceError):
        return None
    return compute_metrics(res, 1e-3).steady_state_e1


def run(name, **overrides):
    try:
        return run_scenario(to_sim_config(scenario(name, **overrides)))
    except DivergenceError as exc:
        return exc


# 1 --------------------------------------------------------------------------
def test_criterion_1_dynamics_consistency():
    t0 = time.perf_counter()
    cfg = SimConfig(controller=ControllerParams(variant="none"),
                    initial=JointState(np.array([0.4, -0.7]), np.zeros(2)),
                    t_end=5.0, dt=1e-4, log_stride=100)
    E = total_energy(run_scenario(cfg), T1)
    drift = float(np.max(np.abs(E - E[0])) / abs(E[0]))

    rng = np.random.default_rng(2024)
    worst = 0.0
    d = 1e-6
    for q in rng.uniform(-np.pi, np.pi, (100, 2)):
        fd = np.array([(potential_energy(q + d * e, T1) - potential_energy(q - d * e, T1)) / (2 * d)
                       for e in np.eye(2)])
        worst = max(worst, rel_err(gravity_vector(q, T1), fd))
    elapsed = time.perf_counter() - t0
    ok = drift < 1e-6 and worst < 1e-6 and elapsed < 5.0
    report(1, ok, f"energy drift {drift:.2e} (< 1e-6), gravity vs FD {worst:.2e} (< 1e-6), "
                  f"{elapsed:.1f} s (< 5 s)")


# 2 --------------------------------------------------------------------------
def test_criterion_2_computed_torque_limit():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(200):
        s, ref, err = random_case(rng)
        h = 10 ** rng.uniform(-4, -1)
        u_nrhc = nrhc_torque(err, drift_term(s, T1), ref.qddref, mass_matrix(s.q, T1),
                             ControllerParams(10 ** rng.uniform(0, 8), 0.0, h))
        worst = max(worst, rel_err(u_nrhc, computed_torque(err, s, ref, T1, h)))
    elapsed = time.perf_counter() - t0
    report(2, worst < 1e-9 and elapsed < 1.0,
           f"max relative difference {worst:.2e} (< 1e-9) over 200 samples, {elapsed:.2f} s")


# 3 --------------------------------------------------------------------------
def printed_r0_law(err, f, qddref, M, h):
    return -(9 / 5) * M @ (4 / (3 * h ** 3) * err.e0 + 2 / h ** 2 * err.e1
                           + 4 / (3 * h) * err.e2 + (5 / 9) * (f - qddref))


def test_criterion_3_integral_reduction():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(200):
        s, ref, err = random_case(rng)
        h = 10 ** rng.uniform(-4, -1)
        M, f = mass_matrix(s.q, T1), drift_term(s, T1)
        u = nrhc_integral_torque(err, f, ref.qddref, M,
                                 ControllerParams(10 ** rng.uniform(0, 8), 0.0, h))
        expected = printed_r0_law(err, f, ref.qddref, M, h)
        worst = max(worst, rel_err(u, expected),
                    rel_err(integral_torque_r0(err, f, ref.qddref, M, h), expected))
    elapsed = time.perf_counter() - t0
    report(3, worst < 1e-9 and elapsed < 1.0,
           f"max relative difference {worst:.2e} (< 1e-9) over 200 samples, {elapsed:.2f} s")


# 4 --------------------------------------------------------------------------
def test_criterion_4_lemma1_at_scale():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    unstable = inconsistent = by_poly = 0
    worst = 0.0
    for _ in range(1000):
        h = 10 ** rng.uniform(-4, -1)
        q_w = 10 ** rng.uniform(0, 8)
        r_w = 0.0 if rng.random() < 0.1 else 10 ** rng.uniform(-14, 0)
        M = random_spd(rng, 2)
        rep = an.lemma1_check(h, q_w, r_w, M)
        unstable += bool(np.any(rep.eigenvalues.real >= 0))
        gap = min(rep.details["eig_gap"], rep.details["charpoly_gap"])
        worst = max(worst, gap)
        inconsistent += gap > 1e-8
        by_poly += rep.details["eig_gap"] > 1e-8
    elapsed = time.perf_counter() - t0
    ok = unstable == 0 and inconsistent == 0 and elapsed < 10.0
    report(4, ok, f"{unstable} draws with Re >= 0, factorisation gap {worst:.2e} (< 1e-8; "
                  f"{by_poly} near-repeated draws compared by polynomial), {elapsed:.1f} s")


# 5 --------------------------------------------------------------------------
def test_criterion_5_lemma2_boundary():
    t0 = time.perf_counter()

    def max_re(lam):
        return float(np.max(np.linalg.eigvals(an.closed_loop_B_tilde(1.0, np.array([[lam]]))).real))

    at = max_re(5 / 18)
    eig = np.linalg.eigvals(an.closed_loop_B_tilde(1.0, np.array([[5 / 18]])))
    imaginary_pair = int(np.sum((np.abs(eig.real) < 1e-8) & (np.abs(eig.imag) > 0.1))) == 2
    above = an.is_hurwitz(np.linalg.eigvals(an.closed_loop_B_tilde(1.0, np.array([[5 / 18 + 0.01]]))))
    below = an.is_hurwitz(np.linalg.eigvals(an.closed_loop_B_tilde(1.0, np.array([[5 / 18 - 0.01]]))))
    elapsed = time.perf_counter() - t0
    ok = abs(at) < 1e-8 and imaginary_pair and above and not below and elapsed < 1.0
    report(5, ok, f"|Re| at 5/18 = {abs(at):.1e}, imaginary pair {imaginary_pair}, "
                  f"Hurwitz at +0.01 {above}, at -0.01 {below}, {elapsed:.2f} s")


# 6 --------------------------------------------------------------------------
def test_criterion_6_matched_tracking():
    t0 = time.perf_counter()
    ss = steady(run("matched"))
    ss0 = steady(run("matched", controller__r_w=0.0))
    elapsed = time.perf_counter() - t0
    ok = (ss is not None and ss0 is not None and np.all(ss < 1e-3) and np.all(ss > 0)
          and np.all(ss0 < ss) and elapsed < 30.0)
    report(6, ok, f"steady-state |e1| {np.array2string(ss, precision=3)} (in (0, 1e-3)), "
                  f"r_w = 0 run {np.array2string(ss0, precision=3)} (strictly smaller), "
                  f"{elapsed:.1f} s")


# 7 --------------------------------------------------------------------------
def test_criterion_7_robustness():
    t0 = time.perf_counter()
    matched, basic, integral = run("matched"), run("mismatched"), run("integral")
    elapsed = time.perf_counter() - t0
    ss_m, ss_b = steady(matched), steady(basic)
    ratio = ss_b / ss_m
    part1 = bool(np.all(ratio >= 10))
    peak_b = compute_metrics(basic, 1e-3).max_torque
    if isinstance(integral, DivergenceError):
        part2, tail = False, f"integral law diverged at t = {integral.t:.3g} s"
    else:
        m = compute_metrics(integral, 1e-3)
        part2 = bool(np.all(m.steady_state_e1 < 1e-3) and np.all(m.max_torque < peak_b))
        tail = (f"integral |e1| {np.array2string(m.steady_state_e1, precision=3)} (< 1e-3), "
                f"peak {np.array2string(m.max_torque, precision=4)} "
                f"vs basic {np.array2string(peak_b, precision=4)}")
    report(7, part1 and part2 and elapsed < 60.0,
           f"basic/matched ratio {np.array2string(ratio, precision=3)} (>= 10), {tail}, "
           f"{elapsed:.1f} s")


# 8 --------------------------------------------------------------------------
def test_criterion_8_observer_in_the_loop():
    t0 = time.perf_counter()
    log = run("observer")
    elapsed = time.perf_counter() - t0
    vel_err = np.max(np.abs(log.qdhat - log.qd), axis=1)
    above = np.nonzero(vel_err >= 1e-3)[0]
    t_conv = 0.0 if len(above) == 0 else (math.inf if above[-1] == len(log) - 1
                                          else float(log.t[above[-1] + 1]))
    ss = compute_metrics(log, 1e-3).steady_state_e1
    ok = t_conv <= 1.0 and np.all(ss < 2e-3) and elapsed < 30.0
    report(8, ok, f"velocity error below 1e-3 rad/s from t = {t_conv:.3f} s (<= 1 s), "
                  f"steady-state |e1| {np.array2string(ss, precision=3)} (< 2e-3), {elapsed:.1f} s")


# 9 --------------------------------------------------------------------------
def test_criterion_9_orders():
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(50):
        # cost integrand q_w |e(t)|^2 equal to a positive cubic p(t)
        c = np.abs(rng.normal(size=4)) + 0.1
        a, h = rng.uniform(0, 1), rng.uniform(0.01, 0.5)
        p = np.polynomial.Polynomial(c)
        samples = [(np.array([math.sqrt(p(t)), 0.0]), np.zeros(2)) for t in (a, a + h, a + 2 * h)]
        exact = p.integ()(a + 2 * h) - p.integ()(a)
        worst = max(worst, abs(simpson_cost(samples, 1.0, 0.0, h) - exact) / abs(exact))
    p_order = predict_error_order()
    r_order = rk4_order()
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-13 and p_order >= 1.9 and r_order >= 3.9 and elapsed < 5.0
    report(9, ok, f"Simpson cubic error {worst:.1e}, prediction order {p_order:.2f} (>= 1.9), "
                  f"RK4 order {r_order:.2f} (>= 3.9), {elapsed:.1f} s")


# 10 -------------------------------------------------------------------------
H_VALUES = (0.0005, 0.001, 0.005, 0.01, 0.05)


def test_criterion_10_h_sweep():
    t0 = time.perf_counter()
    results = {}
    for h in H_VALUES:
        results[h] = run("mismatched", controller__h=h, simulation__dt=min(1e-4, h / 10))
    elapsed = time.perf_counter() - t0
    worst = {h: (math.inf if isinstance(r, DivergenceError) else float(np.max(steady(r))))
             for h, r in results.items()}
    upward = [worst[h] for h in H_VALUES if h >= 0.001]
    monotone = all(b >= a for a, b in zip(upward, upward[1:]))
    aborted = isinstance(results[H_VALUES[-1]], DivergenceError)
    table = ", ".join(f"h={h:g}: {'abort' if math.isinf(v) else f'{v:.2e}'}"
                      for h, v in worst.items())
    report(10, monotone and aborted and elapsed < 120.0,
           f"max steady-state |e1| {table}; non-decreasing from 0.001 {monotone}, "
           f"abort at largest h {aborted}, {elapsed:.1f} s")
