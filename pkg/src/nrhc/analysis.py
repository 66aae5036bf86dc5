"""Frozen-state stability diagnostics for the closed loops.

At a fixed configuration q the tracking-error dynamics of each controller
are linear:

* basic law:           ė = A(h, q) e + B η
* computed torque:     ė = B̄(h, q) e + B v       (model mismatch)
* integral action:     ė = B̃(h, q) e + B v       (model mismatch, e = (e0, e1, e2))

This module builds those matrices, checks that they are Hurwitz, solves the
algebraic Lyapunov equation AᵀP + PA = −Q at the frozen state, and turns
the solutions into the sufficient robustness thresholds on the disturbance
gains. Disturbance gains are estimated from simulation logs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import linear_sum_assignment

from .dynamics import (FrictionParams, JointState, Model, coriolis_matrix,
                       friction_torque, gravity_vector, is_spd, mass_matrix,
                       drift_term)

HURWITZ_TOL = 1e-10
ROUTH_BOUND = 5.0 / 18.0
EPS_BOUND = 2.6


class NotHurwitzError(ValueError):
    def __init__(self, eigenvalue):
        super().__init__(f"matrix is not Hurwitz: eigenvalue {eigenvalue}")
        self.eigenvalue = eigenvalue


class ConsistencyError(AssertionError):
    """Two independent computations of the same quantity disagree."""


@dataclass
class StabilityReport:
    matrix_kind: str
    eigenvalues: np.ndarray
    hurwitz: bool
    lyapunov_P: np.ndarray | None = None
    threshold: float | None = None
    margin: float | None = None
    details: dict = field(default_factory=dict)

    @property
    def max_re_eig(self) -> float:
        return float(np.max(self.eigenvalues.real))


@dataclass
class UncertaintyBounds:
    m_bar: float = 0.0
    c_bar: float = 0.0
    g_bar: float = 0.0
    f_bar: float = 0.0
    gamma: float = 0.0
    mu: float = 0.0
    # True when every sample had ‖e‖ below the ratio cutoff
    converged: bool = False
    # ‖ΔM‖ ≤ λ_min(M) along the log
    mass_assumption_holds: bool = True


def is_hurwitz(eigs) -> bool:
    return bool(np.all(np.asarray(eigs).real < -HURWITZ_TOL))


def _require_spd(M, name="M"):
    M = np.asarray(M, dtype=float)
    if not is_spd(M):
        raise ValueError(f"{name} must be symmetric positive definite")
    return M


def _companion_blocks(blocks) -> np.ndarray:
    """Block companion matrix with identity super-diagonal and given last row."""
    k = len(blocks)
    n = blocks[0].shape[0]
    A = np.zeros((k * n, k * n))
    for i in range(k - 1):
        A[i * n:(i + 1) * n, (i + 1) * n:(i + 2) * n] = np.eye(n)
    for j, blk in enumerate(blocks):
        A[(k - 1) * n:, j * n:(j + 1) * n] = blk
    return A


def p_bar(h, q_w, r_w, M) -> np.ndarray:
    """q h⁴ I + r M²."""
    M = np.asarray(M, dtype=float)
    return q_w * h ** 4 * np.eye(len(M)) + r_w * M @ M


def closed_loop_A(h: float, q_w: float, r_w: float, M) -> np.ndarray:
    if not q_w > 0:
        raise ValueError("q_w must be positive")
    if r_w < 0 or not h > 0:
        raise ValueError("need r_w >= 0 and h > 0")
    M = _require_spd(M)
    Pinv = np.linalg.inv(p_bar(h, q_w, r_w, M))
    return _companion_blocks([-q_w * h ** 2 * Pinv, -2.0 * q_w * h ** 3 * Pinv])


def _match_multisets(a, b):
    """Largest relative distance between optimally paired eigenvalues.

    Returns the gap and, for each entry of ``b``, the index of its partner
    in ``a``.
    """
    a, b = np.asarray(a), np.asarray(b)
    scale = np.maximum(1.0, np.maximum(np.abs(a)[:, None], np.abs(b)[None, :]))
    cost = np.abs(a[:, None] - b[None, :]) / scale
    rows, cols = linear_sum_assignment(cost)
    partner = np.empty(len(b), dtype=int)
    partner[cols] = rows
    return float(cost[rows, cols].max()), partner


def _charpoly_gap(dense, quadratics) -> float:
    """Relative mismatch between ∏(λ² + bλ + c) and the polynomial with roots ``dense``.

    A (nearly) repeated eigenvalue is only determined to about √ε by any
    eigensolver, but the symmetric functions of a root cluster are well
    conditioned, so this is the meaningful comparison for near-defective A.
    Coefficient k is scaled by ρᵏ with ρ = max(1, spectral radius).
    """
    target = np.array([1.0])
    for b, c in quadratics:
        target = np.polymul(target, [1.0, b, c])
    got = np.poly(dense).real
    rho = max(1.0, float(np.max(np.abs(dense))))
    scale = rho ** np.arange(len(target))
    return float(np.max(np.abs(got - target) / scale))


def lemma1_quadratics(h, q_w, r_w, M) -> list[tuple[float, float]]:
    """Coefficients (2q h³ λ̄, q h² λ̄) of λ² + 2q h³ λ̄ λ + q h² λ̄ for λ̄ ∈ eig(P̄⁻¹)."""
    lam_bar = 1.0 / np.linalg.eigvalsh(p_bar(h, q_w, r_w, M))
    return [(2.0 * q_w * h ** 3 * lb, q_w * h ** 2 * lb) for lb in lam_bar]


def lemma1_eigenvalues(h, q_w, r_w, M) -> np.ndarray:
    """Eigenvalues of A(h, q) from the per-λ̄ quadratics."""
    out = []
    for b, c in lemma1_quadratics(h, q_w, r_w, M):
        root = np.sqrt(complex(b * b - 4.0 * c))
        # numerically stable pair: avoid cancellation in -b + root
        r1 = (-b - root) / 2.0 if b >= 0 else (-b + root) / 2.0
        r2 = c / r1
        out.extend([r1, r2])
    return np.array(out)


def lemma1_check(h, q_w, r_w, M, tol: float = 1e-8) -> StabilityReport:
    """Dense eigensolve of A(h, q) cross-checked against the quadratic factorisation.

    Eigenvalues are matched one to one; where that fails only because roots
    are (nearly) repeated, the characteristic polynomials are compared
    instead.
    """
    A = closed_loop_A(h, q_w, r_w, M)
    dense = np.linalg.eigvals(A)
    quad = lemma1_eigenvalues(h, q_w, r_w, M)
    gap, _ = _match_multisets(dense, quad)
    pair_gap = _charpoly_gap(dense, lemma1_quadratics(h, q_w, r_w, M))
    if gap > tol and pair_gap > tol:
        raise ConsistencyError(
            f"dense and factorised eigenvalues differ by {gap:.3e} (relative); "
            f"characteristic polynomials by {pair_gap:.3e}")
    return StabilityReport("A_basic", dense, is_hurwitz(dense),
                           details={"eig_quadratic": quad, "eig_gap": gap,
                                    "charpoly_gap": pair_gap,
                                    "consistent": min(gap, pair_gap) <= tol})


def b_matrix(M_true, M_nom, tol: float = 1e-9) -> np.ndarray:
    """b = M_true⁻¹ M_nom; its eigenvalues are real and positive for SPD inputs."""
    M_true = _require_spd(M_true, "M_true")
    M_nom = _require_spd(M_nom, "M_nom")
    b = np.linalg.solve(M_true, M_nom)
    w = b_eigenvalues(b)
    if np.any(np.abs(w.imag) > tol * np.abs(w).max()) or np.any(w.real <= 0):
        raise ConsistencyError(f"b has non-real or non-positive eigenvalues {w}")
    return b


def b_eigenvalues(b) -> np.ndarray:
    return np.sort_complex(np.linalg.eigvals(b))


def closed_loop_B_bar(h: float, b) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    return _companion_blocks([-b / h ** 2, -2.0 * b / h])


def closed_loop_B_tilde(h: float, b) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    return _companion_blocks([-12.0 / (5.0 * h ** 3) * b,
                              -18.0 / (5.0 * h ** 2) * b,
                              -12.0 / (5.0 * h) * b])


def lemma2_check(M_true, M_nom, h: float) -> StabilityReport:
    """Three views of integral-loop stability at a frozen state.

    (i) λ_max(M₀⁻¹ΔM) < 2.6, (ii) every eigenvalue of b exceeds 5/18,
    (iii) B̃ Hurwitz by dense eigensolve. For SPD inertias the three are
    equivalent; ``consistent`` reports whether they agree.
    """
    M_true = _require_spd(M_true, "M_true")
    M_nom = _require_spd(M_nom, "M_nom")
    b = b_matrix(M_true, M_nom)
    eps = np.linalg.solve(M_nom, M_true - M_nom)
    eps_max = float(np.max(np.linalg.eigvals(eps).real))
    b_min = float(np.min(b_eigenvalues(b).real))
    eigs = np.linalg.eigvals(closed_loop_B_tilde(h, b))
    c1, c2, c3 = eps_max < EPS_BOUND, b_min > ROUTH_BOUND, is_hurwitz(eigs)
    return StabilityReport("B_tilde", eigs, c3, details={
        "lambda_max_eps": eps_max, "b_min": b_min,
        "cond_eps": c1, "cond_b": c2, "cond_hurwitz": c3,
        "consistent": c1 == c2 == c3})


def lyapunov_solve(A, Qm, refine: int = 6) -> np.ndarray:
    """Solve AᵀP + PA = −Qm for symmetric P (Kronecker form, small sizes).

    The closed-loop matrices mix time scales 1, 1/h, 1/h², ..., so the
    system is solved after a diagonal similarity scaling and then polished
    by a few steps of iterative refinement on the unscaled residual.
    """
    A = np.asarray(A, dtype=float)
    Qm = _require_spd(Qm, "Qm")
    eigs = np.linalg.eigvals(A)
    if not is_hurwitz(eigs):
        raise NotHurwitzError(eigs[np.argmax(eigs.real)])
    m = len(A)
    s = _balance_scale(A)
    As = A * s[None, :] / s[:, None]            # S⁻¹ A S
    I = np.eye(m)
    # row-major vec: vec(AᵀP) = (Aᵀ ⊗ I) vec(P), vec(PA) = (I ⊗ Aᵀ) vec(P)
    lu = scipy.linalg.lu_factor(np.kron(As.T, I) + np.kron(I, As.T))

    def solve(rhs):
        # P = S⁻¹ X S⁻¹ where X solves the scaled equation with S rhs S
        X = scipy.linalg.lu_solve(lu, (rhs * s[:, None] * s[None, :]).reshape(-1)).reshape(m, m)
        X = X / s[:, None] / s[None, :]
        return 0.5 * (X + X.T)

    P = solve(-Qm)
    best, best_res = P, lyapunov_residual(A, P, Qm)
    for _ in range(refine):
        if best_res <= 1e-14:
            break
        P = best + solve(-(A.T @ best + best @ A + Qm))
        res = lyapunov_residual(A, P, Qm)
        if not res < best_res:
            break
        best, best_res = P, res
    return best


def _balance_scale(A) -> np.ndarray:
    from scipy.linalg import matrix_balance
    _, (scale, _) = matrix_balance(A, permute=False, separate=True)
    return np.asarray(scale, dtype=float)


def lyapunov_residual(A, P, Qm) -> float:
    A = np.asarray(A)
    return float(np.linalg.norm(A.T @ P + P @ A + Qm) / np.linalg.norm(Qm))


def _lyap_pieces(A, Qm):
    P = lyapunov_solve(A, Qm)
    return P, float(np.linalg.eigvalsh(Qm)[0]), float(np.linalg.eigvalsh(P)[-1])


def theorem_bounds(which: int, h: float, ub: UncertaintyBounds, *, M_nom,
                   M_true=None, q_w: float = 1.0, r_w: float = 0.0,
                   M_upper: float | None = None, Qm=None) -> StabilityReport:
    """Sufficient-condition threshold and margin for one of the three loops.

    which = 1: basic law, μ < λ_min(Q_A) / (2 r M̄² λ_max(P̄⁻¹) λ_max(P_A)).
        The statement variant with λ_max(P̄) in the numerator is reported in
        ``details['threshold_stmt']``; the threshold used is the proof one.
    which = 2: computed torque with mismatch, γ < λ_min(Q_B) / (2 λ_max(P_B)).
    which = 3: integral action with mismatch, γ < λ_min(Q̃) / (2 λ_max(P̃)).
    """
    M_nom = _require_spd(M_nom, "M_nom")
    if which == 1:
        A = closed_loop_A(h, q_w, r_w, M_nom)
        kind, gain = "A_basic", ub.mu
    elif which in (2, 3):
        if M_true is None:
            raise ValueError("which = 2 and 3 need the true inertia")
        b = b_matrix(M_true, M_nom)
        A = closed_loop_B_bar(h, b) if which == 2 else closed_loop_B_tilde(h, b)
        kind, gain = ("B_bar", "B_tilde")[which - 2], ub.gamma
    else:
        raise ValueError("which must be 1, 2 or 3")
    Qm = np.eye(len(A)) if Qm is None else np.asarray(Qm, dtype=float)
    eigs = np.linalg.eigvals(A)
    P, qmin, pmax = _lyap_pieces(A, Qm)
    details = {"lyapunov_residual": lyapunov_residual(A, P, Qm)}
    if which == 1:
        if r_w == 0:
            threshold = stmt = math.inf
        else:
            Mbar = M_upper if M_upper is not None else float(np.linalg.norm(M_nom, 2))
            pb = np.linalg.eigvalsh(p_bar(h, q_w, r_w, M_nom))
            stmt = qmin * pb[-1] / (2.0 * r_w * Mbar ** 2 * pmax)
            threshold = qmin / (2.0 * r_w * Mbar ** 2 * (1.0 / pb[0]) * pmax)
        details.update(threshold_stmt=stmt, threshold_proof=threshold)
    else:
        threshold = qmin / (2.0 * pmax)
    return StabilityReport(kind, eigs, is_hurwitz(eigs), P, threshold,
                           threshold - gain, details)


def disturbance(q, qd, qddref, nominal: Model, plant: Model,
                friction: FrictionParams | None) -> np.ndarray:
    """v = −M⁻¹(ΔM q̈_ref + ΔC q̇ + ΔG + F) with Δ = true − nominal."""
    M, M0 = mass_matrix(q, plant), mass_matrix(q, nominal)
    dC = coriolis_matrix(q, qd, plant) - coriolis_matrix(q, qd, nominal)
    dG = gravity_vector(q, plant) - gravity_vector(q, nominal)
    rhs = (M - M0) @ qddref + dC @ qd + dG + friction_torque(qd, friction, q)
    return -np.linalg.solve(M, rhs)


def estimate_gains(log, nominal: Model, plant: Model,
                   friction: FrictionParams | None = None,
                   min_error: float = 1e-6) -> UncertaintyBounds:
    """Empirical disturbance and drift gains along a trajectory log.

    γ is the largest ‖v‖/‖e‖ and μ the largest ‖f − q̈_ref‖/‖e‖ over rows
    with ‖e‖ > ``min_error``, where e = (e1, e2).
    """
    if len(log) == 0:
        return UncertaintyBounds(converged=True)
    ub = UncertaintyBounds()
    gamma = mu = 0.0
    used = 0
    for k in range(len(log)):
        q, qd, qddref = log.q[k], log.qd[k], log.qddref[k]
        M, M0 = mass_matrix(q, plant), mass_matrix(q, nominal)
        dM = M - M0
        nm = float(np.linalg.norm(dM, 2))
        ub.m_bar = max(ub.m_bar, nm)
        if nm > np.linalg.eigvalsh(M)[0]:
            ub.mass_assumption_holds = False
        dC = coriolis_matrix(q, qd, plant) - coriolis_matrix(q, qd, nominal)
        ub.c_bar = max(ub.c_bar, float(np.linalg.norm(dC, 2)))
        ub.g_bar = max(ub.g_bar, float(np.linalg.norm(
            gravity_vector(q, plant) - gravity_vector(q, nominal))))
        fr = friction_torque(qd, friction, q)
        ub.f_bar = max(ub.f_bar, float(np.linalg.norm(fr)))
        ne = float(np.hypot(np.linalg.norm(log.e1[k]), np.linalg.norm(log.e2[k])))
        if ne <= min_error:
            continue
        used += 1
        v = disturbance(q, qd, qddref, nominal, plant, friction)
        gamma = max(gamma, float(np.linalg.norm(v)) / ne)
        f = drift_term(JointState(q, qd), nominal)
        mu = max(mu, float(np.linalg.norm(f - qddref)) / ne)
    ub.gamma, ub.mu = gamma, mu
    ub.converged = used == 0
    return ub


def invariant_set_check(log, nominal: Model, plant: Model,
                        friction: FrictionParams | None, h: float,
                        variant: str) -> dict:
    """Compare the predicted steady-state error with the last logged row.

    Basic/computed-torque loops settle at e1 = h² b⁻¹ v; the integral loop at
    e0 = (5h³/12) b⁻¹ v with e1 = 0.
    """
    q, qd, qddref = log.q[-1], log.qd[-1], log.qddref[-1]
    b = np.linalg.solve(mass_matrix(q, plant), mass_matrix(q, nominal))
    v = disturbance(q, qd, qddref, nominal, plant, friction)
    if variant == "integral":
        predicted = 5.0 * h ** 3 / 12.0 * np.linalg.solve(b, v)
        observed = log.e0[-1]
        quantity = "e0"
    else:
        predicted = h * h * np.linalg.solve(b, v)
        observed = log.e1[-1]
        quantity = "e1"
    return {"quantity": quantity, "predicted": predicted, "observed": observed,
            "abs_diff": np.abs(predicted - observed)}


def workspace_grid(n: int = 2, per_axis: int = 5) -> list[np.ndarray]:
    axis = np.linspace(-math.pi, math.pi, per_axis, endpoint=False)
    mesh = np.meshgrid(*([axis] * n), indexing="ij")
    return [np.array(p) for p in zip(*(m.ravel() for m in mesh))]
