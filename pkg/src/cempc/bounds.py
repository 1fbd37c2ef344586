"""Stability and performance certificates for certainty-equivalent MPC under model mismatch.

Every quantity is computed from the estimated model ``(A_hat, B_hat)``, the
weights, the input set and the mismatch radii only; the true system never
enters. Naming follows the usual symbols: ``g`` propagators, ``theta`` block
bounds, ``E`` value-gap terms, ``alpha_N``/``beta_N`` value gap, ``xi_N``/``eta_N``
decrease constants.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .errors import InvalidBudgetError, InvalidHorizonError, InvalidInputError, MissingGainError
from .mpc import CondensedMpc, build_prediction_matrices
from .numerics import as_matrix, as_vector, solve_dare, solve_dlyap, spectral_norm, sym_eig_extremes
from .system import (
    CostWeights,
    InputPolytope,
    InputSetExtremes,
    LinearSystem,
    UncertaintySpec,
    epsilon_K,
    input_set_extremes,
)

EPS_K_CAP = 1e12
Mode = Literal["baseline", "extension"]


# ---------------------------------------------------------------------------
# mismatch propagation


@dataclass(frozen=True)
class MismatchPropagators:
    """Bounds on ``||A^i - A_hat^i||`` and ``||A^i B - A_hat^i B_hat||`` and their horizon sums."""

    delta_A: float
    delta_B: float
    norm_A_hat: float
    norm_B_hat: float
    N: int
    gbar_x: float
    gbar_u: float
    theta_u: float
    theta_xu: float
    norm_Gamma_hat: float
    norm_Phi_hat: float

    def g_x(self, i: int, power: int = 1) -> float:
        a = self.norm_A_hat
        return ((self.delta_A + a) ** i - a**i) ** power

    def g_u(self, i: int, power: int = 1) -> float:
        base = (self.delta_B + self.norm_B_hat) * self.g_x(i, 1) + self.delta_B * self.norm_A_hat**i
        return base**power


def mismatch_propagators(
    model: LinearSystem,
    spec: UncertaintySpec,
    N: int,
    Qbar_sigma_max: float,
    Gamma_hat_norm: float,
    Phi_hat_norm: float,
) -> MismatchPropagators:
    if N < 1:
        raise InvalidHorizonError(f"horizon must be >= 1, got {N}")
    a = spectral_norm(model.A)
    bn = spectral_norm(model.B)
    dA, dB = spec.delta_A, spec.delta_B

    def gx(i):
        return (dA + a) ** i - a**i

    def gu(j):
        return (dB + bn) * gx(j) + dB * a**j

    gbar_x = sum(gx(i) for i in range(1, N + 1))
    # inner sum over j < i, accumulated
    gbar_u = 0.0
    partial = 0.0
    for i in range(1, N + 1):
        partial += gu(i - 1)
        gbar_u += partial
    theta_u = Qbar_sigma_max * (2.0 * Gamma_hat_norm * gbar_u + gbar_u**2)
    theta_xu = Qbar_sigma_max * (Gamma_hat_norm * gbar_x + Phi_hat_norm * gbar_u + gbar_x * gbar_u)
    return MismatchPropagators(dA, dB, a, bn, N, gbar_x, gbar_u, theta_u, theta_xu, Gamma_hat_norm, Phi_hat_norm)


def input_difference_bound(
    prop: MismatchPropagators,
    H_hat_sigma_min: float,
    extremes: InputSetExtremes,
    N: int,
    x,
) -> float:
    """Upper bound on ``||u*_N(x) - u_hat*_N(x)||_2`` (ideal vs nominal optimal input stacks)."""
    if H_hat_sigma_min <= 0.0:
        raise InvalidInputError("H_hat must be positive definite")
    x_norm = float(np.linalg.norm(as_vector(x, "x")))
    sensitivity = (math.sqrt(N * extremes.u_bar) * prop.theta_u + x_norm * prop.theta_xu) / H_hat_sigma_min
    return min(math.sqrt(N * extremes.d_bar_u), sensitivity)


def multi_step_error_bound(prop: MismatchPropagators, extremes: InputSetExtremes, N: int, x) -> float:
    """Upper bound on the squared norm of the stacked open-loop prediction error ``[e(0); ...; e(N)]``."""
    x_sq = float(np.sum(as_vector(x, "x") ** 2))
    total = 0.0
    for k in range(N + 1):
        coeff = prop.g_x(k, 2) + sum(prop.g_u(k - i - 1, 2) for i in range(k))
        total += coeff * (x_sq + k * extremes.u_bar)
    return total


def one_step_error_coeff(spec: UncertaintySpec, W: CostWeights) -> float:
    """``h`` with ``||(A - A_hat) x + (B - B_hat) u||^2 <= h * l(x, u)``."""
    q_min = W.q_extremes[0]
    r_min = W.r_extremes[0]
    return spec.delta_A**2 / q_min + spec.delta_B**2 / r_min


# ---------------------------------------------------------------------------
# value gap (V_hat_N versus V_inf)


@dataclass(frozen=True)
class ValueGapBound:
    E_psi: float
    E_u: float
    E_psi_u: float
    Delta_du: float
    Delta_psi: float
    p: tuple[float, float, float]
    q: tuple[float, float, float]
    alpha_N: float
    beta_N: float
    gbar_x: float = 0.0
    gbar_u: float = 0.0
    theta_u: float = 0.0
    theta_xu: float = 0.0


DEFAULT_BUDGET = (1.0, 1.0, 1.0)


def budget_companions(p: Sequence[float]) -> tuple[float, float, float]:
    """Companion weights ``q_i = 1 / p_i``.

    The cross terms being linearised carry a factor 2 (``2 sqrt(S E)``), and
    ``2 sqrt(S) <= p S + q`` holds exactly when ``p q >= 1``.
    """
    p = tuple(float(v) for v in p)
    if len(p) != 3 or any(not math.isfinite(v) or v <= 0.0 for v in p):
        raise InvalidBudgetError(f"budget needs three positive finite scalars, got {p}")
    return tuple(1.0 / v for v in p)  # type: ignore[return-value]


def alpha_beta(E_psi: float, E_u: float, E_psi_u: float, p: Sequence[float]) -> tuple[float, float]:
    q = budget_companions(p)
    p1, p2, p3 = (float(v) for v in p)
    q1, q2, q3 = q
    s_psi, s_u, s_psiu = math.sqrt(E_psi), math.sqrt(E_u), math.sqrt(E_psi_u)
    alpha = max(p1 * s_psi + p3 * s_psiu + p1 * p3 * s_psi * s_psiu, p2 * s_u)
    beta = (1.0 + p1 * s_psi) * (q3 * s_psiu + E_psi_u) + q2 * s_u + E_u + q1 * s_psi + E_psi
    return alpha, beta


@dataclass(frozen=True, eq=False)
class ModelNorms:
    """Norms of the estimated model's prediction matrices needed by the value-gap bound."""

    N: int
    norm_Gamma_hat: float
    norm_Phi_hat: float
    H_hat_sigma_min: float

    @classmethod
    def of(cls, model: LinearSystem, W: CostWeights, N: int) -> "ModelNorms":
        pred = build_prediction_matrices(model, N, W)
        H = pred.R_bar + pred.Gamma.T @ pred.Q_bar @ pred.Gamma
        H = 0.5 * (H + H.T)
        return cls(N, spectral_norm(pred.Gamma), spectral_norm(pred.Phi), sym_eig_extremes(H)[0])


def value_gap_constants(
    model: LinearSystem,
    spec: UncertaintySpec,
    W: CostWeights,
    U: InputPolytope,
    N: int,
    x,
    p_budget: Sequence[float] = DEFAULT_BUDGET,
    norms: ModelNorms | None = None,
    extremes: InputSetExtremes | None = None,
) -> ValueGapBound:
    q = budget_companions(p_budget)
    norms = norms or ModelNorms.of(model, W, N)
    extremes = extremes or input_set_extremes(U)
    q_max = W.q_extremes[1]
    r_max = W.r_extremes[1]
    prop = mismatch_propagators(model, spec, N, q_max, norms.norm_Gamma_hat, norms.norm_Phi_hat)
    Delta_du = input_difference_bound(prop, norms.H_hat_sigma_min, extremes, N, x)
    Delta_psi = multi_step_error_bound(prop, extremes, N, x)
    E_psi = q_max * Delta_psi
    E_u = r_max * Delta_du**2
    E_psi_u = (q_max / r_max) * (norms.norm_Gamma_hat + prop.gbar_u) ** 2 * E_u
    alpha, beta = alpha_beta(E_psi, E_u, E_psi_u, p_budget)
    return ValueGapBound(
        E_psi, E_u, E_psi_u, Delta_du, Delta_psi, tuple(float(v) for v in p_budget), q, alpha, beta,
        prop.gbar_x, prop.gbar_u, prop.theta_u, prop.theta_xu,
    )


# ---------------------------------------------------------------------------
# local stabilization and decrease constants


@dataclass(frozen=True, eq=False)
class StabilityCertificate:
    K: np.ndarray
    lambda_K: float
    rho_K: float
    C_star_K: float
    eps_K: float
    gamma: float
    rho_gamma: float
    N0: int
    L_Vhat: float
    M_Vhat: float
    eps_K_clamped: bool = False


def local_decay_constants(A_cl) -> tuple[float, float]:
    """``(lambda, rho)`` with ``||A_cl^k||_2 <= lambda * sqrt(rho)^k`` for all k.

    From ``P - A_cl^T P A_cl = I``: ``||A_cl^k x||_P^2 <= (1 - 1/sigma_max(P))^k ||x||_P^2``.
    """
    P = solve_dlyap(A_cl)
    lo, hi, ratio = sym_eig_extremes(P)
    return math.sqrt(ratio), 1.0 - 1.0 / hi


def closed_loop_cost_factor(K: np.ndarray, W: CostWeights, lambda_K: float) -> float:
    """``C*_K = (1 + sigma_max(R) ||K||^2 / sigma_min(Q)) r_Q lambda_K^2``."""
    q_min, _, r_q = W.q_extremes
    r_max = W.r_extremes[1]
    return (1.0 + r_max * spectral_norm(K) ** 2 / q_min) * r_q * lambda_K**2


def stability_certificate(
    model: LinearSystem,
    W: CostWeights,
    U: InputPolytope,
    M_Vhat: float,
    K=None,
) -> StabilityCertificate:
    """Constants of the local LQR law on the estimated model.

    ``K`` defaults to the LQR gain of ``(A_hat, B_hat, Q, R)``.
    """
    if M_Vhat < 0.0 or not math.isfinite(M_Vhat):
        raise InvalidInputError(f"M_Vhat must be finite and >= 0, got {M_Vhat}")
    if K is None:
        _, K = solve_dare(model.A, model.B, W.Q, W.R)
    K = as_matrix(K, "K")
    lam, rho = local_decay_constants(model.A + model.B @ K)
    C_star = closed_loop_cost_factor(K, W, lam)
    eps = epsilon_K(K, U, W.Q)
    clamped = False
    if not math.isfinite(eps) or eps > EPS_K_CAP:
        warnings.warn("epsilon_K unbounded (gain never saturates); clamped", RuntimeWarning, stacklevel=2)
        eps = min(eps, EPS_K_CAP)
        clamped = True
    gamma = C_star / (1.0 - rho)
    rho_gamma = (gamma - 1.0) / gamma
    L = max(gamma, M_Vhat / eps)
    N0 = math.ceil(max(0.0, (M_Vhat - gamma * eps) / eps))
    return StabilityCertificate(K, lam, rho, C_star, eps, gamma, rho_gamma, N0, L, M_Vhat, clamped)


@dataclass(frozen=True, eq=False)
class DecreaseCertificate:
    G_N: float
    omega_1: float
    omega_half: float
    eta_N: float
    xi_N: float
    h: float
    mode: str = "baseline"
    terminal_factor: float = 0.0  # 1 + ||A_hat||^2 r_Q, or C*_Khat + r_Q ||A_cl_hat||^2 in extension mode
    eta_coeff: float = 0.0  # eta_N = eta_coeff * gamma * rho_gamma^(N - N0)
    K_hat: np.ndarray | None = None
    A_cl_hat_norm: float | None = None
    C_star_Khat: float | None = None
    admissibility_checked: bool = False

    @property
    def margin(self) -> float:
        return 1.0 - self.xi_N - self.eta_N


def geometric_sum(norm_A_hat: float, N: int) -> float:
    """``sum_{i=1}^{N-1} ||A_hat||^{2(i-1)}``."""
    a2 = norm_A_hat**2
    if a2 == 1.0:
        return float(N - 1)
    return (1.0 - a2 ** (N - 1)) / (1.0 - a2)


def decrease_certificate(
    cert: StabilityCertificate,
    model: LinearSystem,
    W: CostWeights,
    spec: UncertaintySpec,
    N: int,
    mode: Mode = "baseline",
    K_hat=None,
) -> DecreaseCertificate:
    if N < 1:
        raise InvalidHorizonError(f"horizon must be >= 1, got {N}")
    _, q_max, r_q = W.q_extremes
    a = spectral_norm(model.A)
    a2 = a * a
    G = geometric_sum(a, N)
    decay = cert.gamma * cert.rho_gamma ** (N - cert.N0)
    h = one_step_error_coeff(spec, W)

    extra = {}
    if mode == "baseline":
        factor = 1.0 + a2 * r_q
        eta_coeff = a2 * r_q
    elif mode == "extension":
        if K_hat is None:
            raise MissingGainError("extension mode needs a terminal gain K_hat")
        K_hat = as_matrix(K_hat, "K_hat")
        A_cl = model.A + model.B @ K_hat
        lam_hat, _ = local_decay_constants(A_cl)
        C_hat = closed_loop_cost_factor(K_hat, W, lam_hat)
        cl_norm = spectral_norm(A_cl)
        factor = C_hat + r_q * cl_norm**2
        eta_coeff = factor - 1.0
        extra = {"K_hat": K_hat, "A_cl_hat_norm": cl_norm, "C_star_Khat": C_hat}
    else:
        raise InvalidInputError(f"unknown mode {mode!r}")

    eta = eta_coeff * decay
    omega_1 = q_max * (factor * a2 ** (N - 1) + G)
    omega_half = math.sqrt(q_max * (cert.L_Vhat - 1.0) * G) + 0.5 * factor * math.sqrt(q_max * a2 ** (N - 1) * decay)
    xi = omega_1 * h + 2.0 * omega_half * math.sqrt(h)
    return DecreaseCertificate(G, omega_1, omega_half, eta, xi, h, mode, factor, eta_coeff, **extra)


@dataclass(frozen=True)
class SufficientConditions:
    horizon_ok: bool
    min_horizon: float
    h_threshold: float
    mismatch_ok: bool


def sufficient_conditions(
    cert: StabilityCertificate,
    dec: DecreaseCertificate,
    spec: UncertaintySpec,
    W: CostWeights,
    N: int,
) -> SufficientConditions:
    """Horizon length and mismatch size that together guarantee a positive decrease margin."""
    scaled = dec.eta_coeff * cert.gamma
    log_inv_rho = -math.log(cert.rho_gamma)
    if scaled <= 0.0:
        min_horizon = -math.inf
    else:
        min_horizon = cert.N0 + math.log(scaled) / log_inv_rho
    horizon_ok = N > min_horizon

    if dec.omega_1 == 0.0:
        threshold = math.inf
    elif dec.eta_N >= 1.0:
        threshold = 0.0
    else:
        w1, wh = dec.omega_1, dec.omega_half
        threshold = ((-wh + math.sqrt(wh * wh + w1 * (1.0 - dec.eta_N))) / w1) ** 2
    h = one_step_error_coeff(spec, W)
    return SufficientConditions(horizon_ok, min_horizon, threshold, h < threshold)


# ---------------------------------------------------------------------------
# final bound


@dataclass(frozen=True)
class PerformanceBound:
    alpha_N: float
    beta_N: float
    xi_N: float
    eta_N: float
    v_inf: float
    j_bound: float
    stable: bool

    @property
    def margin(self) -> float:
        return 1.0 - self.xi_N - self.eta_N


def performance_bound(vg: ValueGapBound, dec: DecreaseCertificate, v_inf: float) -> PerformanceBound:
    if v_inf < 0.0:
        raise InvalidInputError("v_inf must be >= 0")
    margin = dec.margin
    if margin > 0.0:
        j = (1.0 + vg.alpha_N) / margin * v_inf + vg.beta_N / margin
        stable = True
    else:
        j = math.inf
        stable = False
    return PerformanceBound(vg.alpha_N, vg.beta_N, dec.xi_N, dec.eta_N, v_inf, j, stable)


def log_budget_grid(lo: float = 1e-3, hi: float = 1e3, points: int = 13) -> list[tuple[float, float, float]]:
    axis = np.logspace(math.log10(lo), math.log10(hi), points)
    return [(float(a), float(b), float(c)) for a in axis for b in axis for c in axis]


def optimize_budget(
    vg: ValueGapBound,
    dec: DecreaseCertificate,
    v_inf: float,
    grid: Sequence[Sequence[float]] | None = None,
) -> tuple[tuple[float, float, float], float]:
    """Budget triple from ``grid`` minimising the final bound (first one wins on ties)."""
    grid = log_budget_grid() if grid is None else list(grid)
    if not grid:
        raise InvalidInputError("empty budget grid")
    best_p, best_j = None, math.inf
    for p in grid:
        alpha, beta = alpha_beta(vg.E_psi, vg.E_u, vg.E_psi_u, p)
        bound = performance_bound(
            ValueGapBound(vg.E_psi, vg.E_u, vg.E_psi_u, vg.Delta_du, vg.Delta_psi, tuple(p), budget_companions(p), alpha, beta),
            dec,
            v_inf,
        )
        if best_p is None or bound.j_bound < best_j:
            best_p, best_j = tuple(float(v) for v in p), bound.j_bound
    return best_p, best_j


# ---------------------------------------------------------------------------
# one-call bundle


@dataclass(frozen=True, eq=False)
class CertificateBundle:
    model: LinearSystem
    spec: UncertaintySpec
    N: int
    stability: StabilityCertificate
    value_gap: ValueGapBound
    decrease: DecreaseCertificate
    conditions: SufficientConditions
    bound: PerformanceBound
    extremes: InputSetExtremes
    norms: ModelNorms
    extra: dict = field(default_factory=dict)

    def dump(self) -> dict:
        """Flat map of every named constant, keyed by symbol name."""
        vg, st, dec, cond, b = self.value_gap, self.stability, self.decrease, self.conditions, self.bound
        out = {
            "delta_A": self.spec.delta_A,
            "delta_B": self.spec.delta_B,
            "N": self.N,
            "gbar_x": vg.gbar_x,
            "gbar_u": vg.gbar_u,
            "theta_u": vg.theta_u,
            "theta_xu": vg.theta_xu,
            "Delta_du": vg.Delta_du,
            "Delta_psi": vg.Delta_psi,
            "E_psi": vg.E_psi,
            "E_u": vg.E_u,
            "E_psi_u": vg.E_psi_u,
            "p1": vg.p[0], "p2": vg.p[1], "p3": vg.p[2],
            "alpha_N": vg.alpha_N,
            "beta_N": vg.beta_N,
            "h": dec.h,
            "G_N": dec.G_N,
            "omega_1": dec.omega_1,
            "omega_half": dec.omega_half,
            "xi_N": dec.xi_N,
            "eta_N": dec.eta_N,
            "margin": dec.margin,
            "lambda_K": st.lambda_K,
            "rho_K": st.rho_K,
            "C_star_K": st.C_star_K,
            "eps_K": st.eps_K,
            "gamma": st.gamma,
            "rho_gamma": st.rho_gamma,
            "N0": st.N0,
            "L_Vhat": st.L_Vhat,
            "M_Vhat": st.M_Vhat,
            "min_horizon": cond.min_horizon,
            "h_threshold": cond.h_threshold,
            "horizon_ok": cond.horizon_ok,
            "mismatch_ok": cond.mismatch_ok,
            "v_inf": b.v_inf,
            "j_bound": b.j_bound,
            "stable": b.stable,
            "eps_K_clamped": st.eps_K_clamped,
            "mode": dec.mode,
        }
        if dec.mode == "extension":
            out.update(
                {
                    "A_cl_hat_norm": dec.A_cl_hat_norm,
                    "C_star_Khat": dec.C_star_Khat,
                    "admissibility_checked": dec.admissibility_checked,
                }
            )
        out.update(self.extra)
        return out


def certify(
    model: LinearSystem,
    spec: UncertaintySpec,
    W: CostWeights,
    U: InputPolytope,
    N: int,
    x0,
    v_inf: float,
    mode: Mode = "baseline",
    p_budget: Sequence[float] | Literal["optimize"] = DEFAULT_BUDGET,
    M_Vhat: float | None = None,
    K_hat=None,
) -> CertificateBundle:
    """Every certificate for one estimated model, horizon and initial state.

    ``M_Vhat`` defaults to ``V_hat_N(x0)``. In extension mode ``K_hat`` defaults
    to the LQR gain used for the local certificate.
    """
    x0 = as_vector(x0, "x0")
    norms = ModelNorms.of(model, W, N)
    extremes = input_set_extremes(U)
    if M_Vhat is None:
        M_Vhat = CondensedMpc(model, W, U, N).solve(x0).value
    stab = stability_certificate(model, W, U, M_Vhat)
    if mode == "extension" and K_hat is None:
        K_hat = stab.K
    dec = decrease_certificate(stab, model, W, spec, N, mode, K_hat)
    cond = sufficient_conditions(stab, dec, spec, W, N)
    optimize = isinstance(p_budget, str)
    p0 = DEFAULT_BUDGET if optimize else p_budget
    vg = value_gap_constants(model, spec, W, U, N, x0, p0, norms, extremes)
    if optimize:
        p_best, _ = optimize_budget(vg, dec, v_inf)
        vg = value_gap_constants(model, spec, W, U, N, x0, p_best, norms, extremes)
    bound = performance_bound(vg, dec, v_inf)
    return CertificateBundle(model, spec, N, stab, vg, dec, cond, bound, extremes, norms)
