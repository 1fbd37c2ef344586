"""Numerical soundness oracles for the certificates.

Two kinds of checks live here. Randomised inequality suites draw many small
instances and compare each bound with the quantity it bounds. Trajectory
checks take one simulated closed loop together with its certificates and test
the per-step inequalities the certificates rely on.

Every check reports a *slack* (bound minus bounded quantity, so ``>= 0`` is
good) and counts a violation when the slack drops below ``-tol``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bounds import (
    CertificateBundle,
    ModelNorms,
    local_decay_constants,
    closed_loop_cost_factor,
    decrease_certificate,
    input_difference_bound,
    mismatch_propagators,
    multi_step_error_bound,
    one_step_error_coeff,
    stability_certificate,
    sufficient_conditions,
    value_gap_constants,
)
from .errors import NotStabilizableError, SamplingError
from .mpc import CondensedMpc, Trajectory, build_prediction_matrices
from .numerics import solve_dare, spectral_norm, spectral_radius
from .qp import CondensedQp, qp_solve
from .system import (
    CostWeights,
    InputPolytope,
    LinearSystem,
    UncertaintySpec,
    epsilon_K,
    input_set_extremes,
    sample_estimate,
)

TOL = 1e-9


@dataclass
class OracleResult:
    name: str
    checks: int = 0
    violations: int = 0
    worst_slack: float = math.inf
    tol: float = TOL

    def record(self, slack: float) -> None:
        slack = float(slack)
        self.checks += 1
        if math.isnan(slack) or slack < -self.tol:
            self.violations += 1
        if math.isnan(slack):
            self.worst_slack = -math.inf
        else:
            self.worst_slack = min(self.worst_slack, slack)

    def merge(self, other: "OracleResult") -> None:
        self.checks += other.checks
        self.violations += other.violations
        self.worst_slack = min(self.worst_slack, other.worst_slack)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "checks": self.checks,
            "violations": self.violations,
            "worst_slack": self.worst_slack,
            "passed": self.passed,
        }


# ---------------------------------------------------------------------------
# random instances


def random_spd(rng: np.random.Generator, n: int, lo: float = 0.2, hi: float = 5.0) -> np.ndarray:
    Qm, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return Qm @ np.diag(rng.uniform(lo, hi, n)) @ Qm.T


def random_system(rng: np.random.Generator, n: int, m: int, rho_max: float = 1.3) -> LinearSystem:
    """Random stabilizable pair with ``rho(A)`` drawn from ``[0.3, rho_max]``."""
    while True:
        A = rng.standard_normal((n, n))
        A *= rng.uniform(0.3, rho_max) / max(spectral_radius(A), 1e-12)
        B = rng.standard_normal((n, m))
        try:
            return LinearSystem(A, B)
        except NotStabilizableError:
            continue


def random_box(rng: np.random.Generator, m: int) -> InputPolytope:
    """Box ``|u_i| <= c_i`` written as ``F_u u <= 1``."""
    c = rng.uniform(0.1, 2.0, m)
    F = np.vstack([np.diag(1.0 / c), -np.diag(1.0 / c)])
    return InputPolytope(F)


def random_weights(rng: np.random.Generator, n: int, m: int) -> CostWeights:
    return CostWeights(random_spd(rng, n), random_spd(rng, m))


def _sample_pair(rng, n, m, delta_max=0.1):
    sys = random_system(rng, n, m)
    spec = UncertaintySpec(*rng.uniform(0.0, delta_max, 2))
    for _ in range(20):
        try:
            model = sample_estimate(sys, spec, seed=int(rng.integers(2**63)))
            return sys, model, spec
        except SamplingError:
            continue
    raise SamplingError("could not draw a stabilizable estimate")


# ---------------------------------------------------------------------------
# randomised inequality suites


def power_difference_suite(rng: np.random.Generator, instances: int = 500, i_max: int = 8) -> OracleResult:
    """``||A^i - A_hat^i|| <= g_x(i)`` and ``||A^i B - A_hat^i B_hat|| <= g_u(i)``."""
    res = OracleResult("matrix_power_difference")
    for _ in range(instances):
        n, m = int(rng.integers(1, 5)), int(rng.integers(1, 3))
        sys, model, spec = _sample_pair(rng, n, m)
        prop = mismatch_propagators(model, spec, 1, 1.0, 0.0, 0.0)
        Ai = np.eye(n)
        Ahi = np.eye(n)
        for i in range(i_max + 1):
            if i > 0:
                res.record(prop.g_x(i) - spectral_norm(Ai - Ahi))
            res.record(prop.g_u(i) - spectral_norm(Ai @ sys.B - Ahi @ model.B))
            Ai = sys.A @ Ai
            Ahi = model.A @ Ahi
    return res


def theta_suite(rng: np.random.Generator, instances: int = 200) -> OracleResult:
    """Block bounds on ``Gamma^T Qbar Gamma`` and ``Gamma^T Qbar Phi`` under mismatch."""
    res = OracleResult("theta_bounds")
    for _ in range(instances):
        n, m, N = int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(1, 9))
        sys, model, spec = _sample_pair(rng, n, m)
        W = random_weights(rng, n, m)
        true = build_prediction_matrices(sys, N, W)
        est = build_prediction_matrices(model, N, W)
        prop = mismatch_propagators(
            model, spec, N, W.q_extremes[1], spectral_norm(est.Gamma), spectral_norm(est.Phi)
        )
        Qb = true.Q_bar
        d_u = spectral_norm(est.Gamma.T @ Qb @ est.Gamma - true.Gamma.T @ Qb @ true.Gamma)
        d_xu = spectral_norm(est.Gamma.T @ Qb @ est.Phi - true.Gamma.T @ Qb @ true.Phi)
        res.record(prop.theta_u - d_u)
        res.record(prop.theta_xu - d_xu)
        res.record(prop.gbar_x - spectral_norm(est.Phi - true.Phi))
        res.record(prop.gbar_u - spectral_norm(est.Gamma - true.Gamma))
    return res


def qp_sensitivity_suite(rng: np.random.Generator, instances: int = 200) -> OracleResult:
    """Perturbed strictly convex QPs over a shared box."""
    res = OracleResult("qp_sensitivity")
    for _ in range(instances):
        k = int(rng.integers(1, 7))
        c = rng.uniform(0.1, 2.0, k)
        G = np.vstack([np.diag(1.0 / c), -np.diag(1.0 / c)])
        rhs = np.ones(2 * k)
        H = random_spd(rng, k, 0.5, 5.0)
        E = rng.standard_normal((k, k))
        H_hat = H + rng.uniform(0.0, 0.3) * (E + E.T) / 2.0
        lo = np.linalg.eigvalsh(H_hat)[0]
        if lo <= 1e-3:
            H_hat += (1e-3 - lo + 0.1) * np.eye(k)
            lo = np.linalg.eigvalsh(H_hat)[0]
        z = 3.0 * rng.standard_normal(k)
        z_hat = z + rng.uniform(0.0, 1.0) * rng.standard_normal(k)
        x = qp_solve(CondensedQp(H, z, G, rhs)).u_stack
        x_hat = qp_solve(CondensedQp(H_hat, z_hat, G, rhs)).u_stack
        diameter = 2.0 * float(np.linalg.norm(c))
        bound = min(
            diameter,
            (np.linalg.norm(x) * spectral_norm(H - H_hat) + np.linalg.norm(z - z_hat)) / lo,
        )
        res.record(bound - np.linalg.norm(x - x_hat))
    return res


def _random_mpc_instance(rng):
    n, m, N = int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(1, 9))
    sys, model, spec = _sample_pair(rng, n, m)
    W = random_weights(rng, n, m)
    U = random_box(rng, m)
    x = rng.standard_normal(n) * rng.uniform(0.05, 3.0)
    return sys, model, spec, W, U, N, x


def input_difference_suite(rng: np.random.Generator, instances: int = 200) -> OracleResult:
    """Distance between the ideal and nominal optimal input stacks."""
    res = OracleResult("input_difference")
    for _ in range(instances):
        sys, model, spec, W, U, N, x = _random_mpc_instance(rng)
        norms = ModelNorms.of(model, W, N)
        ext = input_set_extremes(U)
        prop = mismatch_propagators(model, spec, N, W.q_extremes[1], norms.norm_Gamma_hat, norms.norm_Phi_hat)
        bound = input_difference_bound(prop, norms.H_hat_sigma_min, ext, N, x)
        u_true = CondensedMpc(sys, W, U, N).solve(x).u_stack
        u_hat = CondensedMpc(model, W, U, N).solve(x).u_stack
        res.record(bound - np.linalg.norm(u_true - u_hat))
    return res


def multi_step_suite(rng: np.random.Generator, instances: int = 200) -> OracleResult:
    """Squared open-loop prediction error of the nominal plan under the true dynamics."""
    res = OracleResult("multi_step_error")
    for _ in range(instances):
        sys, model, spec, W, U, N, x = _random_mpc_instance(rng)
        norms = ModelNorms.of(model, W, N)
        ext = input_set_extremes(U)
        prop = mismatch_propagators(model, spec, N, W.q_extremes[1], norms.norm_Gamma_hat, norms.norm_Phi_hat)
        u_hat = CondensedMpc(model, W, U, N).solve(x).u_stack
        true = build_prediction_matrices(sys, N)
        est = build_prediction_matrices(model, N)
        err = (true.Phi - est.Phi) @ x + (true.Gamma - est.Gamma) @ u_hat
        res.record(multi_step_error_bound(prop, ext, N, x) - float(err @ err))
    return res


def one_step_suite(rng: np.random.Generator, instances: int = 200) -> OracleResult:
    """``||(A - A_hat) x + (B - B_hat) u||^2 <= h l(x, u)``."""
    res = OracleResult("one_step_error")
    for _ in range(instances):
        n, m = int(rng.integers(1, 5)), int(rng.integers(1, 3))
        sys, model, spec = _sample_pair(rng, n, m)
        W = random_weights(rng, n, m)
        h = one_step_error_coeff(spec, W)
        for _ in range(5):
            x = rng.standard_normal(n)
            u = rng.standard_normal(m)
            dx = (sys.A - model.A) @ x + (sys.B - model.B) @ u
            res.record(h * (x @ W.Q @ x + u @ W.R @ u) - dx @ dx)
    return res


def quadratic_norm_suite(rng: np.random.Generator, instances: int = 500) -> OracleResult:
    """``sum ||a_i + s b_i||_Q^2 <= sum ||a_i||_Q^2 + sum ||b_i||_Q^2 + 2 sqrt(prod)`` for ``s = +-1``."""
    res = OracleResult("quadratic_norm")
    for _ in range(instances):
        n, k = int(rng.integers(1, 5)), int(rng.integers(1, 6))
        Q = random_spd(rng, n)
        a = rng.standard_normal((k, n)) * rng.uniform(0.01, 10.0)
        b = rng.standard_normal((k, n)) * rng.uniform(0.01, 10.0)
        sa = float(np.einsum("ij,jk,ik->", a, Q, a))
        sb = float(np.einsum("ij,jk,ik->", b, Q, b))
        for s in (1.0, -1.0):
            c = a + s * b
            lhs = float(np.einsum("ij,jk,ik->", c, Q, c))
            res.record((sa + sb + 2.0 * math.sqrt(sa * sb) - lhs) / max(1.0, sa + sb))
    return res


def sqrt_linear_suite(rng: np.random.Generator, instances: int = 200, grid_points: int = 400) -> OracleResult:
    """``sqrt(x) <= p x + q`` on ``[0, 1e6]`` whenever ``4 p q = 1``."""
    res = OracleResult("sqrt_linear")
    xs = np.concatenate([[0.0], np.logspace(-12, 6, grid_points)])
    for _ in range(instances):
        p = 10.0 ** rng.uniform(-4, 4)
        q = 1.0 / (4.0 * p)
        xs_all = np.concatenate([xs, [q / p]])  # touching point
        slack = (p * xs_all + q - np.sqrt(xs_all)) / np.maximum(1.0, p * xs_all + q)
        res.record(float(np.min(slack)))
    return res


def _random_stable_closed_loop(rng):
    n, m = int(rng.integers(1, 5)), int(rng.integers(1, 3))
    sys = random_system(rng, n, m)
    W = random_weights(rng, n, m)
    _, K = solve_dare(sys.A, sys.B, W.Q, W.R)
    return sys, W, K


def gelfand_suite(rng: np.random.Generator, instances: int = 200, k_max: int = 50) -> OracleResult:
    """``||A_cl^k|| <= lambda_K sqrt(rho_K)^k`` for ``k <= k_max``."""
    res = OracleResult("gelfand_decay")
    for _ in range(instances):
        sys, W, K = _random_stable_closed_loop(rng)
        A_cl = sys.A + sys.B @ K
        lam, rho = local_decay_constants(A_cl)
        Ak = np.eye(sys.n)
        for k in range(k_max + 1):
            res.record(lam * math.sqrt(rho) ** k - spectral_norm(Ak))
            Ak = A_cl @ Ak
    return res


def local_decay_suite(rng: np.random.Generator, instances: int = 200, k_max: int = 30) -> OracleResult:
    """``l(x_k, K x_k) <= C*_K rho_K^k l*(x)`` under the unconstrained local law."""
    res = OracleResult("local_decay")
    for _ in range(instances):
        sys, W, K = _random_stable_closed_loop(rng)
        A_cl = sys.A + sys.B @ K
        lam, rho = local_decay_constants(A_cl)
        C = closed_loop_cost_factor(K, W, lam)
        x = rng.standard_normal(sys.n)
        l_star = float(x @ W.Q @ x)
        z = x
        for k in range(k_max + 1):
            u = K @ z
            stage = float(z @ W.Q @ z + u @ W.R @ u)
            res.record((C * rho**k * l_star - stage) / max(l_star, 1e-300))
            z = A_cl @ z
    return res


def threshold_identity_suite(rng: np.random.Generator, instances: int = 200) -> OracleResult:
    """Substituting ``h = threshold`` into the decrease margin gives zero."""
    res = OracleResult("threshold_root", tol=1e-10)
    attempts = 0
    while res.checks < instances and attempts < 50 * instances:
        attempts += 1
        n, m = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        sys = random_system(rng, n, m)
        W = random_weights(rng, n, m)
        U = random_box(rng, m)
        N = int(rng.integers(1, 12))
        x = rng.standard_normal(n) * 0.1
        try:
            M = CondensedMpc(sys, W, U, N).solve(x).value
            cert = stability_certificate(sys, W, U, M)
        except Exception:
            continue
        spec = UncertaintySpec(0.0, 0.0)
        dec = decrease_certificate(cert, sys, W, spec, N)
        cond = sufficient_conditions(cert, dec, spec, W, N)
        if dec.eta_N >= 1.0 or not math.isfinite(cond.h_threshold):
            continue
        h = cond.h_threshold
        margin = 1.0 - (dec.omega_1 * h + 2.0 * dec.omega_half * math.sqrt(h)) - dec.eta_N
        res.record(-abs(margin))
    return res


INEQUALITY_SUITES = {
    "matrix_power_difference": power_difference_suite,
    "theta_bounds": theta_suite,
    "qp_sensitivity": qp_sensitivity_suite,
    "input_difference": input_difference_suite,
    "multi_step_error": multi_step_suite,
    "one_step_error": one_step_suite,
    "quadratic_norm": quadratic_norm_suite,
    "sqrt_linear": sqrt_linear_suite,
    "gelfand_decay": gelfand_suite,
    "local_decay": local_decay_suite,
    "threshold_root": threshold_identity_suite,
}


def run_inequality_suites(seed: int = 0, instances: int | None = None) -> dict[str, OracleResult]:
    """Every randomised suite with its default size (or ``instances`` each)."""
    out = {}
    for i, (name, fn) in enumerate(INEQUALITY_SUITES.items()):
        rng = np.random.default_rng([seed, i])
        out[name] = fn(rng) if instances is None else fn(rng, instances)
    return out


# ---------------------------------------------------------------------------
# trajectory checks


def _empty_trajectory_results() -> dict[str, OracleResult]:
    names = ["cost_below_bound", "value_gap", "value_decrease", "terminal_decay", "ratio_bound", "state_shift", "one_step_h"]
    out = {n: OracleResult(n) for n in names}
    out["state_shift"].tol = 1e-10
    return out


def trajectory_checks(
    true_sys: LinearSystem,
    bundle: CertificateBundle,
    W: CostWeights,
    U: InputPolytope,
    traj: Trajectory | None,
    v_inf: float,
) -> dict[str, OracleResult]:
    """Per-trial soundness checks; ``traj=None`` means the closed loop diverged."""
    out = _empty_trajectory_results()
    model, N = bundle.model, bundle.N
    st, dec, vg, b = bundle.stability, bundle.decrease, bundle.value_gap, bundle.bound
    margin = dec.margin

    if traj is None:
        if b.stable:
            out["cost_below_bound"].record(-math.inf)
        return out

    if b.stable:
        out["cost_below_bound"].record(b.j_bound - traj.total_cost)
    out["value_gap"].record((1.0 + vg.alpha_N) * v_inf + vg.beta_N - traj.values[0])

    pred = build_prediction_matrices(model, N)
    n = model.n
    h = dec.h
    decay = st.gamma * st.rho_gamma ** (N - st.N0)
    powers = [np.eye(n)]
    for _ in range(N):
        powers.append(model.A @ powers[-1])
    level = st.M_Vhat * (1.0 + 1e-12) + 1e-300
    for t, stage in enumerate(traj.stage_costs):
        x = traj.states[t]
        u = traj.inputs[t]
        plan = traj.plans[t]
        value = traj.values[t]
        if margin > 0.0 and t + 1 < len(traj.values):
            out["value_decrease"].record(-margin * stage - (traj.values[t + 1] - value))
        if N >= st.N0 and value <= level:
            xN = pred.Phi[-n:] @ x + pred.Gamma[-n:] @ plan
            out["terminal_decay"].record(decay * stage - xN @ W.Q @ xN)
            out["ratio_bound"].record(st.L_Vhat * float(x @ W.Q @ x) - value)
        dx = (true_sys.A - model.A) @ x + (true_sys.B - model.B) @ u
        out["one_step_h"].record(h * stage - dx @ dx)
        # shifted plan from the successor state versus the original plan plus propagated error
        x_next = traj.states[t + 1]
        shifted = np.concatenate([plan[model.m:], np.zeros(model.m)])
        here = pred.Phi @ x + pred.Gamma @ plan
        there = pred.Phi @ x_next + pred.Gamma @ shifted
        scale = max(1.0, float(np.max(np.abs(here))))
        for k in range(N):
            lhs = there[k * n:(k + 1) * n]
            rhs = here[(k + 1) * n:(k + 2) * n] + powers[k] @ dx
            out["state_shift"].record(-float(np.max(np.abs(lhs - rhs))) / scale)
    return out


def extension_admissible(
    true_sys: LinearSystem,
    bundle: CertificateBundle,
    W: CostWeights,
    U: InputPolytope,
    traj: Trajectory,
) -> bool:
    """Does the candidate terminal state ``psi_hat(N) + A_hat^{N-1} dx`` stay in ``Omega_{K_hat}`` along the run?"""
    dec = bundle.decrease
    if dec.K_hat is None:
        return False
    model, N, n = bundle.model, bundle.N, bundle.model.n
    eps = epsilon_K(dec.K_hat, U, W.Q)
    pred = build_prediction_matrices(model, N)
    A_pow = np.linalg.matrix_power(model.A, N - 1)
    for t in range(len(traj.stage_costs)):
        x, u, plan = traj.states[t], traj.inputs[t], traj.plans[t]
        dx = (true_sys.A - model.A) @ x + (true_sys.B - model.B) @ u
        z = pred.Phi[-n:] @ x + pred.Gamma[-n:] @ plan + A_pow @ dx
        if float(z @ W.Q @ z) > eps:
            return False
    return True


# ---------------------------------------------------------------------------
# error consistency


def error_consistency_grid(
    model: LinearSystem,
    W: CostWeights,
    U: InputPolytope,
    N: int,
    x,
    deltas_A,
    deltas_B,
) -> dict[str, np.ndarray]:
    """Every mismatch-dependent constant on the ``deltas_A x deltas_B`` grid (model fixed)."""
    norms = ModelNorms.of(model, W, N)
    ext = input_set_extremes(U)
    M = CondensedMpc(model, W, U, N).solve(x).value
    cert = stability_certificate(model, W, U, M)
    keys = [
        "gbar_x", "gbar_u", "theta_u", "theta_xu", "Delta_du", "Delta_psi",
        "E_psi", "E_u", "E_psi_u", "alpha_N", "beta_N", "xi_N", "h",
    ]
    out = {k: np.zeros((len(deltas_A), len(deltas_B))) for k in keys}
    for i, dA in enumerate(deltas_A):
        for j, dB in enumerate(deltas_B):
            spec = UncertaintySpec(dA, dB)
            vg = value_gap_constants(model, spec, W, U, N, x, norms=norms, extremes=ext)
            dec = decrease_certificate(cert, model, W, spec, N)
            for k in keys:
                src = dec if k in ("xi_N", "h") else vg
                out[k][i, j] = getattr(src, k)
    return out


# quantities that depend on a single radius only; zero-iff is checked against that radius
SINGLE_RADIUS = {"gbar_x": "A"}


def check_error_consistency(grid: dict[str, np.ndarray], deltas_A, deltas_B) -> OracleResult:
    """Non-decreasing along both axes and zero exactly at zero mismatch."""
    res = OracleResult("error_consistency", tol=0.0)
    dA = np.asarray(deltas_A)
    dB = np.asarray(deltas_B)
    for name, vals in grid.items():
        rel = 1e-12 * np.maximum(1.0, np.abs(vals))
        steps_a = np.diff(vals, axis=0) + rel[1:, :]
        steps_b = np.diff(vals, axis=1) + rel[:, 1:]
        for s in np.concatenate([steps_a.ravel(), steps_b.ravel()]):
            res.record(float(s))
        zero_a = (dA == 0.0)[:, None]
        zero_b = (dB == 0.0)[None, :]
        expected_zero = zero_a if SINGLE_RADIUS.get(name) == "A" else zero_a & zero_b
        expected_zero = np.broadcast_to(expected_zero, vals.shape)
        for ez, v in zip(expected_zero.ravel(), vals.ravel()):
            res.record(0.0 if (v == 0.0) == bool(ez) else -1.0)
    return res
