"""Condensed finite-horizon MPC without terminal cost: prediction matrices, control laws, closed loops."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, InvalidHorizonError, InvalidInputError, RoaMembershipUnknownError
from .numerics import as_vector
from .qp import CondensedQp, QpSolution, qp_solve
from .system import CostWeights, InputPolytope, LinearSystem

DIVERGENCE_NORM = 1e12
# beyond this the condensed Hessian of an unstable model is numerically meaningless
MAX_HESSIAN_COND = 1e10


@dataclass(frozen=True, eq=False)
class PredictionMatrices:
    """Stacked predictions ``[x_0; ...; x_N] = Phi x + Gamma [u_0; ...; u_{N-1}]``."""

    Phi: np.ndarray
    Gamma: np.ndarray
    Q_bar: np.ndarray | None = None
    R_bar: np.ndarray | None = None

    @property
    def horizon(self) -> int:
        return self.Phi.shape[0] // self.Phi.shape[1] - 1


def build_prediction_matrices(sys: LinearSystem, N: int, W: CostWeights | None = None) -> PredictionMatrices:
    if N < 1:
        raise InvalidHorizonError(f"horizon must be >= 1, got {N}")
    n, m = sys.n, sys.m
    powers = [np.eye(n)]
    for _ in range(N):
        powers.append(sys.A @ powers[-1])
    Phi = np.vstack(powers)
    Gamma = np.zeros(((N + 1) * n, N * m))
    for k in range(1, N + 1):
        for j in range(k):
            Gamma[k * n:(k + 1) * n, j * m:(j + 1) * m] = powers[k - j - 1] @ sys.B
    Q_bar = R_bar = None
    if W is not None:
        Q_bar = np.kron(np.eye(N + 1), W.Q)
        R_bar = np.kron(np.eye(N), W.R)
    return PredictionMatrices(Phi, Gamma, Q_bar, R_bar)


class CondensedMpc:
    """Precomputed condensed QP data for one model and horizon; ``solve(x)`` per state.

    The decision vector stops at ``u_{N-1}``: the stage-``N`` input of the
    original problem is always zero at the optimum, so dropping it loses nothing.
    """

    def __init__(self, model: LinearSystem, W: CostWeights, U: InputPolytope, N: int):
        if W.Q.shape[0] != model.n or W.R.shape[0] != model.m or U.m != model.m:
            raise InvalidInputError("weights / input polytope do not match the model dimensions")
        self.model, self.W, self.U, self.N = model, W, U, N
        self.pred = build_prediction_matrices(model, N, W)
        Gq = self.pred.Gamma.T @ self.pred.Q_bar
        H = self.pred.R_bar + Gq @ self.pred.Gamma
        self.H = 0.5 * (H + H.T)
        self.Fx = Gq @ self.pred.Phi  # b = Fx @ x
        self.G = np.kron(np.eye(N), U.F_u)
        self.rhs = np.ones(self.G.shape[0])

    def qp(self, x) -> CondensedQp:
        x = as_vector(x, "x")
        if x.shape[0] != self.model.n:
            raise InvalidInputError(f"state has dimension {x.shape[0]}, expected {self.model.n}")
        free = self.pred.Phi @ x
        return CondensedQp(self.H, self.Fx @ x, self.G, self.rhs, float(free @ self.pred.Q_bar @ free))

    def cost(self, x, u_stack) -> float:
        """``J_N(x, u)`` evaluated along the model prediction."""
        states = self.pred.Phi @ x + self.pred.Gamma @ u_stack
        return float(states @ self.pred.Q_bar @ states + u_stack @ self.pred.R_bar @ u_stack)

    def solve(self, x) -> "MpcSolution":
        x = as_vector(x, "x")
        qp = self.qp(x)
        sol = qp_solve(qp)
        return MpcSolution(x=x, u_stack=sol.u_stack, value=self.cost(x, sol.u_stack), qp=sol, m=self.model.m)


@dataclass(frozen=True, eq=False)
class MpcSolution:
    x: np.ndarray
    u_stack: np.ndarray
    value: float
    qp: QpSolution
    m: int

    @property
    def u0(self) -> np.ndarray:
        return self.u_stack[: self.m]

    def inputs(self) -> np.ndarray:
        return self.u_stack.reshape(-1, self.m)


def build_condensed_qp(sys: LinearSystem, W: CostWeights, U: InputPolytope, N: int, x) -> CondensedQp:
    return CondensedMpc(sys, W, U, N).qp(x)


def mpc_control_law(model: LinearSystem, W: CostWeights, U: InputPolytope, N: int, x) -> tuple[np.ndarray, float]:
    """First optimal input and optimal value of the horizon-``N`` problem built on ``model``."""
    sol = CondensedMpc(model, W, U, N).solve(x)
    return sol.u0, sol.value


def open_loop_predict(sys: LinearSystem, x, u_seq, k: int) -> np.ndarray:
    """State after ``k`` steps of ``x+ = A x + B u`` driven by ``u_seq[0..k-1]``."""
    x = as_vector(x, "x")
    u_seq = np.asarray(u_seq, dtype=float).reshape(-1, sys.m) if np.size(u_seq) else np.zeros((0, sys.m))
    if k < 0 or k > u_seq.shape[0]:
        raise InvalidInputError(f"k = {k} outside [0, {u_seq.shape[0]}]")
    for i in range(k):
        x = sys.A @ x + sys.B @ u_seq[i]
    return x


@dataclass(eq=False)
class Trajectory:
    states: list[np.ndarray]
    inputs: list[np.ndarray]
    stage_costs: list[float]
    total_cost: float
    converged: bool
    # V_N of the controller's model at each visited state, plus the full planned input stacks
    values: list[float] = field(default_factory=list)
    plans: list[np.ndarray] = field(default_factory=list)
    qp_iterations: int = 0


def closed_loop_simulate(
    true_sys: LinearSystem,
    model: LinearSystem,
    W: CostWeights,
    U: InputPolytope,
    N: int,
    x0,
    t_max: int = 1000,
    term_tol: float = 1e-12,
    controller: CondensedMpc | None = None,
) -> Trajectory:
    """Run ``x+ = A x + B mu_hat(x)`` with ``mu_hat`` computed from ``model``.

    Stops after the first step whose stage cost falls below ``term_tol``
    (``converged=True``) or after ``t_max`` steps.
    """
    if t_max < 1:
        raise InvalidInputError("t_max must be >= 1")
    ctrl = controller or CondensedMpc(model, W, U, N)
    x = as_vector(x0, "x0")
    traj = Trajectory([x], [], [], 0.0, False)
    total = 0.0
    for _ in range(t_max):
        sol = ctrl.solve(x)
        u = sol.u0
        cost = float(x @ W.Q @ x + u @ W.R @ u)
        traj.inputs.append(u)
        traj.stage_costs.append(cost)
        traj.values.append(sol.value)
        traj.plans.append(sol.u_stack)
        traj.qp_iterations += sol.qp.iterations
        total += cost
        x = true_sys.A @ x + true_sys.B @ u
        traj.states.append(x)
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > DIVERGENCE_NORM:
            raise DivergenceError(f"state norm exceeded {DIVERGENCE_NORM:g}")
        if cost < term_tol:
            traj.converged = True
            break
    traj.total_cost = total
    return traj


def approx_v_infinity(
    true_sys: LinearSystem,
    W: CostWeights,
    U: InputPolytope,
    x0,
    rel_tol: float = 1e-6,
    N_start: int = 8,
    N_max: int = 512,
    t_max: int = 5000,
) -> float:
    """Infinite-horizon optimal cost from ``x0`` by horizon doubling.

    For each horizon, ``V_N(x0) <= V_inf(x0) <= J_inf^{mu_N}(x0)``. Doubling stops
    once the closed-loop cost has settled to ``rel_tol`` between consecutive
    horizons and the bracket ``[V_N, J^{mu_N}]`` is itself ``rel_tol`` tight. The
    closed-loop cost is returned.

    Doubling also stops once the condensed Hessian's condition number exceeds
    ``MAX_HESSIAN_COND``: for unstable plants long horizons cannot be solved
    reliably in condensed form.
    """
    x0 = as_vector(x0, "x0")
    if not np.any(x0):
        return 0.0
    previous = math.inf
    N = N_start
    while N <= N_max:
        ctrl = CondensedMpc(true_sys, W, U, N)
        cond = float(np.linalg.cond(ctrl.H))
        if cond > MAX_HESSIAN_COND:
            raise RoaMembershipUnknownError(
                f"V_inf did not settle before N={N}, where the condensed Hessian has condition number {cond:.2e}"
            )
        try:
            traj = closed_loop_simulate(true_sys, true_sys, W, U, N, x0, t_max=t_max, controller=ctrl)
        except DivergenceError:
            traj = None
        if traj is not None and traj.converged:
            closed = traj.total_cost
            lower = traj.values[0]
            settled = abs(closed - previous) <= rel_tol * closed
            tight = closed - lower <= rel_tol * closed
            if settled and tight:
                return closed
            previous = closed
        N *= 2
    raise RoaMembershipUnknownError(f"V_inf did not settle to rel_tol={rel_tol} up to N={N_max}")
