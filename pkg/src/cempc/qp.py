"""Primal active-set method for dense strictly convex QPs.

    minimize    1/2 u^T H u + b^T u
    subject to  G u <= rhs

The iteration starts from ``u = 0``, which is feasible whenever ``rhs >= 0``
(always the case for the MPC problems here, where ``rhs`` is all ones).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, SolverError


@dataclass(frozen=True, eq=False)
class CondensedQp:
    H: np.ndarray
    b: np.ndarray
    G: np.ndarray
    rhs: np.ndarray
    # J_N = u^T H u + 2 b^T u + offset, i.e. twice the QP objective plus offset
    offset: float = 0.0


@dataclass(frozen=True, eq=False)
class QpSolution:
    u_stack: np.ndarray
    duals: np.ndarray
    objective: float
    active_set: list[int] = field(default_factory=list)
    iterations: int = 0

    def kkt_residuals(self, qp: CondensedQp) -> dict[str, float]:
        u, lam = self.u_stack, self.duals
        slack = qp.G @ u - qp.rhs
        return {
            "stationarity": float(np.max(np.abs(qp.H @ u + qp.b + qp.G.T @ lam), initial=0.0)),
            "primal": float(np.max(slack, initial=-np.inf)),
            "dual": float(-np.min(lam, initial=0.0)),
            "complementarity": float(np.max(np.abs(lam * slack), initial=0.0)),
        }


def _solve_eqp(H, g, Gw):
    """Step ``p`` and multipliers for ``min 1/2 p^T H p + g^T p  s.t.  Gw p = 0``."""
    n = H.shape[0]
    k = Gw.shape[0]
    if k == 0:
        return np.linalg.solve(H, -g), np.zeros(0)
    kkt = np.zeros((n + k, n + k))
    kkt[:n, :n] = H
    kkt[:n, n:] = Gw.T
    kkt[n:, :n] = Gw
    sol = np.linalg.solve(kkt, np.concatenate([-g, np.zeros(k)]))
    return sol[:n], sol[n:]


def qp_solve(qp: CondensedQp, step_tol: float = 1e-12, dual_tol: float = 1e-12) -> QpSolution:
    H, b, G, rhs = qp.H, qp.b, qp.G, qp.rhs
    n = H.shape[0]
    if H.shape != (n, n) or b.shape != (n,) or G.shape[1] != n or rhs.shape != (G.shape[0],):
        raise InvalidInputError("inconsistent QP dimensions")
    if np.any(rhs < 0.0):
        raise InvalidInputError("rhs must be nonnegative so that u = 0 is a feasible start")
    n_con = G.shape[0]
    max_iter = 10_000 * max(n_con, 1)

    u = np.zeros(n)
    working: list[int] = []
    scale = 1.0 + float(np.max(np.abs(b), initial=0.0))
    # magnitude of the unconstrained minimiser sets the roundoff floor for "zero step"
    p_floor = step_tol * (1.0 + float(np.max(np.abs(np.linalg.solve(H, b)), initial=0.0)))
    # after an unblocked step u already minimises over the working set; re-solving would
    # only return roundoff-sized steps, which on ill-conditioned H never pass p_floor
    at_subspace_min = False
    for it in range(1, max_iter + 1):
        g = H @ u + b
        Gw = G[working]
        p, lam_w = _solve_eqp(H, g, Gw)
        if at_subspace_min or np.max(np.abs(p), initial=0.0) <= p_floor:
            at_subspace_min = False
            if lam_w.size == 0 or np.min(lam_w) >= -dual_tol * scale:
                duals = np.zeros(n_con)
                duals[working] = np.maximum(lam_w, 0.0)
                objective = float(0.5 * u @ H @ u + b @ u)
                return QpSolution(u, duals, objective, sorted(working), it)
            # drop the most negative multiplier; np.argmin picks the lowest position on ties,
            # and positions follow sorted constraint indices
            drop = int(np.argmin(lam_w))
            working.pop(drop)
            continue

        Gp = G @ p
        alpha = 1.0
        blocking = -1
        for i in range(n_con):
            if i in working or Gp[i] <= 1e-14:
                continue
            ratio = max(rhs[i] - G[i] @ u, 0.0) / Gp[i]
            if ratio < alpha:
                alpha = ratio
                blocking = i
        u = u + alpha * p
        if blocking >= 0:
            working.append(blocking)
            working.sort()
        else:
            at_subspace_min = True
    raise SolverError(f"active-set iteration cap {max_iter} reached")
