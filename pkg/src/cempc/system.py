"""True/estimated linear systems, cost weights, input polytopes and the Frobenius-ball uncertainty model."""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from .errors import (
    ConfigError,
    DomainError,
    InvalidInputError,
    NotStabilizableError,
    SamplingError,
    UnboundedSetError,
    UnsupportedDimensionError,
)
from .numerics import as_matrix, as_vector, is_stabilizable, sym_eig_extremes


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """``x+ = A x + B u``. Used both for the true plant and for an estimate of it."""

    A: np.ndarray
    B: np.ndarray
    check_stabilizable: bool = True

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        B = as_matrix(self.B, "B")
        if A.shape[0] != A.shape[1]:
            raise InvalidInputError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise InvalidInputError(f"B has {B.shape[0]} rows, A has dimension {A.shape[0]}")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        if self.check_stabilizable and not is_stabilizable(A, B):
            raise NotStabilizableError("(A, B) is not stabilizable")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def step(self, x, u) -> np.ndarray:
        return self.A @ x + self.B @ u


@dataclass(frozen=True, eq=False)
class CostWeights:
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        Q = as_matrix(self.Q, "Q")
        R = as_matrix(self.R, "R")
        sym_eig_extremes(Q)
        sym_eig_extremes(R)
        Q.setflags(write=False)
        R.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    @property
    def q_extremes(self) -> tuple[float, float, float]:
        return sym_eig_extremes(self.Q)

    @property
    def r_extremes(self) -> tuple[float, float, float]:
        return sym_eig_extremes(self.R)


@dataclass(frozen=True, eq=False)
class InputPolytope:
    """``U = {u : F_u u <= 1}``; contains the origin by construction."""

    F_u: np.ndarray

    def __post_init__(self):
        F = as_matrix(self.F_u, "F_u")
        if F.shape[0] == 0:
            raise InvalidInputError("F_u needs at least one row")
        F.setflags(write=False)
        object.__setattr__(self, "F_u", F)

    @property
    def m(self) -> int:
        return self.F_u.shape[1]

    @property
    def n_constraints(self) -> int:
        return self.F_u.shape[0]

    def contains(self, u, tol: float = 1e-10) -> bool:
        return bool(np.all(self.F_u @ np.asarray(u, dtype=float) <= 1.0 + tol))


@dataclass(frozen=True)
class UncertaintySpec:
    delta_A: float
    delta_B: float

    def __post_init__(self):
        for name in ("delta_A", "delta_B"):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value < 0.0:
                raise InvalidInputError(f"{name} must be finite and >= 0, got {value}")
            object.__setattr__(self, name, value)

    @property
    def is_exact(self) -> bool:
        return self.delta_A == 0.0 and self.delta_B == 0.0


@dataclass(frozen=True)
class InputSetExtremes:
    u_bar: float  # max ||u||^2 over U
    d_bar_u: float  # max ||u1 - u2||^2 over U


def stage_cost(x, u, W: CostWeights) -> float:
    x = as_vector(x, "x")
    u = as_vector(u, "u")
    if x.shape[0] != W.Q.shape[0] or u.shape[0] != W.R.shape[0]:
        raise InvalidInputError("state/input dimension does not match the weights")
    return float(x @ W.Q @ x + u @ W.R @ u)


def epsilon_K(K, U: InputPolytope, Q) -> float:
    """Largest level ``eps`` with ``x^T Q x <= eps  =>  F_u K x <= 1``.

    Rows of ``F_u K`` that vanish can never bind and are skipped; with no
    remaining rows the result is ``inf``.
    """
    K = as_matrix(K, "K")
    Q = as_matrix(Q, "Q")
    if K.shape[0] != U.m or K.shape[1] != Q.shape[0]:
        raise InvalidInputError(f"K has shape {K.shape}, expected ({U.m}, {Q.shape[0]})")
    rows = U.F_u @ K
    Qinv = np.linalg.inv(Q)
    weighted = np.einsum("ij,jk,ik->i", rows, Qinv, rows)
    active = weighted[weighted > 0.0]
    if active.size == 0:
        return math.inf
    return float(np.min(1.0 / active))


def _check_bounded(F: np.ndarray) -> None:
    # U is bounded iff the recession cone {d : F d <= 0} is {0}
    m = F.shape[1]
    for i in range(m):
        for sign in (1.0, -1.0):
            c = np.zeros(m)
            c[i] = -sign
            res = linprog(c, A_ub=F, b_ub=np.zeros(F.shape[0]), bounds=[(-1.0, 1.0)] * m, method="highs")
            if res.status == 0 and -res.fun > 1e-9:
                raise UnboundedSetError("input polytope is unbounded")


def polytope_vertices(U: InputPolytope, tol: float = 1e-9) -> np.ndarray:
    """Vertices of ``U`` (``m <= 3``) by intersecting every ``m``-subset of facets."""
    F = U.F_u
    m = U.m
    if m > 3:
        raise UnsupportedDimensionError(f"vertex enumeration supports m <= 3, got m = {m}")
    _check_bounded(F)
    verts = []
    for rows in itertools.combinations(range(F.shape[0]), m):
        sub = F[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        v = np.linalg.solve(sub, np.ones(m))
        if np.all(F @ v <= 1.0 + tol) and not any(np.allclose(v, w, atol=tol) for w in verts):
            verts.append(v)
    if not verts:
        raise UnboundedSetError("no vertices found; polytope is unbounded")
    return np.array(verts)


def input_set_extremes(U: InputPolytope) -> InputSetExtremes:
    """``u_bar`` and ``d_bar_u`` by vertex enumeration.

    Both are maxima of convex functions over a polytope, so a vertex attains them.
    """
    V = polytope_vertices(U)
    u_bar = float(np.max(np.sum(V * V, axis=1)))
    diffs = V[:, None, :] - V[None, :, :]
    d_bar_u = float(np.max(np.sum(diffs * diffs, axis=2)))
    return InputSetExtremes(u_bar=u_bar, d_bar_u=d_bar_u)


def _ball_perturbation(rng: np.random.Generator, shape, radius: float, boundary: bool) -> np.ndarray:
    if radius == 0.0:
        return np.zeros(shape)
    direction = rng.standard_normal(shape)
    direction /= np.linalg.norm(direction)
    scale = radius if boundary else radius * rng.uniform(0.0, 1.0)
    return scale * direction


def sample_estimate(
    sys: LinearSystem,
    spec: UncertaintySpec,
    seed: int,
    boundary: bool = False,
    max_attempts: int = 100,
) -> LinearSystem:
    """Draw ``(A_hat, B_hat)`` from the Frobenius balls around ``(A, B)``.

    Direction is uniform on the unit Frobenius sphere; the radius is uniform on
    ``[0, delta]`` (or exactly ``delta`` with ``boundary=True``). Draws that are
    not stabilizable are discarded.
    """
    if spec.is_exact:
        return LinearSystem(sys.A.copy(), sys.B.copy(), check_stabilizable=False)
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        dA = _ball_perturbation(rng, sys.A.shape, spec.delta_A, boundary)
        dB = _ball_perturbation(rng, sys.B.shape, spec.delta_B, boundary)
        A_hat = sys.A + dA
        B_hat = sys.B + dB
        if is_stabilizable(A_hat, B_hat):
            return LinearSystem(A_hat, B_hat, check_stabilizable=False)
    raise SamplingError(f"no stabilizable estimate found in {max_attempts} draws")


@dataclass(frozen=True, eq=False)
class SystemDefinition:
    """Contents of a system definition file."""

    system: LinearSystem
    weights: CostWeights
    inputs: InputPolytope
    uncertainty: UncertaintySpec


def _matrix_field(data: dict, key: str) -> np.ndarray:
    if key not in data:
        raise ConfigError(key, "missing")
    rows = data[key]
    if not isinstance(rows, list) or not rows or not all(isinstance(r, list) for r in rows):
        raise ConfigError(key, "expected a non-empty list of rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ConfigError(key, "ragged rows")
    try:
        return as_matrix(rows, key)
    except (InvalidInputError, ValueError, TypeError) as exc:
        raise ConfigError(key, str(exc)) from exc


def parse_system(data: dict) -> SystemDefinition:
    A = _matrix_field(data, "A")
    B = _matrix_field(data, "B")
    Q = _matrix_field(data, "Q")
    R = _matrix_field(data, "R")
    F_u = _matrix_field(data, "F_u")
    try:
        system = LinearSystem(A, B)
        weights = CostWeights(Q, R)
        inputs = InputPolytope(F_u)
        uncertainty = UncertaintySpec(float(data.get("delta_A", 0.0)), float(data.get("delta_B", 0.0)))
    except (InvalidInputError, DomainError, NotStabilizableError) as exc:
        raise ConfigError("system", str(exc)) from exc
    if Q.shape[0] != system.n or R.shape[0] != system.m or inputs.m != system.m:
        raise ConfigError("system", "dimensions of Q, R, F_u do not match (A, B)")
    return SystemDefinition(system, weights, inputs, uncertainty)


def load_system(path) -> SystemDefinition:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON: {exc}") from exc
    return parse_system(data)


def system_to_dict(defn: SystemDefinition) -> dict:
    return {
        "A": defn.system.A.tolist(),
        "B": defn.system.B.tolist(),
        "Q": defn.weights.Q.tolist(),
        "R": defn.weights.R.tolist(),
        "F_u": defn.inputs.F_u.tolist(),
        "delta_A": defn.uncertainty.delta_A,
        "delta_B": defn.uncertainty.delta_B,
    }


def benchmark_system() -> SystemDefinition:
    """The unstable two-state, single-input benchmark with ``|u| <= 0.1``."""
    return SystemDefinition(
        system=LinearSystem(np.array([[1.0, 0.7], [0.12, 0.4]]), np.array([[1.0], [1.2]])),
        weights=CostWeights(2.0 * np.eye(2), np.array([[1.0]])),
        inputs=InputPolytope(np.array([[10.0], [-10.0]])),
        uncertainty=UncertaintySpec(0.0, 0.0),
    )
