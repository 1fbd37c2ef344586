"""Experiment driver: configs, Monte Carlo sweeps over mismatch radius and horizon, CSV/JSON output."""
from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .bounds import certify
from .errors import CempcError, ConfigError, DivergenceError, SoundnessViolation
from .mpc import CondensedMpc, approx_v_infinity, closed_loop_simulate
from .oracles import OracleResult, _empty_trajectory_results, extension_admissible, run_inequality_suites, trajectory_checks
from .system import SystemDefinition, UncertaintySpec, load_system, parse_system, sample_estimate

MODES = ("baseline", "extension")
BUDGETS = ("default", "optimize")
# initial state used for the benchmark system when a config does not override it;
# the infinite-horizon cost from here is about 0.2023
BENCHMARK_X0 = (0.15916, 0.15916)


@dataclass
class ExperimentConfig:
    system: str
    x0: list[float]
    horizons: list[int] = field(default_factory=lambda: [7])
    deltas: list[float] = field(default_factory=lambda: [5e-3])
    trials: int = 100
    seed: int = 42
    mode: str = "baseline"
    budget: str = "default"
    out_dir: str = "results"
    t_max: int = 1000
    v_inf_rel_tol: float = 1e-6
    # draw estimates on the surface of the mismatch ball instead of inside it
    boundary: bool = False
    # directory the relative system path is resolved against; not serialised
    base_dir: str = field(default=".", repr=False, compare=False)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not isinstance(self.system, str) or not self.system:
            raise ConfigError("system", "expected a non-empty path")
        try:
            self.x0 = [float(v) for v in self.x0]
        except (TypeError, ValueError) as exc:
            raise ConfigError("x0", "expected a list of numbers") from exc
        if not self.x0 or not all(math.isfinite(v) for v in self.x0):
            raise ConfigError("x0", "expected a non-empty list of finite numbers")
        if not isinstance(self.horizons, list) or not self.horizons:
            raise ConfigError("horizons", "expected a non-empty list")
        for i, N in enumerate(self.horizons):
            if isinstance(N, bool) or not isinstance(N, int) or N < 1:
                raise ConfigError(f"horizons[{i}]", f"expected an integer >= 1, got {N!r}")
        if not isinstance(self.deltas, list) or not self.deltas:
            raise ConfigError("deltas", "expected a non-empty list")
        for i, d in enumerate(self.deltas):
            if isinstance(d, bool) or not isinstance(d, (int, float)) or not math.isfinite(d) or d < 0:
                raise ConfigError(f"deltas[{i}]", f"expected a finite number >= 0, got {d!r}")
        self.deltas = [float(d) for d in self.deltas]
        if isinstance(self.trials, bool) or not isinstance(self.trials, int) or self.trials < 1:
            raise ConfigError("trials", f"expected an integer >= 1, got {self.trials!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed", f"expected a non-negative integer, got {self.seed!r}")
        if self.mode not in MODES:
            raise ConfigError("mode", f"expected one of {MODES}, got {self.mode!r}")
        if self.budget not in BUDGETS:
            raise ConfigError("budget", f"expected one of {BUDGETS}, got {self.budget!r}")
        if isinstance(self.t_max, bool) or not isinstance(self.t_max, int) or self.t_max < 1:
            raise ConfigError("t_max", f"expected an integer >= 1, got {self.t_max!r}")
        if not isinstance(self.boundary, bool):
            raise ConfigError("boundary", f"expected true or false, got {self.boundary!r}")
        if not (isinstance(self.v_inf_rel_tol, (int, float)) and self.v_inf_rel_tol > 0):
            raise ConfigError("v_inf_rel_tol", "expected a positive number")

    @property
    def system_path(self) -> Path:
        p = Path(self.system)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def load_system(self) -> SystemDefinition:
        try:
            defn = load_system(self.system_path)
        except FileNotFoundError as exc:
            raise ConfigError("system", f"file not found: {self.system_path}") from exc
        if defn.system.n != len(self.x0):
            raise ConfigError("x0", f"dimension {len(self.x0)} does not match the system state dimension {defn.system.n}")
        return defn

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d


CONFIG_KEYS = {f.name for f in fields(ExperimentConfig)} - {"base_dir"}


def config_from_dict(data: dict, base_dir: str = ".") -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "expected a JSON object")
    unknown = set(data) - CONFIG_KEYS
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown field")
    for key in ("system", "x0"):
        if key not in data:
            raise ConfigError(key, "missing")
    return ExperimentConfig(**data, base_dir=base_dir)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(str(path), "file not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON: {exc}") from exc
    return config_from_dict(data, base_dir=str(path.parent))


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# records


@dataclass
class ExperimentRecord:
    grid_index: int
    trial: int
    delta_A: float
    delta_B: float
    N: int
    trial_seed: int
    alpha_N: float = math.nan
    beta_N: float = math.nan
    xi_N: float = math.nan
    eta_N: float = math.nan
    margin: float = math.nan
    j_bound: float = math.nan
    v_inf: float = math.nan
    simulated_cost: float = math.nan
    stable: bool = False
    sim_converged: bool = False
    solver_iterations: int = 0
    error: str = ""
    # excluded from the records CSV so that reruns are byte-identical
    wall_time: float = field(default=0.0, compare=False)

    @property
    def ok(self) -> bool:
        return not self.error

    def sound(self) -> bool:
        return not (self.ok and self.stable and not self.simulated_cost <= self.j_bound)


CSV_FIELDS = [f.name for f in fields(ExperimentRecord) if f.name != "wall_time"]


def trial_seed(master: int, grid_index: int, trial: int) -> int:
    """Stable 64-bit seed for one trial."""
    state = np.random.SeedSequence([master, grid_index, trial]).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


@dataclass(frozen=True)
class TrialTask:
    defn_dict: dict
    x0: tuple[float, ...]
    v_inf: float
    delta: float
    N: int
    grid_index: int
    trial: int
    seed: int
    mode: str
    budget: str
    t_max: int
    checks: bool = False
    boundary: bool = False


def _format_error(exc: BaseException) -> str:
    return f"{type(exc).__name__}: {exc}".replace("\n", " ")


def run_trial(task: TrialTask, defn: SystemDefinition | None = None):
    """One Monte Carlo trial; returns ``(record, oracle results or None)``.

    Errors never escape: they end up in ``record.error``.
    """
    start = time.perf_counter()
    rec = ExperimentRecord(task.grid_index, task.trial, task.delta, task.delta, task.N, task.seed)
    checks = None
    try:
        defn = defn or parse_system(task.defn_dict)
        W, U = defn.weights, defn.inputs
        spec = UncertaintySpec(task.delta, task.delta)
        model = sample_estimate(defn.system, spec, seed=task.seed, boundary=task.boundary)
        x0 = np.asarray(task.x0, dtype=float)
        budget = "optimize" if task.budget == "optimize" else (1.0, 1.0, 1.0)
        ctrl = CondensedMpc(model, W, U, task.N)
        bundle = certify(model, spec, W, U, task.N, x0, task.v_inf, mode=task.mode, p_budget=budget)
        b = bundle.bound
        rec.alpha_N, rec.beta_N, rec.xi_N, rec.eta_N = b.alpha_N, b.beta_N, b.xi_N, b.eta_N
        rec.margin, rec.j_bound, rec.v_inf, rec.stable = b.margin, b.j_bound, b.v_inf, b.stable
        try:
            traj = closed_loop_simulate(defn.system, model, W, U, task.N, x0, t_max=task.t_max, controller=ctrl)
        except DivergenceError:
            traj = None
            rec.simulated_cost = math.inf
        else:
            rec.simulated_cost = traj.total_cost
            rec.sim_converged = traj.converged
            rec.solver_iterations = traj.qp_iterations
        if task.checks:
            checks = trajectory_checks(defn.system, bundle, W, U, traj, task.v_inf)
            if task.mode == "extension" and traj is not None:
                admissible = extension_admissible(defn.system, bundle, W, U, traj)
                res = OracleResult("extension_admissible")
                res.record(0.0 if admissible else -1.0)
                checks["extension_admissible"] = res
    except (CempcError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        rec.error = _format_error(exc)
    rec.wall_time = time.perf_counter() - start
    return rec, checks


def _worker_count() -> int:
    env = os.environ.get("CEMPPC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _run_tasks(tasks: list[TrialTask], defn: SystemDefinition):
    workers = min(_worker_count(), max(1, len(tasks)))
    if workers == 1:
        return [run_trial(t, defn) for t in tasks]
    # map() keeps submission order, so the merge is deterministic
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_trial, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


@dataclass
class SweepResult:
    records: list[ExperimentRecord]
    grid: list[tuple[float, int]]
    v_inf: float
    checks: dict[str, OracleResult] | None = None

    def argmin_horizon(self) -> int | None:
        """Horizon with the smallest trial-mean ``j_bound`` (first one on ties)."""
        best, best_val = None, math.inf
        for N in sorted({N for _, N in self.grid}):
            vals = [r.j_bound for r in self.records if r.N == N and r.ok]
            mean = float(np.mean(vals)) if vals else math.inf
            if best is None or mean < best_val:
                best, best_val = N, mean
        return best


def compute_v_inf(cfg: ExperimentConfig, defn: SystemDefinition) -> float:
    return approx_v_infinity(defn.system, defn.weights, defn.inputs, np.asarray(cfg.x0), rel_tol=cfg.v_inf_rel_tol)


def _sweep(cfg: ExperimentConfig, grid: list[tuple[float, int]], seed_index, checks: bool, v_inf=None) -> SweepResult:
    defn = cfg.load_system()
    if v_inf is None:
        v_inf = compute_v_inf(cfg, defn)
    defn_dict = {
        "A": defn.system.A.tolist(), "B": defn.system.B.tolist(),
        "Q": defn.weights.Q.tolist(), "R": defn.weights.R.tolist(), "F_u": defn.inputs.F_u.tolist(),
    }
    tasks = []
    for gi, (delta, N) in enumerate(grid):
        si = seed_index(gi, delta, N)
        for t in range(cfg.trials):
            tasks.append(
                TrialTask(defn_dict, tuple(cfg.x0), v_inf, delta, N, gi, t, trial_seed(cfg.seed, si, t),
                          cfg.mode, cfg.budget, cfg.t_max, checks, cfg.boundary)
            )
    results = _run_tasks(tasks, defn)
    records = [r for r, _ in results]
    merged = None
    if checks:
        merged = {}
        for _, c in results:
            for name, res in (c or {}).items():
                merged.setdefault(name, OracleResult(name, tol=res.tol)).merge(res)
        for name, res in _empty_trajectory_results().items():
            merged.setdefault(name, res)
    return SweepResult(records, grid, v_inf, merged)


def _single(values: list, name: str):
    if len(values) != 1:
        raise ConfigError(name, f"this sweep needs exactly one entry, got {len(values)}")
    return values[0]


def run_delta_sweep(cfg: ExperimentConfig, v_inf: float | None = None) -> SweepResult:
    """Trials at every radius in ``cfg.deltas`` (ascending) for the single horizon in ``cfg.horizons``."""
    N = _single(cfg.horizons, "horizons")
    grid = [(d, N) for d in sorted(cfg.deltas)]
    return _sweep(cfg, grid, lambda gi, d, N: gi, checks=False, v_inf=v_inf)


def run_horizon_sweep(cfg: ExperimentConfig, v_inf: float | None = None) -> SweepResult:
    """Trials at every horizon in ``cfg.horizons`` (ascending) for the single radius in ``cfg.deltas``.

    The same estimated systems are reused at every horizon, so trends in N are
    not blurred by resampling.
    """
    delta = _single(cfg.deltas, "deltas")
    grid = [(delta, N) for N in sorted(cfg.horizons)]
    return _sweep(cfg, grid, lambda gi, d, N: 0, checks=False, v_inf=v_inf)


def run_montecarlo(cfg: ExperimentConfig, checks: bool = False, v_inf: float | None = None) -> SweepResult:
    """Full ``deltas x horizons`` grid; estimated systems are shared across horizons."""
    deltas = sorted(cfg.deltas)
    grid = [(d, N) for d in deltas for N in sorted(cfg.horizons)]
    return _sweep(cfg, grid, lambda gi, d, N: deltas.index(d), checks=checks, v_inf=v_inf)


@dataclass
class SoundnessSummary:
    results: dict[str, OracleResult]
    errors: int = 0

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results.values())

    @property
    def checks(self) -> int:
        return sum(r.checks for r in self.results.values())

    @property
    def violations(self) -> int:
        return sum(r.violations for r in self.results.values())

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": self.checks,
            "violations": self.violations,
            "trial_errors": self.errors,
            "oracles": {k: v.as_dict() for k, v in self.results.items()},
        }


def run_soundness_suite(
    cfg: ExperimentConfig,
    suite_instances: int | None = None,
    suites: bool = True,
    v_inf: float | None = None,
) -> SoundnessSummary:
    """Trajectory oracles on the full Monte Carlo grid plus the randomised inequality suites."""
    sweep = run_montecarlo(cfg, checks=True, v_inf=v_inf)
    results = dict(sweep.checks or {})
    if suites:
        results.update(run_inequality_suites(cfg.seed, suite_instances))
    # extension admissibility is informative, not a soundness condition
    results.pop("extension_admissible", None)
    return SoundnessSummary(results, errors=sum(1 for r in sweep.records if not r.ok))


# ---------------------------------------------------------------------------
# output


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.17g}"
    return str(value)


def _write_csv(path, header: list[str], rows: list[list]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def emit_csv(records: list[ExperimentRecord], path) -> None:
    """Write the records; raises ``SoundnessViolation`` afterwards if a stable row exceeds its bound."""
    _write_csv(path, CSV_FIELDS, [[getattr(r, f) for f in CSV_FIELDS] for r in records])
    bad = [r for r in records if not r.sound()]
    if bad:
        r = bad[0]
        raise SoundnessViolation(
            f"{len(bad)} stable trial(s) exceed their bound, first: delta={r.delta_A}, N={r.N}, "
            f"trial={r.trial}, cost={r.simulated_cost}, bound={r.j_bound}"
        )


def emit_timings(records: list[ExperimentRecord], path) -> None:
    _write_csv(path, ["grid_index", "trial", "wall_time"], [[r.grid_index, r.trial, r.wall_time] for r in records])


def _parse(value: str, kind):
    if kind is bool:
        return value == "true"
    if kind is int:
        return int(value)
    if kind is float:
        return float(value)
    return value


def read_csv(path) -> list[ExperimentRecord]:
    kinds = {f.name: f.type for f in fields(ExperimentRecord)}
    types = {"int": int, "float": float, "bool": bool, "str": str}
    out = []
    with Path(path).open(encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(ExperimentRecord(**{k: _parse(v, types[kinds[k]]) for k, v in row.items()}))
    return out


STAT_FIELDS = ["alpha_N", "beta_N", "xi_N", "eta_N", "margin", "j_bound", "simulated_cost"]


def _stats(values: list[float]) -> tuple[float, float, float, float]:
    """``(mean, var, min, max)``; any ``inf`` makes mean and variance ``inf``."""
    if not values:
        return (math.nan,) * 4
    arr = np.asarray(values, dtype=float)
    lo, hi = float(np.min(arr)), float(np.max(arr))
    if not np.all(np.isfinite(arr)):
        return math.inf, math.inf, lo, hi
    return float(np.mean(arr)), float(np.var(arr)), lo, hi


def summary_stats(records: list[ExperimentRecord]) -> list[dict]:
    """Per grid point: trial counts plus mean/var/min/max of the certificate columns (error rows skipped)."""
    groups: dict[int, list[ExperimentRecord]] = {}
    for r in records:
        groups.setdefault(r.grid_index, []).append(r)
    rows = []
    for gi in sorted(groups):
        rs = groups[gi]
        good = [r for r in rs if r.ok]
        row = {
            "grid_index": gi, "delta_A": rs[0].delta_A, "delta_B": rs[0].delta_B, "N": rs[0].N,
            "trials": len(rs), "errors": len(rs) - len(good), "stable": sum(r.stable for r in good),
        }
        for name in STAT_FIELDS:
            mean, var, lo, hi = _stats([getattr(r, name) for r in good])
            row.update({f"{name}_mean": mean, f"{name}_var": var, f"{name}_min": lo, f"{name}_max": hi})
        rows.append(row)
    return rows


def emit_stats(records: list[ExperimentRecord], path) -> None:
    rows = summary_stats(records)
    header = ["grid_index", "delta_A", "delta_B", "N", "trials", "errors", "stable"]
    for name in STAT_FIELDS:
        header += [f"{name}_mean", f"{name}_var", f"{name}_min", f"{name}_max"]
    _write_csv(path, header, [[row[h] for h in header] for row in rows])


def _json_safe(value):
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else _fmt(v)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def dump_certificates(cfg: ExperimentConfig, sweep: SweepResult, out_dir) -> list[Path]:
    """One JSON file per grid point with the full certificate dump of every trial."""
    defn = cfg.load_system()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    budget = "optimize" if cfg.budget == "optimize" else (1.0, 1.0, 1.0)
    for gi, (delta, N) in enumerate(sweep.grid):
        spec = UncertaintySpec(delta, delta)
        trials = []
        for r in (r for r in sweep.records if r.grid_index == gi):
            entry = {"trial": r.trial, "trial_seed": r.trial_seed}
            if r.ok:
                model = sample_estimate(defn.system, spec, seed=r.trial_seed, boundary=cfg.boundary)
                bundle = certify(model, spec, defn.weights, defn.inputs, N, np.asarray(cfg.x0), sweep.v_inf,
                                 mode=cfg.mode, p_budget=budget)
                entry.update(bundle.dump())
            else:
                entry["error"] = r.error
            trials.append(entry)
        path = out_dir / f"certificates_{gi:03d}.json"
        payload = {"grid_index": gi, "delta": delta, "N": N, "trials": trials}
        path.write_text(json.dumps(_json_safe(payload), indent=1, allow_nan=False) + "\n", encoding="utf-8")
        paths.append(path)
    return paths


def write_outputs(cfg: ExperimentConfig, sweep: SweepResult, out_dir=None, dumps: bool = True) -> dict[str, Path]:
    """Records CSV, stats CSV, timings CSV and certificate dumps; the soundness check runs last."""
    out = Path(out_dir or cfg.out_dir)
    paths = {"records": out / "records.csv", "stats": out / "stats.csv", "timings": out / "timings.csv"}
    out.mkdir(parents=True, exist_ok=True)
    emit_stats(sweep.records, paths["stats"])
    emit_timings(sweep.records, paths["timings"])
    if dumps:
        dump_certificates(cfg, sweep, out / "certificates")
    emit_csv(sweep.records, paths["records"])
    return paths


def override(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    """Copy of ``cfg`` with non-``None`` fields replaced and revalidated."""
    changes = {k: v for k, v in changes.items() if v is not None}
    return replace(cfg, **changes)
