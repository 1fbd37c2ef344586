"""Command-line entry point: ``cempc <verb> --config cfg.json [overrides]``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .bounds import certify
from .errors import CempcError, ConfigError, DivergenceError, SoundnessViolation
from .mpc import closed_loop_simulate
from .system import UncertaintySpec, sample_estimate

EXIT_OK, EXIT_CONFIG, EXIT_SOUNDNESS, EXIT_IO = 0, 1, 2, 3
VERBS = ("bound", "sweep-delta", "sweep-horizon", "simulate", "soundness", "montecarlo")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cempc", description=__doc__)
    parser.add_argument("verb", choices=VERBS)
    parser.add_argument("--config", required=True, help="experiment config (JSON)")
    parser.add_argument("--delta", type=float, nargs="+", help="mismatch radius / radii (delta_A = delta_B)")
    parser.add_argument("--horizon", type=int, nargs="+", help="prediction horizon(s)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--mode", choices=harness.MODES)
    parser.add_argument("--trials", type=int)
    parser.add_argument("--budget", choices=harness.BUDGETS)
    parser.add_argument("--out", help="output directory (sweeps) or file (single-run verbs)")
    parser.add_argument("--suite-instances", type=int, help="instances per inequality suite (soundness)")
    parser.add_argument("--no-dumps", action="store_true", help="skip the per-grid-point certificate JSON")
    return parser


def _write_json(payload: dict, out: str | None) -> None:
    text = json.dumps(harness._json_safe(payload), indent=2, allow_nan=False) + "\n"
    if out:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _single_estimate(cfg: harness.ExperimentConfig):
    defn = cfg.load_system()
    delta = cfg.deltas[0]
    spec = UncertaintySpec(delta, delta)
    seed = harness.trial_seed(cfg.seed, 0, 0)
    return defn, spec, sample_estimate(defn.system, spec, seed=seed, boundary=cfg.boundary), seed


def cmd_bound(cfg, args) -> int:
    defn, spec, model, seed = _single_estimate(cfg)
    v_inf = harness.compute_v_inf(cfg, defn)
    budget = "optimize" if cfg.budget == "optimize" else (1.0, 1.0, 1.0)
    out = []
    for N in cfg.horizons:
        bundle = certify(model, spec, defn.weights, defn.inputs, N, np.asarray(cfg.x0), v_inf,
                         mode=cfg.mode, p_budget=budget)
        out.append({"trial_seed": seed, **bundle.dump()})
    _write_json({"certificates": out}, args.out)
    return EXIT_OK


def cmd_simulate(cfg, args) -> int:
    defn, spec, model, seed = _single_estimate(cfg)
    runs = []
    for N in cfg.horizons:
        try:
            traj = closed_loop_simulate(defn.system, model, defn.weights, defn.inputs, N, np.asarray(cfg.x0),
                                        t_max=cfg.t_max)
            runs.append({"N": N, "cost": traj.total_cost, "converged": traj.converged,
                         "steps": len(traj.inputs), "value_x0": traj.values[0]})
        except DivergenceError as exc:
            runs.append({"N": N, "cost": float("inf"), "converged": False, "error": str(exc)})
    _write_json({"trial_seed": seed, "delta": spec.delta_A, "runs": runs}, args.out)
    return EXIT_OK


def _sweep_outputs(cfg, sweep, args, extra: dict | None = None) -> int:
    out_dir = Path(args.out or cfg.out_dir)
    paths = harness.write_outputs(cfg, sweep, out_dir, dumps=not args.no_dumps)
    summary = {"v_inf": sweep.v_inf, "records": str(paths["records"]), "stats": str(paths["stats"])}
    summary.update(extra or {})
    print(json.dumps(harness._json_safe(summary)))
    return EXIT_OK


def cmd_sweep_delta(cfg, args) -> int:
    return _sweep_outputs(cfg, harness.run_delta_sweep(cfg), args)


def cmd_sweep_horizon(cfg, args) -> int:
    sweep = harness.run_horizon_sweep(cfg)
    return _sweep_outputs(cfg, sweep, args, {"argmin_horizon": sweep.argmin_horizon()})


def cmd_montecarlo(cfg, args) -> int:
    return _sweep_outputs(cfg, harness.run_montecarlo(cfg), args)


def cmd_soundness(cfg, args) -> int:
    summary = harness.run_soundness_suite(cfg, suite_instances=args.suite_instances)
    out = Path(args.out or cfg.out_dir) / "soundness.json"
    _write_json(summary.as_dict(), str(out))
    for name, res in summary.results.items():
        print(f"{'PASS' if res.passed else 'FAIL'} {name}: {res.checks} checks, "
              f"{res.violations} violations, worst slack {res.worst_slack:.3e}")
    return EXIT_OK if summary.passed else EXIT_SOUNDNESS


COMMANDS = {
    "bound": cmd_bound,
    "simulate": cmd_simulate,
    "sweep-delta": cmd_sweep_delta,
    "sweep-horizon": cmd_sweep_horizon,
    "montecarlo": cmd_montecarlo,
    "soundness": cmd_soundness,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = harness.load_config(args.config)
        cfg = harness.override(
            cfg, deltas=args.delta, horizons=args.horizon, seed=args.seed, mode=args.mode,
            trials=args.trials, budget=args.budget,
        )
        return COMMANDS[args.verb](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SoundnessViolation as exc:
        print(f"soundness violation: {exc}", file=sys.stderr)
        return EXIT_SOUNDNESS
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except CempcError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
