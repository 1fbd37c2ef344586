"""Baseline versus extension terminal-cost constants on the same estimated systems.

For each (delta, N) in the benchmark grid, prints the certified fraction and the
mean bound under both modes, plus how often the extension's terminal-set
condition actually held along the simulated run.

    python3 scripts/compare_modes.py [--trials 100]
"""
import argparse
from pathlib import Path

import numpy as np

from cempc import harness
from cempc.bounds import certify
from cempc.errors import DivergenceError
from cempc.mpc import closed_loop_simulate
from cempc.oracles import extension_admissible
from cempc.system import UncertaintySpec, sample_estimate

ROOT = Path(__file__).resolve().parents[1]


def mean_bound(records):
    vals = [r.j_bound for r in records if r.ok]
    return float(np.mean(vals)) if vals else float("nan")


def admissible(defn, cfg, r, v_inf):
    spec = UncertaintySpec(r.delta_A, r.delta_B)
    model = sample_estimate(defn.system, spec, seed=r.trial_seed, boundary=cfg.boundary)
    x0 = np.asarray(cfg.x0)
    bundle = certify(model, spec, defn.weights, defn.inputs, r.N, x0, v_inf, mode="extension")
    try:
        traj = closed_loop_simulate(defn.system, model, defn.weights, defn.inputs, r.N, x0, t_max=cfg.t_max)
    except DivergenceError:
        return False
    return extension_admissible(defn.system, bundle, defn.weights, defn.inputs, traj)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--trials", type=int)
    args = parser.parse_args()

    cfg = harness.override(harness.load_config(ROOT / "configs" / "benchmark_grid.json"), trials=args.trials)
    defn = cfg.load_system()
    v_inf = harness.compute_v_inf(cfg, defn)
    # both runs draw the same estimated systems
    base = harness.run_montecarlo(cfg, v_inf=v_inf)
    ext = harness.run_montecarlo(harness.override(cfg, mode="extension"), v_inf=v_inf)
    print(f"{'delta':>7} {'N':>3} {'base stable':>12} {'base bound':>12} {'ext stable':>11} {'ext bound':>12} {'admissible':>11}")
    for gi, (delta, N) in enumerate(base.grid):
        b = [r for r in base.records if r.grid_index == gi]
        e = [r for r in ext.records if r.grid_index == gi]
        adm = sum(admissible(defn, cfg, r, v_inf) for r in e if r.ok)
        print(f"{delta:>7g} {N:>3} {sum(r.stable for r in b):>8}/{len(b):<3} {mean_bound(b):>12.5g} "
              f"{sum(r.stable for r in e):>7}/{len(e):<3} {mean_bound(e):>12.5g} {adm:>7}/{len(e):<3}")


if __name__ == "__main__":
    main()
