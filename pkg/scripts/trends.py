"""Mean certificate constants across a mismatch sweep and a horizon sweep.

Writes records/stats/timings CSVs under each config's out_dir and prints one
table per sweep. Run from the repository root:

    python3 scripts/trends.py [--trials 100] [--no-dumps]
"""
import argparse
from pathlib import Path

from cempc import harness

ROOT = Path(__file__).resolve().parents[1]
COLUMNS = ("alpha_N", "beta_N", "xi_N", "eta_N", "j_bound", "simulated_cost")


def table(rows, key):
    header = f"{key:>8} {'stable':>7} " + " ".join(f"{c:>14}" for c in COLUMNS)
    lines = [header]
    for row in rows:
        vals = " ".join(f"{row[c + '_mean']:>14.6g}" for c in COLUMNS)
        lines.append(f"{row[key]:>8g} {row['stable']:>3}/{row['trials']:<3} {vals}")
    return "\n".join(lines)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--trials", type=int)
    parser.add_argument("--no-dumps", action="store_true")
    args = parser.parse_args()

    for name, run, key in (("delta_sweep", harness.run_delta_sweep, "delta_A"),
                           ("horizon_sweep", harness.run_horizon_sweep, "N")):
        cfg = harness.override(harness.load_config(ROOT / "configs" / f"{name}.json"), trials=args.trials)
        sweep = run(cfg)
        harness.write_outputs(cfg, sweep, dumps=not args.no_dumps)
        print(f"\n{name} (v_inf = {sweep.v_inf:.7g}, output in {cfg.out_dir})")
        print(table(harness.summary_stats(sweep.records), key))
        if name == "horizon_sweep":
            print(f"horizon with the smallest mean bound: {sweep.argmin_horizon()}")


if __name__ == "__main__":
    main()
