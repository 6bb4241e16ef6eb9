#!/usr/bin/env python3
"""Train 5 seeds x 35000 steps and report corner-probe success probabilities.

Writes the run directory (Q-functions, probe log), an aggregate CSV and a
JSON export, then prints final-bucket probabilities per seed and the
ordering checks used in the acceptance suite.

    python scripts/reproduce.py --mode episodic --agent dqn --out runs/ep_dqn
"""

from __future__ import annotations

import argparse
import time
from pathlib import Path

import numpy as np

from qintrospect.env import Action
from qintrospect.harness import (
    BOTTOM_RIGHT,
    TOP_LEFT,
    ExperimentConfig,
    aggregate_runs,
    aggregate_to_csv,
    export,
    final_bucket_means,
    run_experiment,
)

L, R, F, B = Action


def ordered(p, high, low):
    return all(p[h] >= p[l] for h in high for l in low)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--mode", choices=["episodic", "non-episodic"], default="episodic")
    ap.add_argument("--agent", choices=["tabular-q", "sarsa", "dqn"], default="dqn")
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--steps", type=int, default=35000)
    ap.add_argument("--bucket", type=int, default=500)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", type=Path, required=True)
    args = ap.parse_args()

    seeds = tuple(int(s) for s in args.seeds.split(","))
    cfg = ExperimentConfig.preset(args.mode, args.agent, seeds=seeds, total_steps=args.steps,
                                  output_dir=str(args.out), workers=args.workers)
    t0 = time.perf_counter()
    _, plog = run_experiment(cfg)
    elapsed = time.perf_counter() - t0

    stats = aggregate_runs(plog, args.bucket, cfg.report_from_step)
    (args.out / "aggregate.csv").write_text(aggregate_to_csv(stats))
    export(plog, stats, "json", args.out / "export.json")

    print(f"{args.mode} / {args.agent}: {len(seeds)} seeds x {args.steps} steps in {elapsed:.0f} s")
    print("final-bucket P[left, right, forward, backward]")
    for probe, high, low in [(BOTTOM_RIGHT, (F, L), (B, R)), (TOP_LEFT, (B, R), (F, L))]:
        per_seed = {s: final_bucket_means(plog, probe.label, s, args.bucket, args.steps) for s in seeds}
        for s, p in per_seed.items():
            print(f"  {probe.label:12s} seed {s}: {np.round(p, 3).tolist()}")
        mean = final_bucket_means(plog, probe.label, None, args.bucket, args.steps)
        n_ok = sum(ordered(p, high, low) for p in per_seed.values())
        names = "/".join(a.verb for a in high)
        print(f"  {probe.label:12s} mean  : {np.round(mean, 3).tolist()}  "
              f"{names} on top in {n_ok}/{len(seeds)} seeds")


if __name__ == "__main__":
    main()
