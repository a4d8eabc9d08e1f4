"""Train GA2-Naive and GA2-Aug on the desk scenario and compare with fixed-time.

Usage: python3 scripts/learning_check.py [--config configs/desk.yaml] [--episodes N] [--out DIR]
"""

import argparse
import json
import logging
import os
import time

from ga2lab.experiment import ExperimentConfig, run_experiment


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--config", default="configs/desk.yaml")
    p.add_argument("--episodes", type=int)
    p.add_argument("--out", default="results/learning_check")
    args = p.parse_args()
    logging.basicConfig(level=os.environ.get("GA2LAB_LOG_LEVEL", "INFO").upper())
    cfg = ExperimentConfig.load(args.config)
    if args.episodes:
        cfg = cfg.replace(episodes=args.episodes)
    rows = {}
    for agent in ("fixed", "sotl", "ga2-naive", "ga2-aug"):
        t0 = time.perf_counter()
        res = run_experiment(cfg.replace(agent=agent), os.path.join(args.out, agent))
        rows[agent] = res.summary()
        print(f"{agent:10s} median ATT {res.median_att:8.2f}  per seed {res.per_seed_att}  ({time.perf_counter() - t0:.0f} s)",
              flush=True)
    fixed = rows["fixed"]["median_average_travel_time"]
    for agent in ("sotl", "ga2-naive", "ga2-aug"):
        print(f"{agent:10s} / fixed = {rows[agent]['median_average_travel_time'] / fixed:.3f}")
    with open(os.path.join(args.out, "comparison.json"), "w") as fh:
        json.dump(rows, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
