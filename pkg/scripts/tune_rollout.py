#!/usr/bin/env python3
"""Sweep rollout noise parameters and report episode statistics.

Used to pin the shipped defaults: episodes must reach the target bucket
unsolved (reach), the running tool-result intersection must pin the target
within the bucket (solvable), and per-round candidate pools must stay broad
(pool) so uniform guessing rarely ends the game early.

Example:
    python scripts/tune_rollout.py --n-items 1024 --limit 32768 \
        --grid "mask_prob=0.85,0.9,0.95" --grid "forget_history_prob=0.8,0.85"
"""

from __future__ import annotations

import argparse
import itertools
import statistics

from guessbench.postprocess import TruncationError, truncate_whole_rounds, verify_final_guess
from guessbench.rollout import RolloutConfig, generate_corpus
from guessbench.universe import default_synthetic_spec, generate_synthetic_universe

BASE = dict(
    format="concise",
    max_rounds=2010,
    history_window=2,
    forget_history_prob=0.85,
    mask_prob=0.9,
    max_mask_sections=3,
    epsilon=0.25,
)


def run_point(universe, limit, n_traj, seed, overrides):
    params = dict(BASE)
    params.update(overrides)
    cfg = RolloutConfig(seed=seed, token_budget=int(limit * 1.12), **params)
    corpus = generate_corpus(universe, cfg, n_traj)

    reach = solvable = 0
    pools, rounds_at = [], []
    for t in corpus:
        if t.meta["approx_tokens"] < limit:
            continue
        reach += 1
        try:
            prefix = truncate_whole_rounds(t, limit)
        except TruncationError:
            continue
        rounds_at.append(prefix.meta["truncated_rounds"])
        if params["format"] == "concise":
            solvable += verify_final_guess(prefix)["solvable"]
            sizes = [len(r.tool_result.intersection) for r in prefix.rounds]
            if sizes:
                pools.append(statistics.mean(sizes))
    return {
        "reach": f"{reach}/{n_traj}",
        "solvable": solvable,
        "rounds@limit": round(statistics.mean(rounds_at), 1) if rounds_at else 0,
        "mean_pool": round(statistics.mean(pools), 1) if pools else 0,
    }


def parse_grid(entries):
    axes = {}
    for entry in entries or []:
        key, _, values = entry.partition("=")
        axes[key] = [float(v) if "." in v else int(v) for v in values.split(",")]
    if not axes:
        return [{}]
    keys = sorted(axes)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(axes[k] for k in keys))]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-items", type=int, default=1024)
    ap.add_argument("--limit", type=int, default=32768)
    ap.add_argument("--n-trajectories", type=int, default=32)
    ap.add_argument("--format", choices=["concise", "verbose"], default="concise")
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--grid", action="append", help="param=v1,v2,... (repeatable)")
    args = ap.parse_args()

    BASE["format"] = args.format
    universe = generate_synthetic_universe(default_synthetic_spec(args.n_items), seed=7)
    for overrides in parse_grid(args.grid):
        stats = run_point(universe, args.limit, args.n_trajectories, args.seed, overrides)
        label = ", ".join(f"{k}={v}" for k, v in overrides.items()) or "defaults"
        print(f"{label:50s} {stats}")


if __name__ == "__main__":
    main()
