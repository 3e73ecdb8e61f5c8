#!/usr/bin/env python3
"""Build quota datasets for one or more context-length buckets.

World size and episode budget scale with the bucket: longer targets need
larger worlds so candidate pools stay big enough for episodes to survive
uniform guessing, and bigger tool messages so feedback stays a small
fraction of each round. The shipped distribution tables live in presets/.

Example (the two desk-scale buckets):
    python scripts/build_quota_datasets.py --buckets 32768,131072 \
        --format concise --setting knowledge-free --out runs/kf_concise
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from guessbench.masking import build_symbol_map, mask_trajectory, mask_universe
from guessbench.qa import QuotaConfig, build_dataset, save_dataset
from guessbench.rollout import RolloutConfig, generate_corpus
from guessbench.universe import default_synthetic_spec, generate_synthetic_universe
from guessbench.util import derive_seed, dump_json

# bucket limit -> (n_items, n_trajectories); noise parameters stay fixed,
# the world grows with the target length. Verbose episodes guess from the
# internal intersection of their candidate lists, a stronger filter, so they
# need a world one tier larger to survive to the same length.
SCALING = {
    "concise": {
        32768: (1024, 260),
        65536: (1024, 220),
        131072: (2048, 160),
        262144: (2048, 120),
        524288: (4096, 100),
        1048576: (8192, 90),
        2097152: (16384, 80),
        4194304: (32768, 80),
    },
    "verbose": {
        32768: (1024, 260),
        65536: (2048, 220),
        131072: (2048, 160),
        262144: (4096, 120),
        524288: (8192, 100),
        1048576: (16384, 90),
        2097152: (32768, 80),
        4194304: (32768, 80),
    },
}

NOISE = {
    "concise": dict(history_window=2, forget_history_prob=0.85, mask_prob=0.9,
                    max_mask_sections=3, epsilon=0.25, max_rounds=2010),
    "verbose": dict(history_window=2, forget_history_prob=0.85, mask_prob=0.45,
                    max_mask_sections=2, epsilon=0.25, max_rounds=260),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--buckets", default="32768", help="comma-separated bucket limits")
    ap.add_argument("--format", choices=["concise", "verbose"], default="concise")
    ap.add_argument("--setting", choices=["knowledge-intensive", "knowledge-free"],
                    default="knowledge-intensive")
    ap.add_argument("--quota", help="quota JSON; defaults to the matching preset")
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    preset_name = ("kf" if args.setting == "knowledge-free" else "ki") + f"_{args.format}.json"
    quota_path = args.quota or Path(__file__).resolve().parent.parent / "presets" / preset_name
    quota_all = QuotaConfig.from_obj(json.loads(Path(quota_path).read_text()))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    all_samples = []
    for limit in (int(x) for x in args.buckets.split(",")):
        n_items, n_traj = SCALING[args.format][limit]
        universe = generate_synthetic_universe(
            default_synthetic_spec(n_items), derive_seed(args.seed, "universe", limit))
        cfg = RolloutConfig(format=args.format, seed=derive_seed(args.seed, "corpus", limit),
                            token_budget=int(limit * 1.12), **NOISE[args.format])
        corpus = generate_corpus(universe, cfg, n_traj)
        print(f"bucket {limit}: {n_traj} episodes over {n_items} items, "
              f"{sum(t.meta['approx_tokens'] >= limit for t in corpus)} reach the limit")

        transform = None
        if args.setting == "knowledge-free":
            symbol_map = build_symbol_map(universe, derive_seed(args.seed, "mask", limit))
            dump_json(symbol_map.to_obj(), out / f"symbol_map_{limit}.json")
            transform = lambda t, m=symbol_map: mask_trajectory(t, m)

        quota = QuotaConfig({limit: quota_all.cells[limit]})
        samples = build_dataset(corpus, quota, derive_seed(args.seed, "qa", limit),
                                prefix_transform=transform)
        print(f"bucket {limit}: {len(samples)} samples")
        all_samples.extend(samples)

    save_dataset(all_samples, out / "dataset.jsonl")
    counts = {}
    for s in all_samples:
        counts.setdefault(str(s.bucket_limit), {}).setdefault(s.question_type, 0)
        counts[str(s.bucket_limit)][s.question_type] += 1
    dump_json({"n_samples": len(all_samples), "counts": counts, "seed": args.seed},
              out / "dataset_manifest.json")
    print(f"wrote {len(all_samples)} samples to {out / 'dataset.jsonl'}")


if __name__ == "__main__":
    main()
