"""Command-line pipeline: generate -> mask -> bucket -> qa -> evaluate -> report.

Exit codes: 0 success, 1 usage error, 2 data error, 3 endpoint error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import guessbench
from guessbench.harness import aggregate, report_to_csv, run_eval
from guessbench.masking import build_symbol_map, mask_trajectory, mask_universe, SymbolMap
from guessbench.postprocess import (
    DEFAULT_COUNTER,
    BucketSpec,
    TruncationError,
    truncate_whole_rounds,
)
from guessbench.qa import QuotaConfig, QuotaError, build_dataset, save_dataset
from guessbench.rollout import RolloutConfig, simulate, load_trajectory, save_trajectory
from guessbench.universe import (
    UniverseError,
    default_synthetic_spec,
    generate_synthetic_universe,
    load_universe,
    save_universe,
    schema_to_config,
)
from guessbench.util import derive_seed, dump_json, load_json

log = logging.getLogger("guessbench")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_ENDPOINT = 3


class UsageError(ValueError):
    pass


class DataError(ValueError):
    pass


class EndpointError(RuntimeError):
    pass


def _ensure_out(path: Path, marker: str, force: bool) -> None:
    target = path / marker
    if target.exists() and not force:
        raise DataError(f"{target} already exists; pass --force to overwrite")
    path.mkdir(parents=True, exist_ok=True)


def _write_manifest(out_dir: Path, command: str, config: dict) -> None:
    clean = {k: v for k, v in config.items() if k not in ("fn",) and not callable(v)}
    dump_json(
        {"engine_version": guessbench.ENGINE_VERSION, "command": command, "config": clean},
        out_dir / f"{command}_run.json",
    )


def _load_corpus(corpus_dir: Path):
    traj_dir = corpus_dir / "trajectories"
    if not traj_dir.is_dir():
        raise DataError(f"{traj_dir} is not a corpus directory")
    files = sorted(traj_dir.glob("traj_*.json"))
    if not files:
        raise DataError(f"no trajectories under {traj_dir}")
    return [load_trajectory(p) for p in files]


def _load_corpus_universe(corpus_dir: Path):
    schema = load_json(corpus_dir / "schema.json")
    return load_universe(corpus_dir / "universe.json", schema)


# ---------------------------------------------------------------------------
# generate

_WORKER_STATE: dict = {}


def _simulate_one(args_tuple):
    index, cfg_dict = args_tuple
    u = _WORKER_STATE["universe"]
    t = simulate(u, RolloutConfig(**cfg_dict))
    t.meta["trajectory_index"] = index
    t.meta["trajectory_id"] = f"traj_{index:05d}"
    return t


def cmd_generate(args) -> int:
    if args.synthetic is None and args.universe is None:
        raise UsageError("provide --universe FILE or --synthetic n=N")
    out = Path(args.out)
    _ensure_out(out, "corpus_manifest.json", args.force)

    if args.synthetic is not None:
        opts = dict(kv.split("=", 1) for kv in args.synthetic.split(",") if kv)
        n_items = int(opts.get("n", 256))
        universe = generate_synthetic_universe(
            default_synthetic_spec(n_items), derive_seed(args.seed, "universe")
        )
    else:
        schema = load_json(args.schema) if args.schema else None
        universe = load_universe(args.universe, schema)

    cfg = RolloutConfig(
        format=args.format,
        setting=args.setting,
        max_rounds=args.max_rounds,
        epsilon=args.epsilon,
        history_window=args.history_window,
        forget_history_prob=args.forget_history_prob,
        mask_prob=args.mask_prob,
        max_mask_sections=args.max_mask_sections,
        seed=args.seed,
        token_budget=args.token_budget,
    )

    tasks = [
        (i, {**asdict(cfg), "seed": derive_seed(cfg.seed, "trajectory", i)})
        for i in range(args.n_trajectories)
    ]
    _WORKER_STATE["universe"] = universe
    if args.jobs > 1:
        import multiprocessing

        with multiprocessing.get_context("fork").Pool(args.jobs) as pool:
            corpus = pool.map(_simulate_one, tasks)
    else:
        corpus = [_simulate_one(t) for t in tasks]

    traj_dir = out / "trajectories"
    traj_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for t in corpus:
        name = f"{t.meta['trajectory_id']}.json"
        save_trajectory(t, traj_dir / name)
        entries.append({
            "id": t.meta["trajectory_id"],
            "file": f"trajectories/{name}",
            "seed": t.meta["seed"],
            "rounds": t.meta["rounds"],
            "approx_tokens": t.meta["approx_tokens"],
            "solved": t.meta["solved"],
        })

    save_universe(universe, out / "universe.json")
    dump_json(schema_to_config(universe.schema), out / "schema.json")
    dump_json(
        {
            "engine_version": guessbench.ENGINE_VERSION,
            "config": asdict(cfg),
            "universe_fingerprint": universe.fingerprint(),
            "n_items": len(universe.items),
            "trajectories": entries,
        },
        out / "corpus_manifest.json",
    )
    _write_manifest(out, "generate", vars(args) | {"universe_fingerprint": universe.fingerprint()})
    log.info("generated %d trajectories into %s", len(corpus), out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# mask

def cmd_mask(args) -> int:
    src = Path(args.corpus)
    out = Path(args.out)
    _ensure_out(out, "symbol_map.json", args.force)

    universe = _load_corpus_universe(src)
    corpus = _load_corpus(src)
    symbol_map = build_symbol_map(universe, args.seed)
    masked_u = mask_universe(universe, symbol_map)

    traj_dir = out / "trajectories"
    traj_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for t in corpus:
        masked = mask_trajectory(t, symbol_map)
        name = f"{masked.meta['trajectory_id']}.json"
        save_trajectory(masked, traj_dir / name)
        entries.append({"id": masked.meta["trajectory_id"], "file": f"trajectories/{name}"})

    save_universe(masked_u, out / "universe.json")
    dump_json(schema_to_config(masked_u.schema), out / "schema.json")
    dump_json(symbol_map.to_obj(), out / "symbol_map.json")
    dump_json(
        {
            "engine_version": guessbench.ENGINE_VERSION,
            "source_fingerprint": universe.fingerprint(),
            "universe_fingerprint": masked_u.fingerprint(),
            "trajectories": entries,
        },
        out / "corpus_manifest.json",
    )
    _write_manifest(out, "mask", vars(args))
    log.info("masked %d trajectories into %s", len(entries), out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# bucket

def cmd_bucket(args) -> int:
    src = Path(args.corpus)
    out = Path(args.out)
    _ensure_out(out, "bucket_manifest.json", args.force)
    limits = [int(x) for x in args.buckets.split(",") if x]
    spec = BucketSpec(limits=tuple(sorted(set(limits))), fill_floor=args.fill_floor)

    corpus = _load_corpus(src)
    manifest = []
    for limit in spec.limits:
        bucket_dir = out / str(limit)
        bucket_dir.mkdir(parents=True, exist_ok=True)
        ids, token_counts = [], []
        for t in corpus:
            try:
                truncated = truncate_whole_rounds(t, limit)
            except TruncationError:
                continue
            tokens = truncated.meta["truncated_tokens"]
            if tokens <= spec.fill_floor * limit:
                continue
            name = f"{truncated.meta['trajectory_id']}.json"
            save_trajectory(truncated, bucket_dir / name)
            ids.append(truncated.meta["trajectory_id"])
            token_counts.append(tokens)
        manifest.append({
            "bucket_limit": limit,
            "sample_ids": ids,
            "token_counts": token_counts,
            "counter_mode": DEFAULT_COUNTER.mode,
        })

    dump_json(manifest, out / "bucket_manifest.json")
    _write_manifest(out, "bucket", vars(args))
    log.info("bucketed %d trajectories into %s", len(corpus), out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# qa

def cmd_qa(args) -> int:
    src = Path(args.corpus)
    out = Path(args.out)
    _ensure_out(out, "dataset.jsonl", args.force)

    quota = QuotaConfig.from_obj(load_json(args.quota))
    if args.buckets:
        wanted = {int(x) for x in args.buckets.split(",") if x}
        quota = QuotaConfig({b: row for b, row in quota.cells.items() if b in wanted})
        if not quota.cells:
            raise DataError(f"quota file has no rows for buckets {sorted(wanted)}")

    corpus = _load_corpus(src)
    samples = build_dataset(corpus, quota, args.seed)
    save_dataset(samples, out / "dataset.jsonl")

    counts: dict[str, dict[str, int]] = {}
    for s in samples:
        counts.setdefault(str(s.bucket_limit), {}).setdefault(s.question_type, 0)
        counts[str(s.bucket_limit)][s.question_type] += 1
    dump_json(
        {
            "engine_version": guessbench.ENGINE_VERSION,
            "n_samples": len(samples),
            "counts": counts,
            "counter_mode": DEFAULT_COUNTER.mode,
            "quota": quota.to_obj(),
            "seed": args.seed,
        },
        out / "dataset_manifest.json",
    )
    _write_manifest(out, "qa", vars(args))
    log.info("built %d samples into %s", len(samples), out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate / report

def cmd_evaluate(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.exists() and not args.resume and not args.force:
        raise DataError(f"{out} already exists; pass --resume to continue or --force to restart")
    if out.exists() and args.force and not args.resume:
        out.unlink()
    try:
        results = run_eval(
            args.dataset,
            args.endpoint,
            args.model,
            out,
            max_concurrent=args.max_concurrent,
            timeout=args.timeout,
            retries=args.retries,
            temperature=args.temperature,
        )
    except OSError as exc:
        raise EndpointError(str(exc)) from exc
    failed = sum(1 for r in results if r.error)
    if failed and failed == len(results):
        raise EndpointError(f"all {failed} requests failed; see {out}")
    log.info("evaluated %d samples (%d transport failures)", len(results), failed)
    return EXIT_OK


def cmd_report(args) -> int:
    src = Path(args.results)
    if src.is_dir():
        paths = sorted(src.glob("*.jsonl"))
    else:
        paths = [src] if src.exists() else []
    if not paths:
        raise DataError(f"no result files under {src}")
    report = aggregate(paths, args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(report, out / "report.json")
    (out / "report.csv").write_text(report_to_csv(report), encoding="utf-8")
    log.info("wrote report for %d results to %s", report["n_results"], out)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="guessbench")
    parser.add_argument("--version", action="version", version=guessbench.ENGINE_VERSION)
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="simulate a trajectory corpus")
    p.add_argument("--universe", help="item file (CSV or JSON array)")
    p.add_argument("--schema", help="schema config JSON for --universe")
    p.add_argument("--synthetic", help="synthesize a world, e.g. n=256")
    p.add_argument("--format", choices=["concise", "verbose"], default="concise")
    p.add_argument("--setting", choices=["knowledge-intensive", "knowledge-free"],
                   default="knowledge-intensive")
    p.add_argument("--max-rounds", type=int, default=2010)
    p.add_argument("--epsilon", type=float, default=0.15)
    p.add_argument("--history-window", type=int, default=6)
    p.add_argument("--forget-history-prob", type=float, default=0.25)
    p.add_argument("--mask-prob", type=float, default=0.5)
    p.add_argument("--max-mask-sections", type=int, default=2)
    p.add_argument("--token-budget", type=int, default=None)
    p.add_argument("--n-trajectories", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("mask", help="apply symbolic masking to a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_mask)

    p = sub.add_parser("bucket", help="truncate a corpus into token buckets")
    p.add_argument("--corpus", required=True)
    p.add_argument("--buckets", default="32768,65536,131072,262144,524288,1048576,2097152,4194304")
    p.add_argument("--fill-floor", type=float, default=0.9)
    p.add_argument("--counter-mode", choices=["approximate"], default="approximate",
                   help="exact counters plug in through the Python API")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_bucket)

    p = sub.add_parser("qa", help="build a QA dataset from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--quota", required=True, help="quota JSON (see presets/)")
    p.add_argument("--buckets", help="restrict to these bucket limits, comma-separated")
    p.add_argument("--counter-mode", choices=["approximate"], default="approximate",
                   help="exact counters plug in through the Python API")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_qa)

    p = sub.add_parser("evaluate", help="run a dataset against a chat endpoint")
    p.add_argument("--dataset", required=True)
    p.add_argument("--endpoint", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-concurrent", type=int, default=4)
    p.add_argument("--timeout", type=float, default=120.0)
    p.add_argument("--retries", type=int, default=2)
    p.add_argument("--temperature", type=float, default=0.7)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("report", help="aggregate results into accuracy matrices")
    p.add_argument("--results", required=True, help="results file or directory")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses code 2 for usage problems
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (DataError, UniverseError, QuotaError, FileNotFoundError, json.JSONDecodeError,
            TruncationError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except EndpointError as exc:
        log.error("%s", exc)
        return EXIT_ENDPOINT


if __name__ == "__main__":
    sys.exit(main())
