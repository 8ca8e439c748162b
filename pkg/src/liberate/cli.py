"""Command-line entry point: ``liberate <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 numeric abort,
4 ledger verification failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from liberate.config import ExperimentConfig, ConfigError
from liberate.dataset import SplitSpec, load_movielens, split, subset_top, synthesize_ratings
from liberate.federation import run_centralized, run_training, write_metrics_csv
from liberate.ledger import (
    Block,
    LedgerIntegrityError,
    RecordType,
    detect_rating_anomaly,
    load_chain,
    mine,
    sha256_hex,
    trace_user,
    verify,
    ZERO_HASH,
)
from liberate.mf import NumericOverflowError

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_LEDGER = 4

log = logging.getLogger("liberate")


def _out_dir(args, cfg: ExperimentConfig | None = None) -> Path:
    out = args.out or (cfg["run"]["out"] if cfg else "") or os.environ.get("LIBERATE_OUT") or "liberate-out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _config(args) -> ExperimentConfig:
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"run.seed={args.seed}")
    return ExperimentConfig.load(args.config, overrides)


def prepare_data(cfg: ExperimentConfig):
    d = cfg["data"]
    if d["synthetic"]:
        store = synthesize_ratings(d["synthetic_users"], d["synthetic_items"], seed=d["synthetic_seed"])
    else:
        if not d["path"]:
            raise ConfigError("data.path is required unless data.synthetic = true")
        try:
            store = load_movielens(d["path"], d["format"] or None)
        except OSError as exc:
            raise ConfigError(f"cannot read ratings: {exc}") from None
    try:
        store = subset_top(store, min(d["k_users"], store.m), min(d["k_items"], store.n))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return split(store, SplitSpec(d["train_fraction"], cfg.seed_for("split")))


def train_once(cfg: ExperimentConfig):
    train, test = prepare_data(cfg)
    rc = cfg.run_config()
    if rc.mode == "centralized":
        return run_centralized(train, test, rc)
    return run_training(train, test, rc)


def _summary(cfg: ExperimentConfig, result) -> dict:
    f = result.final
    rc = cfg.run_config()
    chain = result.chain
    reports = result.reports
    return {
        "mode": rc.mode,
        "seed": cfg.master_seed,
        "rounds": len(reports),
        "final_train_rmse": f.train_rmse if f else None,
        "final_test_rmse": f.test_rmse if f else None,
        "final_test_ndcg": f.test_ndcg if f else None,
        "final_objective": f.objective if f else None,
        "shared_ratings": sum(len(r.items) for r in result.share_records),
        "share_records": len(result.share_records),
        "ledger_blocks": len(chain) if chain is not None else 0,
        "difficulty": rc.difficulty,
        "epsilon_per_round": rc.privacy.epsilon if rc.privacy.enabled else None,
        "epsilon_total": rc.privacy.total_epsilon(len(reports)) if rc.privacy.enabled else None,
        "wall_ms_compute": sum(r.wall_ms_compute for r in reports),
        "wall_ms_ledger": (chain.mine_seconds * 1e3) if chain is not None else 0.0,
        "simulated_upload_bytes": sum(r.upload_bytes for r in reports),
        "simulated_download_bytes": sum(r.download_bytes for r in reports),
        "config": cfg.as_dict(),
    }


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_clean(v) for v in obj]
    return obj


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    try:
        result = train_once(cfg)
    except NumericOverflowError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    paths = {"metrics": out / "metrics.csv", "summary": out / "summary.json"}
    write_metrics_csv(result.reports, paths["metrics"])
    if result.chain is not None:
        paths["ledger"] = out / "ledger.tsv"
        result.chain.save(paths["ledger"])
    summary = _summary(cfg, result)
    paths["summary"].write_text(json.dumps(_clean(summary), indent=2, sort_keys=True) + "\n")
    if args.json:
        print(json.dumps(_clean({"summary": summary, "artifacts": {k: str(v) for k, v in paths.items()}}), sort_keys=True))
    else:
        print(f"final test rmse {summary['final_test_rmse']:.4f}  ndcg {summary['final_test_ndcg']:.4f}  "
              f"rounds {summary['rounds']}  blocks {summary['ledger_blocks']}")
        print(f"compute {summary['wall_ms_compute']:.1f} ms  ledger {summary['wall_ms_ledger']:.1f} ms")
        for name, p in paths.items():
            print(f"{name}: {p}")
    return 0


SWEEP_COLUMNS = ("param", "value", "seed", "final_train_rmse", "final_test_rmse", "final_test_ndcg", "wall_ms_ledger")


def _ci95(xs) -> float:
    xs = np.asarray(xs, dtype=float)
    if xs.size < 2:
        return 0.0
    return 1.96 * float(xs.std(ddof=1)) / math.sqrt(xs.size)


def cmd_sweep(args) -> int:
    base = list(args.set or [])
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    out = _out_dir(args)
    rows = []
    for value in values:
        for seed in range(args.seed or 0, (args.seed or 0) + args.seeds):
            cfg = ExperimentConfig.load(args.config, base + [f"{args.param}={value}", f"run.seed={seed}"])
            try:
                result = train_once(cfg)
            except NumericOverflowError as exc:
                print(f"numeric abort ({args.param}={value}, seed {seed}): {exc}", file=sys.stderr)
                return EXIT_NUMERIC
            f = result.final
            rows.append({
                "param": args.param, "value": value, "seed": seed,
                "final_train_rmse": f.train_rmse, "final_test_rmse": f.test_rmse, "final_test_ndcg": f.test_ndcg,
                "wall_ms_ledger": result.chain.mine_seconds * 1e3 if result.chain is not None else 0.0,
            })
    runs_path = out / "sweep_runs.csv"
    with runs_path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    table_path = out / "sweep_table.csv"
    with table_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["param", "value", "runs", "test_rmse_mean", "test_rmse_ci95", "test_ndcg_mean", "test_ndcg_ci95"])
        for value in values:
            sel = [r for r in rows if r["value"] == value]
            rm = [r["final_test_rmse"] for r in sel]
            nd = [r["final_test_ndcg"] for r in sel]
            w.writerow([args.param, value, len(sel), np.mean(rm), _ci95(rm), np.mean(nd), _ci95(nd)])
            print(f"{args.param}={value}: rmse {np.mean(rm):.4f} ± {_ci95(rm):.4f}  ndcg {np.mean(nd):.4f} ± {_ci95(nd):.4f}")
    print(f"runs: {runs_path}")
    print(f"table: {table_path}")
    return 0


def _load(args):
    return load_chain(args.ledger, getattr(args, "difficulty", None))


def cmd_verify(args) -> int:
    chain = _load(args)
    verdict = verify(chain)
    if args.json:
        print(json.dumps({"ok": verdict.ok, "index": verdict.index, "reason": verdict.reason, "blocks": len(chain)}))
    elif verdict:
        print(f"ok: {len(chain)} blocks, difficulty {chain.difficulty}")
    else:
        print(f"FAIL at block {verdict.index}: {verdict.reason}")
    return 0 if verdict else EXIT_LEDGER


def cmd_trace(args) -> int:
    chain = _load(args)
    try:
        report = trace_user(chain, args.user)
    except LedgerIntegrityError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_LEDGER
    if args.json:
        print(json.dumps(report.to_dict(), sort_keys=True))
        return 0
    print(f"user {args.user}")
    print(f"shares out ({len(report.shares_out)}):")
    for rec, blk in zip(report.shares_out, report.share_blocks_out):
        print(f"  block {blk}: to user {rec.receiver_user}, items {[j for j, _ in rec.items]}")
    print(f"shares in ({len(report.shares_in)}):")
    for rec, blk in zip(report.shares_in, report.share_blocks_in):
        print(f"  block {blk}: from user {rec.source_user}, ratings {list(rec.items)}")
    rounds = report.model_update_rounds
    span = f"{rounds[0]}..{rounds[-1]}" if rounds else "none"
    print(f"model updates ({len(rounds)}): rounds {span}")
    return 0


def cmd_anomalies(args) -> int:
    chain = _load(args)
    try:
        flagged = detect_rating_anomaly(chain, args.z)
    except LedgerIntegrityError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_LEDGER
    if args.json:
        print(json.dumps([{"source": s, "item": j} for s, j in flagged]))
    else:
        print(f"{len(flagged)} flagged (z > {args.z})")
        for s, j in flagged:
            print(f"  source {s}, item {j}")
    return 0


def _levels(text: str) -> list[int]:
    levels = []
    for part in text.split(","):
        if "-" in part:
            lo, hi = part.split("-")
            levels.extend(range(int(lo), int(hi) + 1))
        else:
            levels.append(int(part))
    return levels


def pow_bench(levels: list[int], blocks: int) -> list[dict]:
    rows = []
    payload = b"pow-bench"
    digest = sha256_hex(payload)
    for d in levels:
        if not 0 <= d <= 8:
            raise ConfigError(f"difficulty must lie in [0, 8], got {d}")
        attempts = []
        t0 = time.perf_counter()
        prev = ZERO_HASH
        for k in range(blocks):
            b = mine(Block(k + 1, k + 1, RecordType.DATA_SHARE, payload, digest, prev), d)
            attempts.append(b.attempts)
            prev = b.hash
        wall = time.perf_counter() - t0
        rows.append({
            "difficulty": d, "blocks": blocks, "mean_attempts": float(np.mean(attempts)),
            "expected_attempts": 16.0**d, "wall_seconds": wall, "seconds_per_block": wall / blocks,
        })
    return rows


def cmd_pow_bench(args) -> int:
    rows = pow_bench(_levels(args.difficulty), args.blocks)
    if args.json:
        print(json.dumps(rows))
        return 0
    print(f"{'level':>5} {'blocks':>7} {'mean attempts':>14} {'16^d':>10} {'total s':>10} {'s/block':>10}")
    for r in rows:
        print(f"{r['difficulty']:>5} {r['blocks']:>7} {r['mean_attempts']:>14.1f} {r['expected_attempts']:>10.0f} "
              f"{r['wall_seconds']:>10.4f} {r['seconds_per_block']:>10.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="liberate", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def run_args(sp):
        sp.add_argument("--config", help="TOML experiment config")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
        sp.add_argument("--out", help="output directory (default: $LIBERATE_OUT)")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--json", action="store_true", help="machine-readable output")

    sp = sub.add_parser("train", help="run one training job and write ledger, metrics and summary")
    run_args(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sweep", help="repeat training over parameter values and seeds")
    run_args(sp)
    sp.add_argument("--param", required=True, help="config key to vary, e.g. share.fraction")
    sp.add_argument("--values", required=True, help="comma-separated values")
    sp.add_argument("--seeds", type=int, default=10, help="runs per value (seeds start at --seed)")
    sp.set_defaults(func=cmd_sweep)

    def ledger_args(sp):
        sp.add_argument("--ledger", required=True, help="ledger file")
        sp.add_argument("--difficulty", type=int, help="expected difficulty (default: inferred from hashes)")
        sp.add_argument("--json", action="store_true", help="machine-readable output")

    sp = sub.add_parser("verify", help="check every hash, link and difficulty in a ledger")
    ledger_args(sp)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("trace", help="provenance report for one user")
    ledger_args(sp)
    sp.add_argument("--user", type=int, required=True, help="user index")
    sp.set_defaults(func=cmd_trace)

    sp = sub.add_parser("anomalies", help="flag shared ratings far from the item's mean")
    ledger_args(sp)
    sp.add_argument("--z", type=float, default=2.0, help="z-score threshold")
    sp.set_defaults(func=cmd_anomalies)

    sp = sub.add_parser("pow-bench", help="mining attempts and time per difficulty level")
    sp.add_argument("--difficulty", default="1-4", help="level, list or range, e.g. 3 or 1,2 or 0-5")
    sp.add_argument("--blocks", type=int, default=100, help="blocks mined per level")
    sp.add_argument("--json", action="store_true", help="machine-readable output")
    sp.set_defaults(func=cmd_pow_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        if args.command in ("verify", "trace", "anomalies"):
            print(f"cannot read ledger: {exc}", file=sys.stderr)
            return EXIT_LEDGER
        raise


if __name__ == "__main__":
    sys.exit(main())
