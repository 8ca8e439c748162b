"""Federated training loop and the centralized baseline.

One federated round:

* each client downloads V, computes its user and item gradients at the
  current (u_i, V), updates u_i locally and uploads the (perturbed) item
  gradients;
* the server sums uploads per item in ascending user order, adds the
  regularizer once when ``reg_mode == "server"``, steps V, and commits a
  MODEL_UPDATE block carrying digests of the new factors.

With privacy off and server-side regularization this is exactly full-batch
gradient descent on the unnormalized loss, which :func:`run_centralized`
computes independently.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal

import numpy as np

from liberate._seeds import derive_seed, substream
from liberate.dataset import RatingStore
from liberate.ldp import PrivacyParams, perturb_gradient
from liberate.ledger import (
    Chain,
    ModelUpdateRecord,
    RecordType,
    append_unchecked,
    combine_digests,
    matrix_digest,
    sha256_hex,
    verify,
    LedgerIntegrityError,
)
from liberate.metrics import evaluate
from liberate.mf import Hyperparams, NumericOverflowError, grad_items, init_factors, objective, sgd_step
from liberate.sharing import ShareRecord, SharePlan, apply_shares, build_pool, sample_shares

log = logging.getLogger(__name__)

Mode = Literal["federated", "centralized"]

METRICS_COLUMNS = (
    "round", "train_rmse", "test_rmse", "test_ndcg", "objective", "objective_sum",
    "wall_ms_compute", "wall_ms_ledger", "upload_bytes", "download_bytes", "ledger_block_index",
)


@dataclass(frozen=True)
class RunConfig:
    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    privacy: PrivacyParams = field(default_factory=PrivacyParams)
    share_plan: SharePlan = field(default_factory=SharePlan)
    difficulty: int = 2
    mode: Mode = "federated"
    master_seed: int = 0
    logical_clock: bool = True
    early_stop: bool = False
    evaluate_every_round: bool = True

    def __post_init__(self):
        if self.mode not in ("federated", "centralized"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0 <= self.difficulty <= 8:
            raise ValueError("difficulty must lie in [0, 8]")

    @classmethod
    def seeded(cls, master_seed: int, **kw) -> "RunConfig":
        """Config whose module seeds all derive from ``master_seed``."""
        cfg = cls(master_seed=master_seed, **kw)
        return replace(
            cfg,
            privacy=replace(cfg.privacy, seed=derive_seed(master_seed, "ldp")),
            share_plan=replace(cfg.share_plan, seed=derive_seed(master_seed, "share")),
        )

    @property
    def init_seed(self) -> int:
        return derive_seed(self.master_seed, "init")


@dataclass
class RoundReport:
    round: int
    train_rmse: float
    test_rmse: float
    objective: float
    ledger_block_index: int | None = None
    objective_sum: float = float("nan")
    test_ndcg: float = float("nan")
    wall_ms_compute: float = 0.0
    wall_ms_ledger: float = 0.0
    upload_bytes: int = 0
    download_bytes: int = 0

    def as_row(self) -> dict:
        return {k: getattr(self, k) for k in METRICS_COLUMNS}


@dataclass
class TrainingState:
    train: RatingStore
    U: np.ndarray
    V: np.ndarray
    chain: Chain | None = None
    clock: int = 0
    history: list[np.ndarray] = field(default_factory=list)  # V after each round, when kept

    def tick(self, logical: bool) -> int:
        if logical:
            self.clock += 1
            return self.clock
        self.clock = max(self.clock, time.time_ns() // 1_000_000)
        return self.clock


@dataclass
class TrainingResult:
    U: np.ndarray
    V: np.ndarray
    reports: list[RoundReport]
    chain: Chain | None
    share_records: list[ShareRecord]
    train: RatingStore
    V_history: list[np.ndarray] = field(default_factory=list)

    def __iter__(self):
        # (U, V, reports, chain) unpacking
        return iter((self.U, self.V, self.reports, self.chain))

    @property
    def final(self) -> RoundReport | None:
        return self.reports[-1] if self.reports else None


def _gradient_bytes(n_items: int, l: int) -> int:
    # item id (int64) + l float64 per uploaded row
    return n_items * (8 + 8 * l)


def _report(state: TrainingState, test: RatingStore | None, hp: Hyperparams, rnd: int, evaluate_now: bool) -> RoundReport:
    with np.errstate(over="ignore", invalid="ignore"):
        obj_sum = objective(state.train, state.U, state.V, hp, normalized=False)
    if not np.isfinite(obj_sum):
        raise NumericOverflowError("objective is no longer finite", rnd)
    obj = objective(state.train, state.U, state.V, hp, normalized=True)
    train_rmse = test_rmse = ndcg = float("nan")
    if evaluate_now:
        train_rmse = evaluate(state.U, state.V, state.train)["rmse"]
        if test is not None and test.M:
            ev = evaluate(state.U, state.V, test)
            test_rmse, ndcg = ev["rmse"], ev["mean_ndcg"]
    return RoundReport(rnd, train_rmse, test_rmse, obj, objective_sum=obj_sum, test_ndcg=ndcg)


def run_round(state: TrainingState, cfg: RunConfig, rnd: int, test: RatingStore | None = None) -> tuple[TrainingState, RoundReport]:
    """One synchronized federated round (see module docstring)."""
    hp = cfg.hyperparams
    n, l = state.V.shape
    t0 = time.perf_counter()
    V = state.V  # the broadcast copy every client reads
    U_new = state.U.copy()
    G = np.zeros_like(V)
    upload = download = 0
    user_digests = []
    for i, shard in enumerate(state.train.by_user):
        if len(shard[0]) == 0:
            user_digests.append(matrix_digest(state.U[i]))
            continue
        download += V.size * 8
        g = grad_items(shard, state.U[i], V, hp.lam, hp.reg_mode)
        U_new[i] = sgd_step(state.U[i], g.user_grad, hp.gamma, round=rnd)
        g = perturb_gradient(g, cfg.privacy, substream(cfg.privacy.seed, "ldp", rnd, i))
        upload += _gradient_bytes(len(g.items), l)
        user_digests.append(matrix_digest(U_new[i]))
        # server side: accumulate in ascending user order
        G[g.items] += g.entries
    if hp.reg_mode == "server":
        G += 2.0 * hp.lam * V
    V_new = sgd_step(V, G, hp.gamma, round=rnd)
    compute_ms = (time.perf_counter() - t0) * 1e3

    block_index = None
    ledger_ms = 0.0
    if state.chain is not None:
        t1 = time.perf_counter()
        rec = ModelUpdateRecord(rnd, combine_digests(user_digests), matrix_digest(V_new), matrix_digest(G))
        block = append_unchecked(state.chain, RecordType.MODEL_UPDATE, rec.to_payload(), state.tick(cfg.logical_clock))
        block_index = block.index
        ledger_ms = (time.perf_counter() - t1) * 1e3

    state.U, state.V = U_new, V_new
    report = _report(state, test, hp, rnd, cfg.evaluate_every_round)
    report.ledger_block_index = block_index
    report.wall_ms_compute = compute_ms
    report.wall_ms_ledger = ledger_ms
    report.upload_bytes = upload
    report.download_bytes = download
    return state, report


def share_data(train: RatingStore, plan: SharePlan, timestamps=None) -> list[ShareRecord]:
    """Sample shares for every receiver (ascending) from the pre-share pool."""
    if plan.fraction == 0 or train.M == 0:
        return []
    pool = build_pool(train)
    records: list[ShareRecord] = []
    for receiver in range(train.m):
        if len(train.shard(receiver)[0]) == 0:
            continue
        ts = next(timestamps) if timestamps is not None else 0
        records.extend(sample_shares(receiver, train, pool, plan, substream(plan.seed, "share", receiver), timestamp=ts))
    return records


def _stalled(reports: list[RoundReport], window: int = 5, tol: float = 1e-6) -> bool:
    if len(reports) <= window:
        return False
    return reports[-window - 1].objective - reports[-1].objective < tol


def _init(train: RatingStore, cfg: RunConfig):
    return init_factors(train.m, train.n, cfg.hyperparams.l, substream(cfg.init_seed, "init"))


def run_training(train: RatingStore, test: RatingStore | None, cfg: RunConfig, keep_history: bool = False) -> TrainingResult:
    """Share data, commit the shares, then run the federated rounds.

    Returns the final factors, per-round reports and the ledger.  The ledger
    is verified before returning.
    """
    if cfg.mode != "federated":
        raise ValueError("run_training runs the federated mode; use run_centralized")
    chain = Chain(cfg.difficulty, genesis_timestamp=0 if cfg.logical_clock else time.time_ns() // 1_000_000)
    U, V = _init(train, cfg)
    state = TrainingState(train, U, V, chain, clock=chain.head.timestamp)

    def stamps():
        while True:
            yield state.tick(cfg.logical_clock)

    records = share_data(train, cfg.share_plan, stamps())
    for rec in records:
        append_unchecked(chain, RecordType.DATA_SHARE, rec.to_payload(), state.tick(cfg.logical_clock))
    state.train = apply_shares(train, records)
    log.info("shared %d ratings in %d records", sum(len(r.items) for r in records), len(records))

    reports: list[RoundReport] = []
    history = []
    for rnd in range(1, cfg.hyperparams.iterations + 1):
        state, report = run_round(state, cfg, rnd, test)
        reports.append(report)
        if keep_history:
            history.append(state.V.copy())
        if cfg.early_stop and _stalled(reports):
            log.info("early stop after round %d", rnd)
            break
    verdict = verify(chain)
    if not verdict:
        raise LedgerIntegrityError(verdict)
    return TrainingResult(state.U, state.V, reports, chain, records, state.train, history)


def run_centralized(train: RatingStore, test: RatingStore | None, cfg: RunConfig, keep_history: bool = False) -> TrainingResult:
    """Full-batch gradient descent on the pooled data; no privacy, no ledger.

    Sharing (if any) is applied from the same seed as the federated run, so
    both train on the same expanded ratings.
    """
    hp = cfg.hyperparams
    records = share_data(train, cfg.share_plan)
    data = apply_shares(train, records)
    U, V = _init(data, cfg)
    users, items, _ = data.triples()
    reports: list[RoundReport] = []
    history = []
    for rnd in range(1, hp.iterations + 1):
        t0 = time.perf_counter()
        res = np.concatenate(
            [vals - V[it] @ U[i] for i, (it, vals) in enumerate(data.by_user)] or [np.empty(0)]
        )
        GU = 2.0 * hp.lam * U
        for i, (it, _) in enumerate(data.by_user):
            if len(it):
                r = res[np.flatnonzero(users == i)]
                GU[i] = -2.0 * (V[it].T @ r) + GU[i]
        GV = np.zeros_like(V)
        contrib = -2.0 * res[:, None] * U[users]
        np.add.at(GV, items, contrib)
        GV += 2.0 * hp.lam * V
        rated = data.user_counts() > 0
        U_next = U.copy()
        U_next[rated] = sgd_step(U[rated], GU[rated], hp.gamma, round=rnd)
        V = sgd_step(V, GV, hp.gamma, round=rnd)
        U = U_next
        compute_ms = (time.perf_counter() - t0) * 1e3
        state = TrainingState(data, U, V)
        rep = _report(state, test, hp, rnd, cfg.evaluate_every_round)
        rep.wall_ms_compute = compute_ms
        reports.append(rep)
        if keep_history:
            history.append(V.copy())
        if cfg.early_stop and _stalled(reports):
            break
    return TrainingResult(U, V, reports, None, records, data, history)


def write_metrics_csv(reports: list[RoundReport], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRICS_COLUMNS)
        w.writeheader()
        for r in reports:
            row = r.as_row()
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
