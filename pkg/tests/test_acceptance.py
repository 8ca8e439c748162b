"""End-to-end acceptance checks, one test per criterion.

Ratings come from ``$LIBERATE_RATINGS`` (a MovieLens ratings.dat/.csv) when
set, otherwise from the seeded synthetic corpus written out in MovieLens
format and read back through the loader.  The statistical trend checks use
30 seeds, fixed before any results were looked at.
"""

import hashlib
import math
import os
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from liberate._seeds import derive_seed
from liberate.cli import pow_bench
from liberate.dataset import SplitSpec, load_movielens, split, subset_top, synthesize_ratings, write_movielens
from liberate.federation import RunConfig, run_centralized, run_training
from liberate.ldp import PrivacyParams, laplace_sample
from liberate.ledger import Block, Chain, ModelUpdateRecord, RecordType, load_chain, sha256_hex, verify
from liberate.metrics import evaluate, ndcg, rmse
from liberate.mf import Hyperparams
from liberate.sharing import SharePlan, ShareRecord

from test_mf import check_gradients

SEEDS = range(30)


@pytest.fixture(scope="module")
def ratings(tmp_path_factory):
    path = os.environ.get("LIBERATE_RATINGS")
    if not path:
        path = tmp_path_factory.mktemp("data") / "ratings.dat"
        write_movielens(synthesize_ratings(seed=0), path, "dat")
    return load_movielens(path)


def final_metrics(store, seed, *, fraction=0.3, privacy=None, difficulty=0):
    train, test = split(store, SplitSpec(0.8, derive_seed(seed, "split")))
    cfg = RunConfig.seeded(
        seed,
        hyperparams=Hyperparams(),
        privacy=privacy or PrivacyParams(enabled=False),
        share_plan=SharePlan(fraction),
        difficulty=difficulty,
        evaluate_every_round=False,
    )
    res = run_training(train, test, cfg)
    return evaluate(res.U, res.V, test)


def non_increasing(xs):
    return all(b <= a for a, b in zip(xs, xs[1:]))


def test_c01_gradient_oracle(criterion):
    t0 = time.perf_counter()
    worst = max(check_gradients(seed) for seed in range(100))
    elapsed = time.perf_counter() - t0
    criterion(1, "analytic gradients match central finite differences", f"max rel err {worst:.2e}, {elapsed:.2f} s")
    assert worst < 1e-5
    assert elapsed < 5


def test_c02_federated_equals_centralized(ratings, criterion):
    store = subset_top(ratings, 10, 40)
    train, test = split(store, SplitSpec(0.8, derive_seed(0, "split")))
    cfg = RunConfig.seeded(0, privacy=PrivacyParams(enabled=False), difficulty=1)
    t0 = time.perf_counter()
    fed = run_training(train, test, cfg, keep_history=True)
    cen = run_centralized(train, test, replace(cfg, mode="centralized"), keep_history=True)
    elapsed = time.perf_counter() - t0
    same = [a.tobytes() == b.tobytes() for a, b in zip(fed.V_history, cen.V_history)]
    criterion(2, "federated and centralized V bitwise identical for 80 rounds",
              f"{sum(same)}/{len(same)} rounds identical, {elapsed:.1f} s")
    assert len(same) == 80 and all(same)
    assert elapsed < 30


@pytest.mark.slow
def test_c03_reference_band(ratings, criterion):
    store = subset_top(ratings, 10, 40)
    runs = [final_metrics(store, s) for s in SEEDS]
    r = float(np.mean([x["rmse"] for x in runs]))
    n = float(np.mean([x["mean_ndcg"] for x in runs]))
    criterion(3, "DP off, 30% sharing, U=10/I=40: mean RMSE in 1.175±0.35, mean NDCG in 0.876±0.10",
              f"rmse {r:.4f}, ndcg {n:.4f}, {len(runs)} seeds")
    assert abs(r - 1.175) <= 0.35
    assert abs(n - 0.876) <= 0.10


@pytest.mark.slow
def test_c04_sharing_fraction_trend(ratings, criterion):
    store = subset_top(ratings, 10, 40)
    t0 = time.perf_counter()
    pp = PrivacyParams(epsilon=10.0)
    means = []
    for f in (0.1, 0.2, 0.3):
        means.append(float(np.mean([final_metrics(store, s, fraction=f, privacy=pp)["rmse"] for s in SEEDS])))
    elapsed = time.perf_counter() - t0
    detail = ", ".join(f"{f}: {m:.4f}" for f, m in zip((0.1, 0.2, 0.3), means))
    criterion(4, "mean RMSE non-increasing over sharing fractions 0.1, 0.2, 0.3 (eps=10)", f"{detail}; {elapsed:.0f} s")
    assert elapsed < 15 * 60
    assert non_increasing(means)


@pytest.mark.slow
def test_c05_epsilon_trend(ratings, criterion):
    store = subset_top(ratings, 20, 90)
    t0 = time.perf_counter()
    settings = [(e, PrivacyParams(epsilon=e)) for e in (1.0, 3.0, 5.0, 8.0, 10.0)]
    settings.append(("off", PrivacyParams(enabled=False)))
    means = []
    for _, pp in settings:
        means.append(float(np.mean([final_metrics(store, s, privacy=pp)["rmse"] for s in SEEDS])))
    elapsed = time.perf_counter() - t0
    detail = ", ".join(f"{e}: {m:.4f}" for (e, _), m in zip(settings, means))
    criterion(5, "mean RMSE non-increasing in eps over 1, 3, 5, 8, 10, off (U=20/I=90)", f"{detail}; {elapsed:.0f} s")
    assert elapsed < 30 * 60
    assert non_increasing(means)


def test_c06_laplace_statistics(criterion):
    b = 0.2
    x = laplace_sample(b, np.random.default_rng(derive_seed(0, "ldp")), size=100_000)
    mean, mad = float(x.mean()), float(np.abs(x).mean())
    p = stats.kstest(x, "laplace", args=(0, b)).pvalue
    criterion(6, "Laplace(0, 0.2) draws: mean, mean absolute deviation, KS",
              f"mean {mean:+.5f}, mad {mad:.5f}, KS p {p:.3f}")
    assert abs(mean) <= 0.01
    assert abs(mad - b) <= 0.03 * b
    assert p > 0.01


def fifty_block_chain():
    chain = Chain(1)
    for k in range(1, 50):
        if k % 2:
            rec = ShareRecord(k % 7, (k + 3) % 7, 0, ((k, float(1 + k % 5)), (k + 50, 2.5)), k)
            chain.append(RecordType.DATA_SHARE, rec.to_payload(), k)
        else:
            d = [sha256_hex(f"{tag}{k}".encode()) for tag in "uvg"]
            chain.append(RecordType.MODEL_UPDATE, ModelUpdateRecord(k // 2, *d).to_payload(), k)
    return chain


HEX = "0123456789abcdef"
DEC = "0123456789"


def _mutations(block):
    """Every single-byte change of every field, as field -> replacement value."""
    for name, alphabet in (("payload_digest", HEX), ("prev_hash", HEX), ("hash", HEX)):
        value = getattr(block, name)
        for pos, ch in enumerate(value):
            for alt in alphabet:
                if alt != ch:
                    yield name, value[:pos] + alt + value[pos + 1:]
    for name in ("index", "timestamp", "nonce"):
        text = str(getattr(block, name))
        for pos, ch in enumerate(text):
            for alt in DEC:
                if alt != ch:
                    yield name, int(text[:pos] + alt + text[pos + 1:])
    for pos in range(len(block.payload)):
        for mask in (0x01, 0x20, 0x80, 0xFF):
            p = bytearray(block.payload)
            p[pos] ^= mask
            yield "payload", bytes(p)
    for rt in RecordType:
        if rt != block.record_type:
            yield "record_type", rt


def test_c07_ledger_integrity(tmp_path, criterion):
    chain = fifty_block_chain()
    assert verify(chain).ok
    blocks = list(chain.blocks)
    total = caught = 0
    for k, block in enumerate(blocks):
        for name, value in _mutations(block):
            total += 1
            tampered = Block(**{**block.__dict__, name: value})
            mutated = Chain(chain.difficulty, _blocks=blocks[:k] + [tampered] + blocks[k + 1:])
            v = verify(mutated)
            caught += (not v.ok) and v.index >= k
    path = tmp_path / "ledger.tsv"
    chain.save(path)
    raw = path.read_bytes()
    reloaded = load_chain(path)
    reloaded.save(tmp_path / "copy.tsv")
    round_trip = (tmp_path / "copy.tsv").read_bytes() == raw and verify(reloaded).ok
    criterion(7, "every single-byte mutation of a 50-block chain is detected; file round-trip exact",
              f"{caught}/{total} mutations detected, round-trip {'exact' if round_trip else 'BROKEN'}")
    assert len(chain) == 50
    assert caught == total
    assert round_trip


@pytest.mark.slow
def test_c08_pow_scaling(criterion):
    rows = pow_bench([1, 2, 3, 4], 500)
    means = [r["mean_attempts"] for r in rows]
    walls = [r["wall_seconds"] for r in rows]
    ratios = [b / a for a, b in zip(means, means[1:])]
    criterion(8, "mean mining attempts grow ~16x per level over 500 blocks; wall time monotone",
              "ratios " + ", ".join(f"{x:.1f}" for x in ratios) + "; seconds " + ", ".join(f"{w:.2f}" for w in walls))
    assert all(8 <= x <= 32 for x in ratios)
    assert walls == sorted(walls)


def test_c09_sha256_vectors(criterion):
    a, b = sha256_hex(b""), sha256_hex(b"abc")
    criterion(9, "SHA-256 reference vectors for empty input and 'abc'")
    assert a == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    assert b == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    assert a == hashlib.sha256(b"").hexdigest()


def test_c10_metric_units(criterion):
    rng = np.random.default_rng(10)
    ideal = [ndcg(sorted(rng.uniform(0, 5, rng.integers(1, 30)), reverse=True)) for _ in range(200)]
    cases = [rmse([1, 2, 3], [1, 2, 3]), rmse([1, 3], [2, 4]), rmse([1, 2], [1, 4])]
    criterion(10, "NDCG of ideal orderings is exactly 1; RMSE hand cases to 1e-12")
    assert all(x == 1.0 for x in ideal)
    assert abs(cases[0] - 0.0) <= 1e-12
    assert abs(cases[1] - 1.0) <= 1e-12
    assert abs(cases[2] - math.sqrt(2)) <= 1e-12
