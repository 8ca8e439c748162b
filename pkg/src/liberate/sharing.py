"""Pre-training rating exchange between clients.

1. every client uploads its train ratings to a global pool;
2. for each receiver, pool entries on items it has not rated are eligible;
3. a fraction of eligible ratings is sampled and merged into the receiver's
   shard;
4. training starts on the expanded shards.

Each delivered batch from one donor to one receiver is a
:class:`ShareRecord` that is committed to the ledger.
"""

from __future__ import annotations

import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from liberate.dataset import RatingStore

log = logging.getLogger(__name__)


class ShareConflictError(ValueError):
    pass


@dataclass(frozen=True)
class ShareRecord:
    source_user: int
    receiver_user: int
    round: int
    items: tuple[tuple[int, float], ...]
    timestamp: int

    def __post_init__(self):
        if self.source_user == self.receiver_user:
            raise ValueError("a user cannot share with itself")
        if not self.items:
            raise ValueError("share record must carry at least one rating")
        object.__setattr__(self, "items", tuple((int(j), float(r)) for j, r in self.items))

    def to_payload(self) -> bytes:
        """Canonical JSON bytes: sorted keys, no whitespace."""
        body = {
            "items": [[j, r] for j, r in self.items],
            "receiver": self.receiver_user,
            "round": self.round,
            "source": self.source_user,
            "timestamp": self.timestamp,
        }
        return json.dumps(body, sort_keys=True, separators=(",", ":")).encode("utf-8")

    @classmethod
    def from_payload(cls, payload: bytes) -> "ShareRecord":
        body = json.loads(payload.decode("utf-8"))
        return cls(
            source_user=body["source"],
            receiver_user=body["receiver"],
            round=body["round"],
            items=tuple((j, r) for j, r in body["items"]),
            timestamp=body["timestamp"],
        )


@dataclass(frozen=True)
class SharePlan:
    fraction: float = 0.30
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError(f"share fraction must lie in [0, 1], got {self.fraction}")


Pool = dict[int, list[tuple[int, float]]]


def build_pool(train: RatingStore) -> Pool:
    """item id -> [(donor, rating), ...], donors ascending."""
    if train.M == 0:
        raise ValueError("cannot build a pool from an empty store")
    pool: Pool = defaultdict(list)
    for donor, (items, values) in enumerate(train.by_user):
        for j, r in zip(items.tolist(), values.tolist()):
            pool[j].append((donor, r))
    return dict(sorted(pool.items()))


def pool_size(pool: Pool) -> int:
    return sum(len(v) for v in pool.values())


def sample_shares(
    receiver: int,
    train: RatingStore,
    pool: Pool,
    plan: SharePlan,
    rng: np.random.Generator,
    timestamp: int = 0,
    round: int = 0,
) -> list[ShareRecord]:
    """Sample ``ceil(fraction * shard size)`` ratings for ``receiver``.

    Candidates are (item, donor) pairs on items the receiver has not rated,
    with the receiver excluded as donor.  Pairs are visited in one uniform
    random order and the first pair seen for each item is taken, so at most
    one rating per item is delivered.  The visiting order does not depend on
    the fraction: a larger fraction takes a superset of a smaller one.
    """
    own_items, _ = train.shard(receiver)
    if len(own_items) == 0:
        raise ValueError(f"receiver {receiver} has an empty shard")
    k = math.ceil(plan.fraction * len(own_items))
    rated = set(own_items.tolist())
    candidates = [
        (j, donor, r)
        for j, entries in pool.items()
        if j not in rated
        for donor, r in entries
        if donor != receiver
    ]
    if not candidates:
        log.info("receiver %d: no eligible ratings in pool, nothing shared", receiver)
        return []
    order = rng.permutation(len(candidates))
    if k == 0:
        return []
    taken: dict[int, tuple[int, float]] = {}
    for idx in order.tolist():
        j, donor, r = candidates[idx]
        if j not in taken:
            taken[j] = (donor, r)
            if len(taken) == k:
                break
    if len(taken) < k:
        log.info("receiver %d: eligible pool short (%d < %d), taking all", receiver, len(taken), k)
    grouped: dict[int, list[tuple[int, float]]] = defaultdict(list)
    for j, (donor, r) in taken.items():
        grouped[donor].append((j, r))
    return [
        ShareRecord(donor, receiver, round, tuple(sorted(grouped[donor])), timestamp)
        for donor in sorted(grouped)
    ]


def apply_shares(train: RatingStore, records: list[ShareRecord]) -> RatingStore:
    """Merge shared ratings into receiver shards; donors are left untouched."""
    if not records:
        return train
    incoming: dict[int, dict[int, tuple[float, int]]] = defaultdict(dict)
    for k, rec in enumerate(records):
        if not 0 <= rec.receiver_user < train.m or not 0 <= rec.source_user < train.m:
            raise ValueError(f"record {k}: user id out of range")
        own = set(train.shard(rec.receiver_user)[0].tolist())
        for j, r in rec.items:
            if not 0 <= j < train.n:
                raise ValueError(f"record {k}: item {j} out of range")
            if j in own:
                raise ShareConflictError(f"record {k}: receiver {rec.receiver_user} already rated item {j}")
            prev = incoming[rec.receiver_user].get(j)
            if prev is not None:
                raise ShareConflictError(
                    f"records {prev[1]} and {k} both deliver item {j} to receiver {rec.receiver_user}"
                )
            incoming[rec.receiver_user][j] = (r, k)
    shards = list(train.by_user)
    for u, extra in incoming.items():
        items, values = shards[u]
        new_items = np.array(sorted(extra), dtype=np.int64)
        new_values = np.array([extra[j][0] for j in new_items.tolist()])
        all_items = np.concatenate([items, new_items])
        all_values = np.concatenate([values, new_values])
        order = np.argsort(all_items, kind="stable")
        shards[u] = (all_items[order], all_values[order])
    return RatingStore(train.m, train.n, tuple(shards), train.user_ids, train.item_ids)
