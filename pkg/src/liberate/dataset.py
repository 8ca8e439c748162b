"""Rating ingestion, desk-scale subsets and per-user train/test splits.

A :class:`RatingStore` keeps ratings grouped by user.  Users and items are
addressed by dense 0-based indices; the original MovieLens ids are kept in
``user_ids`` / ``item_ids`` so subsets can always be mapped back.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from liberate._seeds import substream

log = logging.getLogger(__name__)

RATING_MIN = 0.0
RATING_MAX = 5.0


class RatingParseError(ValueError):
    """A ratings file line could not be parsed."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class RatingRangeError(ValueError):
    """A rating value lies outside [0, 5]."""


@dataclass(frozen=True)
class Rating:
    user_id: int
    item_id: int
    value: float

    def __post_init__(self):
        if not RATING_MIN <= self.value <= RATING_MAX:
            raise RatingRangeError(f"rating {self.value} outside [{RATING_MIN}, {RATING_MAX}]")


@dataclass(frozen=True, eq=False)
class RatingStore:
    """Sparse ratings grouped by user.

    ``by_user[i]`` is a pair ``(items, values)`` of equal-length arrays with
    ``items`` strictly ascending.
    """

    m: int
    n: int
    by_user: tuple[tuple[np.ndarray, np.ndarray], ...]
    user_ids: np.ndarray = field(default=None)  # original ids, index -> id
    item_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        if len(self.by_user) != self.m:
            raise ValueError(f"expected {self.m} user shards, got {len(self.by_user)}")
        shards = []
        for i, (items, values) in enumerate(self.by_user):
            items = np.asarray(items, dtype=np.int64)
            values = np.asarray(values, dtype=np.float64)
            if items.shape != values.shape or items.ndim != 1:
                raise ValueError(f"user {i}: items/values shape mismatch")
            if items.size:
                if items[0] < 0 or items[-1] >= self.n:
                    raise ValueError(f"user {i}: item index out of range [0, {self.n})")
                if np.any(np.diff(items) <= 0):
                    raise ValueError(f"user {i}: items not strictly ascending (duplicate or unsorted)")
                if values.min() < RATING_MIN or values.max() > RATING_MAX:
                    raise RatingRangeError(f"user {i}: rating outside [{RATING_MIN}, {RATING_MAX}]")
            items.setflags(write=False)
            values.setflags(write=False)
            shards.append((items, values))
        object.__setattr__(self, "by_user", tuple(shards))
        uids = np.arange(self.m) if self.user_ids is None else np.asarray(self.user_ids, dtype=np.int64)
        iids = np.arange(self.n) if self.item_ids is None else np.asarray(self.item_ids, dtype=np.int64)
        if uids.shape != (self.m,) or iids.shape != (self.n,):
            raise ValueError("original id maps must have lengths m and n")
        object.__setattr__(self, "user_ids", uids)
        object.__setattr__(self, "item_ids", iids)

    @property
    def M(self) -> int:
        return sum(len(items) for items, _ in self.by_user)

    def __len__(self) -> int:
        return self.M

    def __eq__(self, other):
        if not isinstance(other, RatingStore):
            return NotImplemented
        return (
            self.m == other.m
            and self.n == other.n
            and np.array_equal(self.user_ids, other.user_ids)
            and np.array_equal(self.item_ids, other.item_ids)
            and all(
                np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
                for a, b in zip(self.by_user, other.by_user)
            )
        )

    def shard(self, user: int) -> tuple[np.ndarray, np.ndarray]:
        return self.by_user[user]

    def ratings(self) -> Iterable[Rating]:
        for i, (items, values) in enumerate(self.by_user):
            for j, r in zip(items.tolist(), values.tolist()):
                yield Rating(i, j, r)

    def triples(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flat (users, items, values) arrays in user-major, item-ascending order."""
        users = np.concatenate([np.full(len(it), i, dtype=np.int64) for i, (it, _) in enumerate(self.by_user)] or [np.empty(0, np.int64)])
        items = np.concatenate([it for it, _ in self.by_user] or [np.empty(0, np.int64)])
        values = np.concatenate([v for _, v in self.by_user] or [np.empty(0)])
        return users, items, values

    def item_counts(self) -> np.ndarray:
        counts = np.zeros(self.n, dtype=np.int64)
        for items, _ in self.by_user:
            counts[items] += 1
        return counts

    def user_counts(self) -> np.ndarray:
        return np.array([len(items) for items, _ in self.by_user], dtype=np.int64)

    def digest_bytes(self) -> bytes:
        """Stable byte rendering, used to check byte-identical reproduction."""
        parts = [f"{self.m}x{self.n}".encode(), self.user_ids.astype(">i8").tobytes(), self.item_ids.astype(">i8").tobytes()]
        for items, values in self.by_user:
            parts.append(len(items).to_bytes(8, "big"))
            parts.append(items.astype(">i8").tobytes())
            parts.append(values.astype(">f8").tobytes())
        return b"".join(parts)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        # 1.0 is accepted so tests can request an empty test set
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError(f"train_fraction must lie in (0, 1], got {self.train_fraction}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def from_triples(users: Sequence[int], items: Sequence[int], values: Sequence[float]) -> RatingStore:
    """Build a store from raw (original) ids, densifying them in ascending id order."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    if not (users.shape == items.shape == values.shape):
        raise ValueError("users, items and values must have equal length")
    if values.size and (values.min() < RATING_MIN or values.max() > RATING_MAX):
        raise RatingRangeError("rating outside [0, 5]")
    uids, uidx = np.unique(users, return_inverse=True)
    iids, iidx = np.unique(items, return_inverse=True)
    return _group(len(uids), len(iids), uidx, iidx, values, uids, iids)


def _group(m, n, uidx, iidx, values, uids, iids) -> RatingStore:
    order = np.lexsort((iidx, uidx))
    uidx, iidx, values = uidx[order], iidx[order], values[order]
    dup = (np.diff(uidx) == 0) & (np.diff(iidx) == 0)
    if np.any(dup):
        k = int(np.flatnonzero(dup)[0])
        raise ValueError(f"duplicate rating for user {uids[uidx[k]]}, item {iids[iidx[k]]}")
    bounds = np.searchsorted(uidx, np.arange(m + 1))
    by_user = tuple((iidx[bounds[i]:bounds[i + 1]], values[bounds[i]:bounds[i + 1]]) for i in range(m))
    return RatingStore(m, n, by_user, uids, iids)


def load_movielens(path: str | Path, format: str | None = None) -> RatingStore:
    """Read a MovieLens ``ratings.dat`` (``::``-separated) or CSV ratings file.

    ``format`` is ``"dat"`` or ``"csv"``; when omitted it is inferred from the
    file suffix.  A CSV header line is skipped.  Ids are remapped to dense
    indices in ascending original-id order.
    """
    path = Path(path)
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "dat"
    if format not in ("dat", "csv"):
        raise ValueError(f"unknown ratings format {format!r}")
    sep = "::" if format == "dat" else ","
    users, items, values = [], [], []
    seen = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(sep)
            if format == "csv" and lineno == 1 and not fields[0].strip().lstrip("-").isdigit():
                continue
            if format == "dat" and len(fields) != 4 or format == "csv" and len(fields) not in (3, 4):
                raise RatingParseError(lineno, f"expected {'4' if format == 'dat' else '3 or 4'} fields, got {len(fields)}")
            try:
                u, i, r = int(fields[0]), int(fields[1]), float(fields[2])
                if len(fields) == 4:
                    int(float(fields[3]))
            except ValueError as exc:
                raise RatingParseError(lineno, str(exc)) from None
            if not (RATING_MIN <= r <= RATING_MAX) or math.isnan(r):
                raise RatingRangeError(f"line {lineno}: rating {r} outside [{RATING_MIN}, {RATING_MAX}]")
            if (u, i) in seen:
                raise RatingParseError(lineno, f"duplicate rating for user {u}, item {i}")
            seen.add((u, i))
            users.append(u)
            items.append(i)
            values.append(r)
    store = from_triples(users, items, values)
    log.info("loaded %s: m=%d n=%d M=%d", path, store.m, store.n, store.M)
    return store


def write_movielens(store: RatingStore, path: str | Path, format: str = "dat") -> None:
    """Write a store in ``ratings.dat`` or CSV form using original ids (timestamp 0)."""
    sep = "::" if format == "dat" else ","
    with Path(path).open("w", encoding="utf-8") as fh:
        if format == "csv":
            fh.write("userId,movieId,rating,timestamp\n")
        for i, (items, values) in enumerate(store.by_user):
            uid = int(store.user_ids[i])
            for j, r in zip(items.tolist(), values.tolist()):
                rendered = repr(r) if r != int(r) else str(int(r))
                fh.write(f"{uid}{sep}{int(store.item_ids[j])}{sep}{rendered}{sep}0\n")


def _top_indices(counts: np.ndarray, ids: np.ndarray, k: int) -> np.ndarray:
    # most counts first; equal counts by ascending original id
    order = np.lexsort((ids, -counts))
    return np.sort(order[:k])


def subset_top(store: RatingStore, k_users: int, k_items: int) -> RatingStore:
    """Restrict to the ``k_users`` most active users and ``k_items`` most rated items.

    Both rankings use counts over the full input store.  Retained users and
    items are relabelled densely in ascending original-id order.
    """
    if not 1 <= k_users <= store.m:
        raise ValueError(f"k_users must lie in [1, {store.m}], got {k_users}")
    if not 1 <= k_items <= store.n:
        raise ValueError(f"k_items must lie in [1, {store.n}], got {k_items}")
    keep_users = _top_indices(store.user_counts(), store.user_ids, k_users)
    keep_items = _top_indices(store.item_counts(), store.item_ids, k_items)
    # both index sets are ascending and the store is densified by ascending id,
    # so relabelling preserves original-id order
    remap = np.full(store.n, -1, dtype=np.int64)
    remap[keep_items] = np.arange(k_items)
    by_user = []
    for u in keep_users:
        items, values = store.by_user[u]
        new = remap[items]
        mask = new >= 0
        by_user.append((new[mask], values[mask]))
    return RatingStore(k_users, k_items, tuple(by_user), store.user_ids[keep_users], store.item_ids[keep_items])


def split(store: RatingStore, spec: SplitSpec) -> tuple[RatingStore, RatingStore]:
    """Per-user random train/test partition.

    Each user keeps ``max(1, floor(train_fraction * count))`` ratings for
    training.  Users with fewer than two ratings go entirely to train.
    """
    train, test = [], []
    for i, (items, values) in enumerate(store.by_user):
        count = len(items)
        if count < 2:
            train.append((items, values))
            test.append((items[:0], values[:0]))
            continue
        n_train = max(1, math.floor(spec.train_fraction * count))
        perm = substream(spec.seed, "split", i).permutation(count)
        tr = np.sort(perm[:n_train])
        te = np.sort(perm[n_train:])
        train.append((items[tr], values[tr]))
        test.append((items[te], values[te]))
    mk = lambda shards: RatingStore(store.m, store.n, tuple(shards), store.user_ids, store.item_ids)
    return mk(train), mk(test)


def synthesize_ratings(
    n_users: int = 600,
    n_items: int = 400,
    rank: int = 4,
    seed: int = 0,
    density: float = 0.08,
    noise: float = 0.6,
) -> RatingStore:
    """Generate a MovieLens-shaped corpus of integer 1-5 star ratings.

    User activity and item popularity follow heavy-tailed (Zipf-like)
    profiles, so the most active users and most rated items form a dense
    core just like the top of a real MovieLens file.  Ratings come from a
    low-rank model plus user/item offsets and Gaussian noise, rounded and
    clipped to 1..5.
    """
    rng = np.random.default_rng(seed)
    act = 1.0 / np.arange(1, n_users + 1) ** 0.6
    pop = 1.0 / np.arange(1, n_items + 1) ** 0.7
    rng.shuffle(act)
    rng.shuffle(pop)
    p = np.outer(act, pop)
    p *= density * n_users * n_items / p.sum()
    mask = rng.random((n_users, n_items)) < np.minimum(p, 0.97)
    P = rng.normal(0, 1 / math.sqrt(rank), (n_users, rank))
    Q = rng.normal(0, 1 / math.sqrt(rank), (n_items, rank))
    scores = 3.6 + 0.4 * rng.normal(size=(n_users, 1)) + 0.5 * rng.normal(size=(1, n_items)) + 0.9 * P @ Q.T
    scores += noise * rng.normal(size=scores.shape)
    stars = np.clip(np.rint(scores), 1, 5)
    users, items = np.nonzero(mask)
    return from_triples(users + 1, items + 1, stars[users, items])
