"""Append-only SHA-256 proof-of-work ledger.

Blocks record either a data-share event or a per-round model-update digest.
A block's hash covers its index, timestamp, record type, payload digest,
predecessor hash and nonce; mining searches for the smallest nonce whose
hash begins with ``difficulty`` hex zeros.

Ledger files hold one block per line, tab-separated::

    index  timestamp  type  payload-hex  payload-digest  prev-hash  nonce  hash
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

import numpy as np

from liberate.sharing import ShareRecord

ZERO_HASH = "0" * 64
MAX_DIFFICULTY = 8
SEP = b"\x1f"


class RecordType(str, Enum):
    GENESIS = "GENESIS"
    DATA_SHARE = "DATA_SHARE"
    MODEL_UPDATE = "MODEL_UPDATE"

    @property
    def tag(self) -> str:
        return _TAGS[self]


_TAGS = {RecordType.GENESIS: "GEN", RecordType.DATA_SHARE: "SHR", RecordType.MODEL_UPDATE: "UPD"}


class LedgerIntegrityError(Exception):
    def __init__(self, verdict: "Verdict"):
        super().__init__(f"ledger fails verification at block {verdict.index}: {verdict.reason}")
        self.verdict = verdict


class MiningError(RuntimeError):
    pass


class MatrixEncodingError(ValueError):
    pass


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class Block:
    index: int
    timestamp: int
    record_type: RecordType
    payload: bytes
    payload_digest: str
    prev_hash: str
    nonce: int = 0
    hash: str = ""
    attempts: int = field(default=0, compare=False)

    def preimage(self) -> bytes:
        return canonical_preimage(self)


def canonical_preimage(b: Block) -> bytes:
    """index, timestamp, type tag, payload digest, prev hash, nonce; 0x1F separated."""
    return SEP.join(
        [
            str(b.index).encode(),
            str(b.timestamp).encode(),
            RecordType(b.record_type).tag.encode(),
            b.payload_digest.encode(),
            b.prev_hash.encode(),
            str(b.nonce).encode(),
        ]
    )


def canonical_matrix_bytes(mat) -> bytes:
    """``b"<rows> x <cols>" 0x1F`` followed by row-major big-endian float64 entries."""
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim == 1:
        mat = mat[None, :]
    if mat.ndim != 2:
        raise MatrixEncodingError(f"expected a 2-D matrix, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise MatrixEncodingError("matrix contains non-finite entries")
    header = f"{mat.shape[0]} x {mat.shape[1]}".encode()
    return header + SEP + np.ascontiguousarray(mat, dtype=">f8").tobytes()


def matrix_digest(mat) -> str:
    return sha256_hex(canonical_matrix_bytes(mat))


def combine_digests(digests: Iterable[str]) -> str:
    """Digest of the concatenated hex digests, in the given (user-id) order."""
    return sha256_hex("".join(digests).encode())


def meets_difficulty(digest: bytes, difficulty: int) -> bool:
    whole, half = divmod(difficulty, 2)
    if any(digest[:whole]):
        return False
    return not half or digest[whole] < 16


def mine(b: Block, difficulty: int, start_nonce: int = 0) -> Block:
    """Smallest nonce >= ``start_nonce`` whose hash has ``difficulty`` leading hex zeros."""
    if not 0 <= difficulty <= MAX_DIFFICULTY:
        raise ValueError(f"difficulty must lie in [0, {MAX_DIFFICULTY}], got {difficulty}")
    head = SEP.join(
        [
            str(b.index).encode(),
            str(b.timestamp).encode(),
            RecordType(b.record_type).tag.encode(),
            b.payload_digest.encode(),
            b.prev_hash.encode(),
            b"",
        ]
    )
    base = hashlib.sha256(head)
    nonce = start_nonce
    while nonce < 2**64:
        h = base.copy()
        h.update(str(nonce).encode())
        digest = h.digest()
        if meets_difficulty(digest, difficulty):
            return Block(
                b.index, b.timestamp, RecordType(b.record_type), b.payload, b.payload_digest,
                b.prev_hash, nonce, digest.hex(), attempts=nonce - start_nonce + 1,
            )
        nonce += 1
    raise MiningError("nonce space exhausted")


@dataclass(frozen=True)
class Verdict:
    ok: bool
    index: int | None = None
    reason: str = ""

    def __bool__(self):
        return self.ok


def _check_block(b: Block, prev: Block | None, expected_index: int, difficulty: int) -> str | None:
    if b.index != expected_index:
        return "index mismatch"
    if prev is None:
        if b.record_type != RecordType.GENESIS:
            return "first block is not genesis"
        if b.prev_hash != ZERO_HASH:
            return "prev_hash mismatch"
    elif b.record_type == RecordType.GENESIS:
        return "unexpected genesis block"
    if sha256_hex(b.payload) != b.payload_digest:
        return "payload digest mismatch"
    if prev is not None:
        if b.prev_hash != prev.hash:
            return "prev_hash mismatch"
        if b.timestamp < prev.timestamp:
            return "timestamp regression"
    digest = hashlib.sha256(canonical_preimage(b)).digest()
    if digest.hex() != b.hash:
        return "hash mismatch"
    if not meets_difficulty(digest, difficulty):
        return "difficulty not met"
    return None


@dataclass(frozen=True)
class ModelUpdateRecord:
    round: int
    user_matrix_digest: str
    item_matrix_digest: str
    aggregate_gradient_digest: str

    def __post_init__(self):
        for name in ("user_matrix_digest", "item_matrix_digest", "aggregate_gradient_digest"):
            value = getattr(self, name)
            if len(value) != 64 or any(c not in "0123456789abcdef" for c in value):
                raise ValueError(f"{name} must be 64 lowercase hex characters")

    def to_payload(self) -> bytes:
        body = {
            "aggregate_gradient_digest": self.aggregate_gradient_digest,
            "item_matrix_digest": self.item_matrix_digest,
            "round": self.round,
            "user_matrix_digest": self.user_matrix_digest,
        }
        return json.dumps(body, sort_keys=True, separators=(",", ":")).encode("utf-8")

    @classmethod
    def from_payload(cls, payload: bytes) -> "ModelUpdateRecord":
        return cls(**json.loads(payload.decode("utf-8")))


class Chain:
    """Hash-linked block list.  Blocks are only ever appended."""

    def __init__(self, difficulty: int = 2, genesis_timestamp: int = 0, *, _blocks: list[Block] | None = None):
        if not 0 <= difficulty <= MAX_DIFFICULTY:
            raise ValueError(f"difficulty must lie in [0, {MAX_DIFFICULTY}], got {difficulty}")
        self.difficulty = difficulty
        self.mine_seconds = 0.0
        if _blocks is not None:
            self._blocks = list(_blocks)
            return
        g = Block(0, genesis_timestamp, RecordType.GENESIS, b"", sha256_hex(b""), ZERO_HASH)
        self._blocks = [mine(g, difficulty)]

    @property
    def blocks(self) -> tuple[Block, ...]:
        return tuple(self._blocks)

    @property
    def head(self) -> Block:
        return self._blocks[-1]

    def __len__(self):
        return len(self._blocks)

    def __getitem__(self, k) -> Block:
        return self._blocks[k]

    def __iter__(self):
        return iter(self._blocks)

    def verify(self) -> Verdict:
        return verify(self)

    def append(self, record_type: RecordType, payload: bytes, timestamp: int | None = None) -> Block:
        return append(self, record_type, payload, timestamp)

    # file format -----------------------------------------------------------

    def to_lines(self) -> list[str]:
        return [
            "\t".join(
                [
                    str(b.index), str(b.timestamp), RecordType(b.record_type).value, b.payload.hex(),
                    b.payload_digest, b.prev_hash, str(b.nonce), b.hash,
                ]
            )
            for b in self._blocks
        ]

    def dumps(self) -> str:
        return "".join(line + "\n" for line in self.to_lines())

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.dumps().encode("ascii"))


def parse_ledger(text: str, difficulty: int) -> Chain:
    """Rebuild a chain from ledger-file text.  The result is *not* verified."""
    blocks = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 8:
            raise ValueError(f"ledger line {lineno}: expected 8 fields, got {len(fields)}")
        try:
            idx, ts, rtype, payload_hex, pdig, prev, nonce, h = fields
            blocks.append(
                Block(int(idx), int(ts), RecordType(rtype), bytes.fromhex(payload_hex), pdig, prev, int(nonce), h)
            )
        except ValueError as exc:
            raise ValueError(f"ledger line {lineno}: {exc}") from None
    if not blocks:
        raise ValueError("ledger is empty")
    return Chain(difficulty, _blocks=blocks)


def infer_difficulty(text: str) -> int:
    """Leading hex zeros shared by every block hash (the weakest block bounds it)."""
    hashes = [line.split("\t")[-1] for line in text.splitlines() if line]
    return min(min(len(h) - len(h.lstrip("0")), MAX_DIFFICULTY) for h in hashes) if hashes else 0


def load_chain(path: str | Path, difficulty: int | None = None) -> Chain:
    text = Path(path).read_bytes().decode("ascii")
    if difficulty is None:
        difficulty = infer_difficulty(text)
    return parse_ledger(text, difficulty)


def verify(chain: Chain) -> Verdict:
    """Recompute every digest, hash, linkage and difficulty; report the first violation."""
    prev = None
    for k, b in enumerate(chain.blocks):
        reason = _check_block(b, prev, k, chain.difficulty)
        if reason is not None:
            return Verdict(False, k, reason)
        prev = b
    return Verdict(True)


def _now_ms() -> int:
    return time.time_ns() // 1_000_000


def append(chain: Chain, record_type: RecordType, payload: bytes, timestamp: int | None = None) -> Block:
    """Mine a block for ``payload`` at chain difficulty and append it."""
    verdict = verify(chain)
    if not verdict:
        raise LedgerIntegrityError(verdict)
    head = chain.head
    if timestamp is None:
        timestamp = max(_now_ms(), head.timestamp)
    record_type = RecordType(record_type)
    if record_type == RecordType.GENESIS:
        raise ValueError("genesis blocks cannot be appended")
    draft = Block(head.index + 1, int(timestamp), record_type, bytes(payload), sha256_hex(payload), head.hash)
    t0 = time.perf_counter()
    block = mine(draft, chain.difficulty)
    chain.mine_seconds += time.perf_counter() - t0
    chain._blocks.append(block)
    return block


def append_unchecked(chain: Chain, record_type: RecordType, payload: bytes, timestamp: int) -> Block:
    """Append trusting that the chain is already valid.

    Training appends one block at a time to a chain it built itself; the
    full re-verification in :func:`append` would make that quadratic.
    """
    head = chain.head
    draft = Block(head.index + 1, int(timestamp), RecordType(record_type), bytes(payload), sha256_hex(payload), head.hash)
    t0 = time.perf_counter()
    block = mine(draft, chain.difficulty)
    chain.mine_seconds += time.perf_counter() - t0
    chain._blocks.append(block)
    return block


# queries -------------------------------------------------------------------


@dataclass
class TraceReport:
    user: int
    shares_out: list[ShareRecord]
    shares_in: list[ShareRecord]
    model_update_rounds: list[int]
    share_blocks_out: list[int] = field(default_factory=list)
    share_blocks_in: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        rec = lambda r, blk: {
            "block": blk, "source": r.source_user, "receiver": r.receiver_user, "round": r.round,
            "timestamp": r.timestamp, "items": [[j, v] for j, v in r.items],
        }
        return {
            "user": self.user,
            "shares_out": [rec(r, b) for r, b in zip(self.shares_out, self.share_blocks_out)],
            "shares_in": [rec(r, b) for r, b in zip(self.shares_in, self.share_blocks_in)],
            "model_update_rounds": list(self.model_update_rounds),
        }


def _require_valid(chain: Chain):
    verdict = verify(chain)
    if not verdict:
        raise LedgerIntegrityError(verdict)


def share_records(chain: Chain) -> list[tuple[int, ShareRecord]]:
    return [
        (b.index, ShareRecord.from_payload(b.payload))
        for b in chain.blocks
        if b.record_type == RecordType.DATA_SHARE
    ]


def trace_user(chain: Chain, user: int) -> TraceReport:
    """Every share the user gave or received and every recorded model-update round."""
    _require_valid(chain)
    report = TraceReport(user, [], [], [])
    for b in chain.blocks:
        if b.record_type == RecordType.DATA_SHARE:
            rec = ShareRecord.from_payload(b.payload)
            if rec.source_user == user:
                report.shares_out.append(rec)
                report.share_blocks_out.append(b.index)
            if rec.receiver_user == user:
                report.shares_in.append(rec)
                report.share_blocks_in.append(b.index)
        elif b.record_type == RecordType.MODEL_UPDATE:
            report.model_update_rounds.append(ModelUpdateRecord.from_payload(b.payload).round)
    return report


def detect_rating_anomaly(chain: Chain, z_threshold: float) -> list[tuple[int, int]]:
    """(source, item) pairs whose shared rating is more than ``z_threshold``
    population standard deviations from that item's mean shared rating.

    Items with fewer than three shared ratings or zero spread are skipped.
    """
    _require_valid(chain)
    by_item: dict[int, list[tuple[int, float]]] = {}
    for _, rec in share_records(chain):
        for j, r in rec.items:
            by_item.setdefault(j, []).append((rec.source_user, r))
    flagged = set()
    for j, entries in by_item.items():
        if len(entries) < 3:
            continue
        vals = np.array([r for _, r in entries])
        sd = float(vals.std())
        if sd == 0.0:
            continue
        mean = float(vals.mean())
        for src, r in entries:
            if abs(r - mean) / sd > z_threshold:
                flagged.add((src, j))
    return sorted(flagged)


def payload_digests_unique(chain: Chain) -> bool:
    """No two distinct payloads share a digest."""
    seen: dict[str, bytes] = {}
    for b in chain.blocks:
        other = seen.setdefault(b.payload_digest, b.payload)
        if other != b.payload:
            return False
    return True


def expected_attempts(difficulty: int) -> float:
    return math.pow(16, difficulty)
