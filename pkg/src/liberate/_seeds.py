"""Seed fan-out.

Every random component draws from its own stream derived from one master
seed, so a run is reproducible from that single number.
"""

import hashlib

import numpy as np


def derive_seed(master: int, name: str) -> int:
    """64-bit seed = leading 8 bytes of SHA-256(decimal(master) || 0x1F || name)."""
    digest = hashlib.sha256(f"{int(master)}\x1f{name}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _label(label: str) -> int:
    return int.from_bytes(hashlib.sha256(label.encode()).digest()[:4], "big")


def substream(seed: int, label: str, *key: int) -> np.random.Generator:
    """Independent generator for ``(label, *key)`` under ``seed``.

    Streams for different keys do not depend on the order in which they are
    requested, which keeps per-client sampling deterministic.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(_label(label), *(int(k) for k in key)))
    return np.random.Generator(np.random.PCG64(ss))
