"""The proof-of-work ledger: mining cost, tampering and reloads."""
# %%
import tempfile
import time
from pathlib import Path

from liberate.cli import pow_bench
from liberate.ledger import Block, Chain, RecordType, load_chain, verify
from liberate.sharing import ShareRecord

# %%
for row in pow_bench([0, 1, 2, 3], 200):
    print(f"difficulty {row['difficulty']}: mean attempts {row['mean_attempts']:8.1f} "
          f"(16^d = {row['expected_attempts']:6.0f}), {row['seconds_per_block'] * 1e3:.2f} ms/block")

# %%
chain = Chain(difficulty=2)
for k in range(1, 6):
    rec = ShareRecord(k, 0, 0, ((k * 10, 4.0),), k)
    chain.append(RecordType.DATA_SHARE, rec.to_payload(), timestamp=k)
print(len(chain), "blocks;", verify(chain))
print("head hash", chain.head.hash)

# %% [markdown]
# Rewrite the rating inside block 3.  The payload no longer matches its
# digest, and verify points at the block.

# %%
b = chain[3]
forged = b.payload.replace(b"4.0", b"5.0")
chain._blocks[3] = Block(**{**b.__dict__, "payload": forged})
print(verify(chain))
chain._blocks[3] = b

# %%
path = Path(tempfile.mkdtemp()) / "ledger.tsv"
chain.save(path)
again = load_chain(path)
print("reloaded:", verify(again), "| bytes identical:", again.dumps() == chain.dumps())
