"""Tracing a user's shared ratings and flagging outliers on the ledger."""
# %%
import json

from liberate.ledger import Chain, RecordType, detect_rating_anomaly, trace_user
from liberate.sharing import ShareRecord

# %% [markdown]
# Five donors share their rating of item 42 with different receivers.  The
# last one rates it far above everyone else.

# %%
chain = Chain(difficulty=1)
for k, (donor, value) in enumerate([(1, 2.0), (2, 2.0), (3, 1.0), (4, 2.0), (5, 5.0)], start=1):
    rec = ShareRecord(donor, 0 if donor % 2 else 6, 0, ((42, value), (donor + 100, 3.0)), k)
    chain.append(RecordType.DATA_SHARE, rec.to_payload(), timestamp=k)

# %%
print(json.dumps(trace_user(chain, 0).to_dict(), indent=1))

# %%
print("flagged (source, item):", detect_rating_anomaly(chain, z_threshold=1.5))
