"""Federated training with sharing, privacy and the ledger, next to the centralized run."""
# %%
from dataclasses import replace

import numpy as np

from liberate._seeds import derive_seed
from liberate.dataset import SplitSpec, split, subset_top, synthesize_ratings
from liberate.federation import RunConfig, run_centralized, run_training
from liberate.ldp import PrivacyParams
from liberate.metrics import evaluate

store = subset_top(synthesize_ratings(seed=0), 10, 40)
train, test = split(store, SplitSpec(0.8, derive_seed(0, "split")))

# %%
cfg = RunConfig.seeded(0, difficulty=1)
res = run_training(train, test, cfg)
print(f"federated, eps={cfg.privacy.epsilon}: test rmse {res.final.test_rmse:.4f}, ndcg {res.final.test_ndcg:.4f}")
print(f"{len(res.share_records)} share records, {len(res.chain)} blocks")
for r in res.reports[::20]:
    print(f"  round {r.round:>2}: train {r.train_rmse:.4f} test {r.test_rmse:.4f}")

# %% [markdown]
# With privacy off, the federated loop and plain full-batch gradient descent
# take exactly the same steps.

# %%
plain = replace(cfg, privacy=PrivacyParams(enabled=False))
fed = run_training(train, test, plain)
cen = run_centralized(train, test, replace(plain, mode="centralized"))
print("bitwise identical V:", fed.V.tobytes() == cen.V.tobytes())

# %%
for f in (0.0, 0.1, 0.3):
    rm = []
    for s in range(5):
        c = RunConfig.seeded(s, share_plan=replace(cfg.share_plan, fraction=f), difficulty=0)
        out = run_training(train, test, c)
        rm.append(evaluate(out.U, out.V, test)["rmse"])
    print(f"share fraction {f}: mean test rmse over 5 seeds {np.mean(rm):.4f}")
