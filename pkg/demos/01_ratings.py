"""Loading ratings and carving out a desk-scale subset.

Run from the repository root:  python demos/01_ratings.py [path/to/ratings.dat]
"""
# %%
import sys
import tempfile
from pathlib import Path

import numpy as np

from liberate.dataset import SplitSpec, load_movielens, split, subset_top, synthesize_ratings, write_movielens

# %% [markdown]
# Without a MovieLens file we write a synthetic corpus in the same
# "user::item::rating::timestamp" format and read it back, so the loader is
# exercised either way.

# %%
if len(sys.argv) > 1:
    path = Path(sys.argv[1])
else:
    path = Path(tempfile.mkdtemp()) / "ratings.dat"
    write_movielens(synthesize_ratings(seed=0), path, "dat")
store = load_movielens(path)
print(f"{store.m} users, {store.n} items, {store.M} ratings ({store.M / (store.m * store.n):.1%} dense)")

# %%
counts = store.user_counts()
print("most active users rate", np.sort(counts)[::-1][:5], "items")

# %% [markdown]
# The top 10 users by activity crossed with the 40 most-rated items form a
# nearly dense block.

# %%
small = subset_top(store, 10, 40)
print(f"subset: {small.m} x {small.n}, {small.M} ratings, density {small.M / 400:.2f}")
print("original user ids kept:", small.user_ids.tolist())

# %%
train, test = split(small, SplitSpec(0.8, seed=0))
print("train per user:", train.user_counts().tolist())
print("test per user: ", test.user_counts().tolist())
assert train.M + test.M == small.M
