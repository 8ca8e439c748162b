"""The factorization gradients, checked against finite differences."""
# %%
import numpy as np

from liberate.dataset import from_triples
from liberate.mf import grad_items, grad_user, objective

rng = np.random.default_rng(1)
store = from_triples([0, 0, 1, 1, 2], [0, 2, 1, 2, 0], [4.0, 3.0, 5.0, 1.0, 2.0])
l, lam = 3, 0.1
U, V = rng.normal(size=(store.m, l)), rng.normal(size=(store.n, l))

# %% [markdown]
# Gradients are of the *unnormalized* loss (sum of squared errors plus
# lambda times the squared factor norms).

# %%
def loss():
    return objective(store, U, V, lam, normalized=False)


h = 1e-6
i, k = 1, 2
U[i, k] += h
up = loss()
U[i, k] -= 2 * h
down = loss()
U[i, k] += h
print("user grad   analytic", grad_user(store.shard(i), U[i], V, lam)[k], " numeric", (up - down) / (2 * h))

# %% [markdown]
# In server mode a client's item gradient carries only the data term; the
# server adds 2*lambda*V once.  Summed over users that is the full gradient.

# %%
G = np.zeros_like(V)
for u, shard in enumerate(store.by_user):
    g = grad_items(shard, U[u], V, lam, "server")
    G[g.items] += g.entries
G += 2 * lam * V
j = 2
V[j, 0] += h
up = loss()
V[j, 0] -= 2 * h
down = loss()
V[j, 0] += h
print("item grad   analytic", G[j, 0], " numeric", (up - down) / (2 * h))
