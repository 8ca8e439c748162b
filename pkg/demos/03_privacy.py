"""Clipping and Laplace noise on uploaded item gradients."""
# %%
import numpy as np

from liberate.ldp import PrivacyParams, laplace_sample, perturb_gradient
from liberate.mf import ClientGradient

rng = np.random.default_rng(0)

# %%
for eps in (1, 3, 10):
    pp = PrivacyParams(epsilon=eps, clip_bound=1.0)
    x = laplace_sample(pp.scale, rng, size=50_000)
    print(f"eps={eps:>2}: scale {pp.scale:.3f}, empirical mean |noise| {np.abs(x).mean():.3f}, "
          f"budget after 80 rounds {pp.total_epsilon(80):g}")

# %% [markdown]
# Each coordinate is clipped to [-C, C] first: any two clipped gradients then
# differ by at most 2C per coordinate, which is what the noise scale assumes.

# %%
g = ClientGradient(np.array([3, 7]), np.array([[2.5, -0.1], [-4.0, 0.3]]))
out = perturb_gradient(g, PrivacyParams(epsilon=10), rng)
print("items unchanged:", out.items.tolist())
print("before:", g.entries.round(3).tolist())
print("after: ", out.entries.round(3).tolist())
