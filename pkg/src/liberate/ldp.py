"""Local differential privacy for uploaded item gradients.

Each coordinate is clipped to [-C, C], which bounds the per-coordinate
sensitivity by 2C, and then receives independent Laplace(0, 2C / epsilon)
noise before it leaves the client.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from liberate.mf import ClientGradient

_2_52 = float(2**52)


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float = 10.0
    clip_bound: float = 1.0
    enabled: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.enabled:
            if not self.epsilon > 0:
                raise ValueError("epsilon must be > 0")
            if not self.clip_bound > 0:
                raise ValueError("clip_bound must be > 0")
            if not math.isfinite(self.scale) or self.scale <= 0:
                raise ValueError(f"noise scale 2C/epsilon = {self.scale} is not finite and positive")

    @property
    def sensitivity(self) -> float:
        return 2.0 * self.clip_bound

    @property
    def scale(self) -> float:
        return self.sensitivity / self.epsilon

    def total_epsilon(self, rounds: int) -> float:
        """Sequential-composition budget after ``rounds`` uploads (reported, not enforced)."""
        return rounds * self.epsilon if self.enabled else math.inf


def clip(x, C: float):
    if not C > 0:
        raise ValueError(f"clip bound must be > 0, got {C}")
    if np.ndim(x) == 0:
        return min(max(float(x), -C), C)
    return np.clip(x, -C, C)


def uniform_open(rng: np.random.Generator, size=None):
    """Uniform draws on the open interval (0, 1), symmetric about 1/2.

    52 random bits keep (k + 0.5) / 2**52 exactly representable at both ends.
    """
    k = rng.integers(0, 2**52, size=size, dtype=np.int64)
    return (k + 0.5) / _2_52


def laplace_from_uniform(p, scale: float):
    """Laplace(0, scale) quantile function evaluated at p in (0, 1)."""
    p = np.asarray(p, dtype=np.float64)
    d = p - 0.5
    out = -np.sign(d) * scale * np.log1p(-2.0 * np.abs(d))
    return float(out) if out.ndim == 0 else out


def laplace_sample(scale: float, rng: np.random.Generator, size=None):
    """Draw Laplace(0, scale) variates by inverse-CDF sampling."""
    if not scale > 0:
        raise ValueError(f"Laplace scale must be > 0, got {scale}")
    return laplace_from_uniform(uniform_open(rng, size), scale)


def perturb_gradient(g: ClientGradient, pp: PrivacyParams, rng: np.random.Generator) -> ClientGradient:
    """Clip every uploaded coordinate to [-C, C] and add Laplace(0, 2C/eps) noise.

    Disabled privacy returns an unchanged copy (no clipping either).  The
    item set and vector lengths are never altered.  Noise is drawn in
    item-ascending, coordinate-ascending order from ``rng``.
    """
    out = g.copy()
    if not pp.enabled:
        return out
    clipped = np.clip(out.entries, -pp.clip_bound, pp.clip_bound)
    if clipped.size:
        clipped = clipped + laplace_sample(pp.scale, rng, size=clipped.shape)
    out.entries = clipped
    return out
