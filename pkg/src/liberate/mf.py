"""Matrix-factorization math: prediction, loss, gradients and SGD steps.

Gradients are those of the unnormalized loss

    sum_(i,j) (r_ij - <u_i, v_j>)^2 + lambda * (||U||^2 + ||V||^2)

The 1/M-normalized form is only used for reporting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from liberate.dataset import RatingStore

RegMode = Literal["client", "server"]


class NumericOverflowError(ArithmeticError):
    """A parameter update produced a non-finite value."""

    def __init__(self, message: str, round: int | None = None):
        if round is not None:
            message = f"round {round}: {message}"
        super().__init__(message)
        self.round = round


@dataclass(frozen=True)
class Hyperparams:
    gamma: float = 1e-3
    lam: float = 1e-4
    l: int = 100
    iterations: int = 80
    reg_mode: RegMode = "server"

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if not self.lam >= 0:
            raise ValueError("lambda must be >= 0")
        if self.l < 1:
            raise ValueError("latent dimension l must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.reg_mode not in ("client", "server"):
            raise ValueError(f"reg_mode must be 'client' or 'server', got {self.reg_mode!r}")


@dataclass
class ClientGradient:
    """What one client uploads: item gradients keyed by (ascending) item id.

    ``user_grad`` never leaves the client; it is kept here so the caller can
    apply the local update from the same computation.
    """

    items: np.ndarray
    entries: np.ndarray  # shape (len(items), l)
    user_grad: np.ndarray = field(default=None)

    def as_dict(self) -> dict[int, np.ndarray]:
        return {int(j): row for j, row in zip(self.items, self.entries)}

    def copy(self) -> "ClientGradient":
        ug = None if self.user_grad is None else self.user_grad.copy()
        return ClientGradient(self.items.copy(), self.entries.copy(), ug)


def init_factors(m: int, n: int, l: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """U (m x l) then V (n x l), i.i.d. uniform on [0, 1/sqrt(l)]."""
    hi = 1.0 / math.sqrt(l)
    U = rng.uniform(0.0, hi, size=(m, l))
    V = rng.uniform(0.0, hi, size=(n, l))
    return U, V


def predict(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError(f"length mismatch: {u.shape} vs {v.shape}")
    return float(u @ v)


def predict_all(U, V) -> np.ndarray:
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if U.ndim != 2 or V.ndim != 2 or U.shape[1] != V.shape[1]:
        raise ValueError(f"shape mismatch: U{U.shape} V{V.shape}")
    return U @ V.T


def _check_shapes(store: RatingStore, U, V):
    if U.shape[0] != store.m or V.shape[0] != store.n or U.shape[1] != V.shape[1]:
        raise ValueError(f"factor shapes U{U.shape} V{V.shape} inconsistent with store {store.m}x{store.n}")


def squared_error(store: RatingStore, U, V) -> float:
    total = 0.0
    for i, (items, values) in enumerate(store.by_user):
        if len(items):
            res = values - V[items] @ U[i]
            total += float(res @ res)
    return total


def objective(store: RatingStore, U, V, hp: Hyperparams | float, normalized: bool = True) -> float:
    """Regularised least-squares loss.

    ``normalized=True``: (1/M) * sum of squared errors + lambda * (||U||^2 + ||V||^2).
    ``normalized=False`` drops the 1/M; this is the function whose gradients
    :func:`grad_user` and :func:`grad_items` return.
    """
    lam = hp.lam if isinstance(hp, Hyperparams) else float(hp)
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    _check_shapes(store, U, V)
    M = store.M
    if M == 0:
        raise ValueError("objective undefined for an empty rating store")
    sse = squared_error(store, U, V)
    reg = lam * (float(np.sum(U * U)) + float(np.sum(V * V)))
    return (sse / M if normalized else sse) + reg


def _residuals(items, values, u, V):
    return values - V[items] @ u


def grad_user(shard, u, V, lam: float) -> np.ndarray:
    """-2 * sum_j v_j (r_ij - <u, v_j>) + 2 lambda u over the client's rated items."""
    items, values = shard
    if len(items) == 0:
        raise ValueError("empty shard: client has no ratings")
    res = _residuals(items, values, u, V)
    return -2.0 * (V[items].T @ res) + 2.0 * lam * u


def grad_items(shard, u, V, lam: float, reg_mode: RegMode = "server") -> ClientGradient:
    """Per-item gradient contributions -2 u (r_ij - <u, v_j>).

    In ``client`` mode every entry also carries 2 lambda v_j; in ``server``
    mode the regularizer is left to the aggregator, which adds it once.
    The returned gradient also holds the user gradient from the same
    residuals.
    """
    items, values = shard
    if len(items) == 0:
        raise ValueError("empty shard: client has no ratings")
    res = _residuals(items, values, u, V)
    entries = -2.0 * res[:, None] * u[None, :]
    if reg_mode == "client":
        entries = entries + 2.0 * lam * V[items]
    elif reg_mode != "server":
        raise ValueError(f"unknown reg_mode {reg_mode!r}")
    ug = -2.0 * (V[items].T @ res) + 2.0 * lam * u
    return ClientGradient(np.array(items, dtype=np.int64), entries, ug)


def sgd_step(x, g, gamma: float, round: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if x.shape != g.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {g.shape}")
    if gamma == 0 or not math.isfinite(gamma):
        raise ValueError("gamma must be finite and non-zero")
    with np.errstate(over="ignore", invalid="ignore"):
        out = x - gamma * g
    if not np.all(np.isfinite(out)):
        raise NumericOverflowError("non-finite parameter after SGD step", round)
    return out
