"""Generalized Gini social welfare and its weight vectors."""

from __future__ import annotations

import numpy as np

WEIGHT_TOL = 1e-12


class LengthMismatch(ValueError):
    pass


class GgfWeights(np.ndarray):
    """Non-increasing, nonnegative weights summing to one.

    A thin ndarray subclass so weights can be used anywhere a vector can.
    Construction validates and rejects instead of re-sorting.
    """

    def __new__(cls, weights):
        w = np.asarray(weights, dtype=float).reshape(-1)
        if w.size == 0:
            raise ValueError("weights must be non-empty")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if np.any(np.diff(w) > WEIGHT_TOL):
            raise ValueError(f"weights must be non-increasing: {w}")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        obj = w.view(cls)
        obj.setflags(write=False)
        return obj


def ggf(values, weights) -> float:
    """Weighted sum of ``values`` sorted ascending against ``weights``.

    Ties do not matter: the sorted multiset is the same whichever tied entry
    comes first.
    """
    v = np.asarray(values, dtype=float).reshape(-1)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if v.size != w.size:
        raise LengthMismatch(f"{v.size} values vs {w.size} weights")
    return float(np.dot(w, np.sort(v)))


def ggf_gradient(values, weights) -> np.ndarray:
    """A (super)gradient of ggf at ``values``: weights mapped back to positions."""
    v = np.asarray(values, dtype=float).reshape(-1)
    w = np.asarray(weights, dtype=float).reshape(-1)
    g = np.empty_like(w)
    g[np.argsort(v, kind="stable")] = w
    return g


def make_exponential_weights(n: int, factor: float = 2.0) -> GgfWeights:
    if n < 1:
        raise ValueError("n must be >= 1")
    if factor <= 1:
        raise ValueError("factor must exceed 1")
    raw = float(factor) ** -np.arange(1, n + 1, dtype=float)
    return GgfWeights(raw / raw.sum())


def utilitarian_weights(n: int) -> GgfWeights:
    if n < 1:
        raise ValueError("n must be >= 1")
    return GgfWeights(np.full(n, 1.0 / n))


def random_weights(n: int, rng) -> GgfWeights:
    """A random non-increasing weight vector (sorted Dirichlet draw)."""
    raw = np.sort(rng.dirichlet(np.ones(n)))[::-1]
    raw = raw / raw.sum()
    # renormalising can break ties by an ulp; re-sort defensively
    return GgfWeights(np.sort(raw)[::-1])
