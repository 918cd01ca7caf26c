"""Small numeric helpers shared across modules."""

from __future__ import annotations

import numpy as np


def categorical(rng: np.random.Generator, probs: np.ndarray) -> int:
    """Draw an index from a probability vector with a single uniform variate."""
    c = np.cumsum(probs)
    u = rng.random() * c[-1]
    return min(int(np.searchsorted(c, u, side="right")), len(probs) - 1)


def categorical_from_log(rng: np.random.Generator, log_weights: np.ndarray) -> int:
    """Draw an index from unnormalized log weights (max-subtraction trick).

    Exact -inf entries are legal zero weights.
    """
    w = np.asarray(log_weights, dtype=float)
    m = np.max(w)
    if not np.isfinite(m):
        raise ValueError("all categorical log weights are -inf")
    with np.errstate(under="ignore"):
        p = np.exp(w - m)
    return categorical(rng, p)


def draw_dirichlet(rng: np.random.Generator, pseudocounts: np.ndarray) -> np.ndarray:
    """Dirichlet draw via gamma normalization.

    Guards against total underflow for very small concentrations by
    falling back to the normalized pseudo-counts.
    """
    g = rng.standard_gamma(pseudocounts)
    s = g.sum()
    if not np.isfinite(s) or s <= 0.0:
        g = np.asarray(pseudocounts, dtype=float)
        s = g.sum()
    return g / s


def normalized_log_weights(log_weights: np.ndarray) -> np.ndarray:
    """Probabilities from unnormalized log weights."""
    w = np.asarray(log_weights, dtype=float)
    m = np.max(w)
    with np.errstate(under="ignore"):
        p = np.exp(w - m)
    return p / p.sum()
