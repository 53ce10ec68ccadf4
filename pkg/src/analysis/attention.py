"""
Attention Oracles & Metrics

- full_attention / approx_attention: softmax(q.k * scale) weighted value sum (float64, max-subtracted)
- brute_topk: exact inner-product top-k, recency tie-break
- recall_at_k, relative_l2_error
"""

from __future__ import annotations

import math
from typing import Iterable, Optional

import numpy as np


def _scale(dim: int, scale: Optional[float]) -> float:
    return float(scale) if scale is not None else 1.0 / math.sqrt(dim)


def softmax_weights(q: np.ndarray, keys: np.ndarray, scale: Optional[float] = None) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    keys = np.asarray(keys, dtype=np.float64)
    logits = keys @ q * _scale(q.shape[-1], scale)
    logits -= logits.max()
    w = np.exp(logits)
    return w / w.sum()


def full_attention(q: np.ndarray, keys: np.ndarray, values: np.ndarray, scale: Optional[float] = None) -> np.ndarray:
    keys = np.asarray(keys)
    if keys.shape[0] == 0:
        raise ValueError("full_attention requires at least one key")
    return softmax_weights(q, keys, scale) @ np.asarray(values, dtype=np.float64)


def approx_attention(
    q: np.ndarray,
    candidate_indices,
    keys: np.ndarray,
    values: np.ndarray,
    hot_keys: Optional[np.ndarray] = None,
    hot_values: Optional[np.ndarray] = None,
    scale: Optional[float] = None,
) -> np.ndarray:
    """
    Softmax restricted to keys[candidate_indices] (plus the hot tokens, when given).

    keys/values may already be the gathered rows; pass candidate_indices=None then.
    """
    keys = np.asarray(keys)
    values = np.asarray(values)
    if candidate_indices is not None:
        idx = np.asarray(candidate_indices, dtype=np.int64)
        keys, values = keys[idx], values[idx]
    if hot_keys is not None and len(hot_keys):
        keys = np.concatenate([np.asarray(hot_keys, dtype=keys.dtype), keys])
        values = np.concatenate([np.asarray(hot_values, dtype=values.dtype), values])
    if keys.shape[0] == 0:
        raise ValueError("approx_attention requires a non-empty candidate set")
    return full_attention(q, keys, values, scale)


def brute_topk(q: np.ndarray, keys: np.ndarray, k: int) -> np.ndarray:
    """Exact top-k by <k_i, q> in float64; equal scores → larger index first."""
    keys = np.asarray(keys, dtype=np.float64)
    n = keys.shape[0]
    if k > n:
        raise ValueError(f"k={k} exceeds key count {n}")
    scores = keys @ np.asarray(q, dtype=np.float64)
    order = np.lexsort((-np.arange(n), -scores))
    return order[:k].astype(np.int64)


def recall_at_k(predicted: Iterable[int], oracle: Iterable[int]) -> float:
    oracle = np.unique(np.asarray(list(oracle) if not isinstance(oracle, np.ndarray) else oracle))
    if oracle.size == 0:
        return 1.0
    predicted = np.asarray(list(predicted) if not isinstance(predicted, np.ndarray) else predicted)
    hits = np.intersect1d(predicted, oracle).size
    return float(hits) / float(oracle.size)


def relative_l2_error(approx: np.ndarray, exact: np.ndarray) -> float:
    exact = np.asarray(exact, dtype=np.float64)
    denom = float(np.linalg.norm(exact))
    diff = float(np.linalg.norm(np.asarray(approx, dtype=np.float64) - exact))
    return diff / denom if denom > 0 else diff
