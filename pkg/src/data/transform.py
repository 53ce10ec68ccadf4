"""
Vector Transform Module

keys/queries 공통 전처리 (순수 함수):
1) l2 normalize
2) seeded SRHT rotation (random sign diagonal + normalized Walsh-Hadamard)
3) contiguous subspace split
4) per-subspace polar decomposition (radius x unit direction)

D가 2의 거듭제곱이 아니면 다음 2의 거듭제곱까지 zero-pad 하고,
padded dim 을 파이프라인 끝까지 유지합니다 (truncate 하면 내적이 보존되지 않음).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np

from ..utils.config import RetrievalConfig, next_power_of_two
from ..utils.errors import DegenerateInputError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TransformedVector:
    original_norm: float
    radii: np.ndarray            # (B,)
    directions: np.ndarray       # (B, m), unit rows
    rotated: Optional[np.ndarray] = None  # (padded D,)

    @property
    def subspace_count(self) -> int:
        return int(self.radii.shape[0])

    @property
    def degenerate(self) -> np.ndarray:
        """zero-radius subspaces (direction replaced by e1)"""
        return self.radii == 0

    def subvectors(self) -> np.ndarray:
        """r_b * u_b, shape (B, m)"""
        return self.radii[:, None] * self.directions


# ---------------------------
# normalize
# ---------------------------
def normalize(x: np.ndarray) -> Tuple[np.ndarray, float]:
    x = np.asarray(x, dtype=np.float32)
    norm = float(np.linalg.norm(x.astype(np.float64)))
    if not np.isfinite(norm) or norm == 0.0:
        raise DegenerateInputError("cannot normalize a zero (or non-finite) vector")
    return (x / np.float32(norm)).astype(np.float32), norm


def normalize_rows(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Batch normalize; any zero row raises DegenerateInputError."""
    x = np.asarray(x, dtype=np.float32)
    norms = np.linalg.norm(x.astype(np.float64), axis=-1)
    bad = ~np.isfinite(norms) | (norms == 0.0)
    if bad.any():
        raise DegenerateInputError(f"{int(bad.sum())} zero (or non-finite) rows cannot be normalized")
    return (x / norms[..., None].astype(np.float32)).astype(np.float32), norms


def sanitize_keys(keys: np.ndarray) -> np.ndarray:
    """
    Ingestion guard: exact-zero keys are replaced by e1.
    Their attention scores stay 0 since the stored full-precision key is untouched.
    """
    keys = np.asarray(keys, dtype=np.float32)
    if keys.ndim != 2 or keys.shape[0] == 0:
        return keys
    zero = ~np.any(keys != 0, axis=1)
    if zero.any():
        logger.warning("Replacing %d zero key(s) with the first basis vector", int(zero.sum()))
        keys = keys.copy()
        keys[zero] = 0.0
        keys[zero, 0] = 1.0
    return keys


# ---------------------------
# rotation
# ---------------------------
@lru_cache(maxsize=32)
def rotation_signs(padded_dim: int, seed: int) -> np.ndarray:
    if padded_dim & (padded_dim - 1):
        raise ValueError(f"padded dim must be a power of two, got {padded_dim}")
    rng = np.random.default_rng(int(seed))
    signs = rng.choice(np.array([-1.0, 1.0], dtype=np.float32), size=padded_dim)
    signs.setflags(write=False)
    return signs


def pad_to_power_of_two(x: np.ndarray) -> np.ndarray:
    d = x.shape[-1]
    p = next_power_of_two(d)
    if p == d:
        return x
    pad = [(0, 0)] * (x.ndim - 1) + [(0, p - d)]
    return np.pad(x, pad)


def fwht(x: np.ndarray) -> np.ndarray:
    """Normalized fast Walsh-Hadamard transform along the last axis (Sylvester ordering)."""
    x = np.array(x, dtype=np.float32, copy=True)
    n = x.shape[-1]
    if n & (n - 1):
        raise ValueError(f"transform dimension must be a power of 2, got {n}")
    lead = x.shape[:-1]
    h = 1
    while h < n:
        y = x.reshape(*lead, n // (2 * h), 2, h)
        a = y[..., 0, :]
        b = y[..., 1, :]
        x = np.stack((a + b, a - b), axis=-2).reshape(*lead, n)
        h *= 2
    return x / np.float32(np.sqrt(n))


def rotate(x: np.ndarray, seed: int) -> np.ndarray:
    """R x with R = H D / sqrt(n); works on a single vector or a batch of rows."""
    x = pad_to_power_of_two(np.asarray(x, dtype=np.float32))
    signs = rotation_signs(x.shape[-1], int(seed))
    return fwht(x * signs)


# ---------------------------
# split + polar
# ---------------------------
def split_polar_rows(x_rot: np.ndarray, subspace_count: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Args:
        x_rot: (..., padded D) rotated unit vectors
        subspace_count: B

    Returns:
        radii (..., B), directions (..., B, m)
    """
    x_rot = np.asarray(x_rot, dtype=np.float32)
    lead = x_rot.shape[:-1]
    d = x_rot.shape[-1]
    if d % subspace_count:
        raise ValueError(f"B={subspace_count} does not divide dim {d}")
    m = d // subspace_count
    sub = x_rot.reshape(*lead, subspace_count, m)
    radii = np.sqrt(np.sum(sub.astype(np.float64) ** 2, axis=-1))
    zero = radii == 0.0
    safe = np.where(zero, 1.0, radii)
    dirs = (sub / safe[..., None]).astype(np.float32)
    if zero.any():
        dirs[zero] = 0.0
        dirs[zero, 0] = 1.0
    return radii.astype(np.float32), dirs


def split_polar(x_rot: np.ndarray, cfg: RetrievalConfig, original_norm: float = 1.0) -> TransformedVector:
    radii, dirs = split_polar_rows(x_rot, cfg.subspace_count)
    return TransformedVector(
        original_norm=float(original_norm),
        radii=radii,
        directions=dirs,
        rotated=np.asarray(x_rot, dtype=np.float32),
    )


def transform_vector(x: np.ndarray, cfg: RetrievalConfig) -> TransformedVector:
    """normalize → rotate → split_polar for one key or query."""
    unit, norm = normalize(x)
    return split_polar(rotate(unit, cfg.rotation_seed), cfg, original_norm=norm)


def transform_rows(x: np.ndarray, cfg: RetrievalConfig) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batch form: returns (norms (n,), radii (n,B), directions (n,B,m))."""
    unit, norms = normalize_rows(x)
    radii, dirs = split_polar_rows(rotate(unit, cfg.rotation_seed), cfg.subspace_count)
    return norms, radii, dirs


def blockwise_ip(k: TransformedVector, q: TransformedVector) -> float:
    """sum_b r^k_b r^q_b <u^k_b, u^q_b>  (test oracle; equals <k_hat, q_hat>)"""
    if k.radii.shape != q.radii.shape:
        raise ValueError("transformed vectors come from different configs")
    sub = np.sum(k.directions.astype(np.float64) * q.directions.astype(np.float64), axis=-1)
    return float(np.sum(k.radii.astype(np.float64) * q.radii.astype(np.float64) * sub))
