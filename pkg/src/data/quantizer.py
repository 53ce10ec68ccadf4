"""
Key Quantizer Module (rerank metadata)

Per key, per subspace:
- centroid id (codebook.assign)
- 4-bit direction code per coordinate: 1-bit sign + 3-bit magnitude level
- scaling factor w = ||k|| * r_b / alpha_b, alpha_b = <v_b, u_b>

Magnitude levels come from the rotation-induced prior u_j^2 ~ Beta(1/2, (m-1)/2):
8 equal-probability bins of |u|, level = conditional mean of |u| inside the bin.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from scipy import special, stats

from ..utils.config import RetrievalConfig
from .codebook import AnalyticCodebook
from .transform import sanitize_keys, transform_rows

logger = logging.getLogger(__name__)

LEVEL_COUNT = 8
ALPHA_FLOOR = 1e-3
SIGN_BIT = 0x8
MAG_MASK = 0x7


# ---------------------------
# level design
# ---------------------------
def _sqrt_partial_mean(a: float, b: float, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """E[sqrt(T) 1{lo <= T < hi}] for T ~ Beta(a, b), in closed form."""
    scale = np.exp(special.betaln(a + 0.5, b) - special.betaln(a, b))
    upper = stats.beta(a + 0.5, b)
    return scale * (upper.cdf(hi) - upper.cdf(lo))


@dataclass(frozen=True)
class MagnitudeLevels:
    values: np.ndarray  # (8,), strictly increasing
    subspace_dim: int
    dim: int

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.values[1:] + self.values[:-1])

    def signed_table(self) -> np.ndarray:
        """16-entry nibble → signed magnitude lookup"""
        mags = np.concatenate([self.values, self.values])
        signs = np.where(np.arange(16) & SIGN_BIT, -1.0, 1.0)
        return mags * signs


@lru_cache(maxsize=16)
def design_levels(m: int, dim: int) -> MagnitudeLevels:
    """
    3-bit magnitude levels for coordinates of a unit direction in an m-dim subspace.

    Args:
        m: subspace dimension (>= 2)
        dim: full (padded) dimension; levels depend only on m, dim is recorded

    Returns:
        MagnitudeLevels with 8 conditional means over equal-probability bins of |u|
    """
    if m < 2:
        raise ValueError(f"design_levels requires m >= 2, got {m}")
    a, b = 0.5, (m - 1) / 2.0
    edges = stats.beta(a, b).ppf(np.linspace(0.0, 1.0, LEVEL_COUNT + 1))
    edges[0], edges[-1] = 0.0, 1.0
    levels = _sqrt_partial_mean(a, b, edges[:-1], edges[1:]) * LEVEL_COUNT
    levels = levels.astype(np.float64)
    levels.setflags(write=False)
    return MagnitudeLevels(values=levels, subspace_dim=int(m), dim=int(dim))


@lru_cache(maxsize=16)
def design_radius_levels(m: int, dim: int, count: int, iterations: int = 30) -> np.ndarray:
    """
    Lloyd-Max levels for r = sqrt(z), z ~ Beta(m/2, (D-m)/2).
    Only used when radius_centroid_count > 1.
    """
    if count < 2:
        return np.array([], dtype=np.float64)
    if dim <= m:
        return np.ones(count, dtype=np.float64)
    a, b = m / 2.0, (dim - m) / 2.0
    prior = stats.beta(a, b)
    z_edges = prior.ppf(np.linspace(0.0, 1.0, count + 1))
    z_edges[0], z_edges[-1] = 0.0, 1.0
    levels = np.sqrt(np.clip(0.5 * (z_edges[:-1] + z_edges[1:]), 0.0, 1.0))
    for _ in range(int(iterations)):
        r_edges = np.concatenate([[0.0], 0.5 * (levels[1:] + levels[:-1]), [1.0]])
        lo, hi = r_edges[:-1] ** 2, r_edges[1:] ** 2
        mass = prior.cdf(hi) - prior.cdf(lo)
        mean = _sqrt_partial_mean(a, b, lo, hi)
        levels = np.where(mass > 1e-15, mean / np.maximum(mass, 1e-300), levels)
    return np.sort(levels)


# ---------------------------
# nibble codes
# ---------------------------
def pack_nibbles(nibbles: np.ndarray) -> np.ndarray:
    """(..., m) values in [0,16) → (..., m/2) bytes; even coordinate in the low nibble."""
    nib = np.asarray(nibbles, dtype=np.uint8)
    if nib.shape[-1] % 2:
        raise ValueError("nibble count must be even")
    return (nib[..., 0::2] & 0x0F) | ((nib[..., 1::2] & 0x0F) << 4)


def unpack_nibbles(packed: np.ndarray) -> np.ndarray:
    packed = np.asarray(packed, dtype=np.uint8)
    out = np.empty(packed.shape[:-1] + (packed.shape[-1] * 2,), dtype=np.uint8)
    out[..., 0::2] = packed & 0x0F
    out[..., 1::2] = packed >> 4
    return out


@dataclass(frozen=True)
class DirectionCode:
    packed: np.ndarray  # (m/2,) uint8

    @property
    def nibbles(self) -> np.ndarray:
        return unpack_nibbles(self.packed)

    @property
    def signs(self) -> np.ndarray:
        return np.where(self.nibbles & SIGN_BIT, -1.0, 1.0)

    @property
    def magnitude_index(self) -> np.ndarray:
        return self.nibbles & MAG_MASK


def quantize_nibbles(dirs: np.ndarray, levels: MagnitudeLevels) -> np.ndarray:
    """(..., m) directions → (..., m) nibbles (midpoint rule on |u|)."""
    dirs = np.asarray(dirs)
    idx = np.searchsorted(levels.midpoints, np.abs(dirs), side="left").astype(np.uint8)
    sign = (dirs < 0).astype(np.uint8) << 3
    return sign | idx


def dequantize_nibbles(nibbles: np.ndarray, levels: MagnitudeLevels) -> Tuple[np.ndarray, np.ndarray]:
    """
    Returns:
        (unit reconstructed directions (..., m), degenerate mask (...))
    """
    raw = levels.signed_table()[np.asarray(nibbles, dtype=np.intp)]
    norms = np.linalg.norm(raw, axis=-1)
    degenerate = norms == 0.0
    v = raw / np.where(degenerate, 1.0, norms)[..., None]
    if degenerate.any():
        v[degenerate] = 0.0
        v[degenerate, 0] = 1.0
    return v, degenerate


def encode(u_b: np.ndarray, levels: MagnitudeLevels) -> DirectionCode:
    return DirectionCode(packed=pack_nibbles(quantize_nibbles(np.asarray(u_b), levels)))


def dequantize(code: DirectionCode, levels: MagnitudeLevels) -> np.ndarray:
    v, degenerate = dequantize_nibbles(code.nibbles, levels)
    if degenerate:
        logger.warning("Degenerate direction code (all-zero magnitudes); using e1")
    return v


def alpha(u_b: np.ndarray, v_b: np.ndarray) -> np.ndarray:
    """<v_b, u_b>, floored at ALPHA_FLOOR; works on (..., m) batches."""
    a = np.sum(np.asarray(u_b, dtype=np.float64) * np.asarray(v_b, dtype=np.float64), axis=-1)
    a = np.maximum(a, ALPHA_FLOOR)
    return float(a) if np.ndim(a) == 0 else a


def scaling_factor(key_norm, r_b, alpha_b):
    """w = ||k|| * r_b / alpha_b; exactly 0 where r_b == 0."""
    r = np.asarray(r_b, dtype=np.float64)
    w = np.where(r == 0.0, 0.0, np.asarray(key_norm, dtype=np.float64) * r / np.asarray(alpha_b, dtype=np.float64))
    return float(w) if np.ndim(w) == 0 else w


# ---------------------------
# metadata
# ---------------------------
@dataclass(frozen=True)
class KeyMetadata:
    """Hot summary of one retrieval-zone key."""
    centroid_ids: np.ndarray          # (B,) uint16
    codes: np.ndarray                 # (B, m/2) uint8
    weights: np.ndarray               # (B,) float32 | float16
    directions: Optional[np.ndarray] = None    # exact-code mode only, (B, m)
    radius_codes: Optional[np.ndarray] = None  # K_r > 1 only, (B,) uint8


@dataclass
class MetadataBatch:
    centroid_ids: np.ndarray          # (n, B)
    codes: np.ndarray                 # (n, B, m/2)
    weights: np.ndarray               # (n, B)
    directions: Optional[np.ndarray] = None
    radius_codes: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return int(self.centroid_ids.shape[0])

    def row(self, i: int) -> KeyMetadata:
        return KeyMetadata(
            centroid_ids=self.centroid_ids[i],
            codes=self.codes[i],
            weights=self.weights[i],
            directions=None if self.directions is None else self.directions[i],
            radius_codes=None if self.radius_codes is None else self.radius_codes[i],
        )


def build_metadata_batch(
    keys: np.ndarray,
    cfg: RetrievalConfig,
    levels: MagnitudeLevels,
    codebook=None,
) -> MetadataBatch:
    """
    normalize → rotate → split_polar → {assign, encode, scaling_factor} for a block of keys.

    Args:
        keys: (n, D) raw keys (zero rows must be sanitized beforehand)
        cfg: retrieval config
        levels: magnitude levels for (padded D, m)
        codebook: centroid backend (default: analytic sign patterns)

    Returns:
        MetadataBatch with n rows
    """
    keys = np.asarray(keys, dtype=np.float32)
    B, m = cfg.subspace_count, cfg.subspace_dim
    if keys.shape[0] == 0:
        return MetadataBatch(
            centroid_ids=np.zeros((0, B), dtype=np.uint16),
            codes=np.zeros((0, B, m // 2), dtype=np.uint8),
            weights=np.zeros((0, B), dtype=cfg.weight_dtype),
            directions=np.zeros((0, B, m), dtype=np.float32) if cfg.exact_codes else None,
            radius_codes=np.zeros((0, B), dtype=np.uint8) if cfg.radius_centroid_count > 1 else None,
        )

    codebook = codebook or AnalyticCodebook.from_config(cfg)
    norms, radii, dirs = transform_rows(keys, cfg)
    ids = codebook.assign_batch(dirs)

    nibbles = quantize_nibbles(dirs, levels)
    codes = pack_nibbles(nibbles)

    if cfg.exact_codes:
        a = np.ones(radii.shape, dtype=np.float64)
    elif cfg.alpha_correction:
        v, _ = dequantize_nibbles(nibbles, levels)
        a = alpha(dirs, v)
    else:
        a = np.ones(radii.shape, dtype=np.float64)

    radius_codes = None
    r_eff = radii.astype(np.float64)
    if cfg.radius_centroid_count > 1:
        r_levels = design_radius_levels(m, cfg.padded_dim, cfg.radius_centroid_count)
        r_mid = 0.5 * (r_levels[1:] + r_levels[:-1])
        radius_codes = np.searchsorted(r_mid, r_eff).astype(np.uint8)
        r_eff = np.where(r_eff == 0.0, 0.0, r_levels[radius_codes])

    w = scaling_factor(norms[:, None], r_eff, a).astype(cfg.weight_dtype)
    return MetadataBatch(
        centroid_ids=ids,
        codes=codes,
        weights=w,
        directions=dirs.astype(np.float32) if cfg.exact_codes else None,
        radius_codes=radius_codes,
    )


def build_metadata(key: np.ndarray, cfg: RetrievalConfig, levels: MagnitudeLevels, codebook=None) -> KeyMetadata:
    """Single-key form; a zero key raises DegenerateInputError from normalize."""
    return build_metadata_batch(np.asarray(key, dtype=np.float32)[None, :], cfg, levels, codebook).row(0)


def levels_for(cfg: RetrievalConfig) -> MagnitudeLevels:
    return design_levels(cfg.subspace_dim, cfg.padded_dim)


def ingest_keys(keys: np.ndarray) -> np.ndarray:
    """Zero-key substitution at the ingestion layer."""
    return sanitize_keys(keys)
