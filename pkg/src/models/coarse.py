"""
Coarse Candidate Generation Module (Stage I)

- (rho, beta) schedule by retrieval-zone length
- per-subspace probe lists → tiered bonus lookup table → gather-accumulate collision scores
- bucket_topk: counting histogram over the bounded integer score range,
  threshold bucket ties go to the most recent keys (larger index)
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from ..data.codebook import AnalyticCodebook, pooled_probe_order, tier_bonus_table
from ..data.transform import TransformedVector
from ..utils.config import RetrievalConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CollisionScores:
    values: np.ndarray   # (n,) uint8 | uint16
    max_score: int

    def __len__(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class CandidateSet:
    indices: np.ndarray        # zone-relative, ascending
    threshold_score: int       # lowest admitted score (-1 when empty)
    threshold_ties: int        # keys sharing the threshold score (admitted or not)

    def __len__(self) -> int:
        return int(self.indices.shape[0])


@dataclass
class CoarseCounters:
    queries: int = 0
    id_gathers: int = 0
    probe_evaluations: int = 0
    probe_flops: int = 0

    def reset(self) -> None:
        self.queries = self.id_gathers = self.probe_evaluations = self.probe_flops = 0


# ---------------------------
# schedule
# ---------------------------
def candidate_count(n: int, beta: float) -> int:
    """C = ceil(beta * n), clipped to [0, n]."""
    if n <= 0:
        return 0
    return int(min(n, max(0, math.ceil(beta * n - 1e-9))))


def schedule(n: int, cfg: RetrievalConfig) -> Tuple[float, float]:
    """
    KV 길이에 따른 (rho, beta)

    Args:
        n: retrieval zone length
        cfg: config (schedule, top_k, beta_override)

    Returns:
        (rho, beta) with rho >= beta and ceil(beta n) >= top_k when n >= top_k
    """
    if n < 0:
        raise ValueError(f"retrieval length must be non-negative, got {n}")
    entries = cfg.rho_beta_schedule
    chosen = entries[0]
    for entry in entries:
        if entry[0] <= n:
            chosen = entry
    _, rho, beta = chosen
    if cfg.beta_override is not None:
        beta = float(cfg.beta_override)

    if n > 0:
        if n <= cfg.top_k:
            beta = 1.0
        elif candidate_count(n, beta) < cfg.top_k:
            beta = cfg.top_k / n
    beta = min(1.0, beta)
    rho = min(1.0, max(rho, beta))
    return float(rho), float(beta)


def probe_count(rho: float, centroid_count: int) -> int:
    return int(min(centroid_count, max(1, math.ceil(rho * centroid_count - 1e-9))))


# ---------------------------
# scoring
# ---------------------------
def bonus_lut(
    q_dirs: np.ndarray,
    rho: float,
    cfg: RetrievalConfig,
    codebook=None,
    counters: Optional[CoarseCounters] = None,
    q_radii: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    (B, K) bonus table: lut[b, c] = tier bonus of centroid c in subspace b (0 when unprobed).

    tier_rule "subspace" tiers each probe list on its own; "pooled" tiers the B*T probes
    together, ordered by query radius times centroid score.
    """
    codebook = codebook or AnalyticCodebook.from_config(cfg)
    K = codebook.size
    T = probe_count(rho, K)
    dtype = np.uint8 if cfg.max_score <= 255 else np.uint16
    lut = np.zeros((q_dirs.shape[0], K), dtype=dtype)
    probe_lists = codebook.probe(q_dirs, T)
    if counters is not None:
        for probes in probe_lists:
            counters.probe_evaluations += probes.evaluated
            counters.probe_flops += probes.evaluated * q_dirs.shape[1]
    if cfg.tier_rule == "pooled":
        sub, ids = pooled_probe_order(probe_lists, q_radii)
        lut[sub, ids] = tier_bonus_table(sub.shape[0], cfg).astype(dtype)
        return lut
    bonuses = tier_bonus_table(T, cfg).astype(dtype)
    for b, probes in enumerate(probe_lists):
        lut[b, probes.ids] = bonuses[: len(probes)]
    return lut


def accumulate(
    q: TransformedVector,
    ids: np.ndarray,
    rho: float,
    cfg: RetrievalConfig,
    codebook=None,
    counters: Optional[CoarseCounters] = None,
) -> CollisionScores:
    """
    Collision voting over the retrieval zone.

    Args:
        q: transformed query
        ids: (n, B) centroid id table of the retrieval zone
        rho: probed centroid fraction per subspace
        cfg: config
        codebook: centroid backend (analytic by default)
        counters: optional op counters

    Returns:
        CollisionScores, each a sum of exactly B bonuses
    """
    lut = bonus_lut(q.directions, rho, cfg, codebook, counters, q_radii=q.radii)
    ids = np.asarray(ids)
    n, B = ids.shape if ids.ndim == 2 else (0, cfg.subspace_count)
    scores = np.zeros(n, dtype=lut.dtype)
    step = cfg.chunk_size
    for start in range(0, n, step):
        block = ids[start:start + step]
        acc = scores[start:start + step]
        for b in range(B):
            acc += lut[b, block[:, b]]
    if counters is not None:
        counters.queries += 1
        counters.id_gathers += n * B
    return CollisionScores(values=scores, max_score=cfg.max_score)


def bucket_topk(scores, C: int) -> CandidateSet:
    """
    Top-C by counting histogram (no comparison sort).

    Returns:
        CandidateSet; multiset of selected scores equals a full-sort selection
    """
    values = scores.values if isinstance(scores, CollisionScores) else np.asarray(scores)
    n = int(values.shape[0])
    C = int(C)
    if C < 0 or C > n:
        raise ValueError(f"candidate count {C} outside [0, {n}]")
    if C == 0:
        return CandidateSet(indices=np.zeros(0, dtype=np.int64), threshold_score=-1, threshold_ties=0)

    hist = np.bincount(values.astype(np.int64, copy=False))
    at_or_above = np.cumsum(hist[::-1])[::-1]       # at_or_above[s] = #scores >= s
    threshold = int(np.flatnonzero(at_or_above >= C)[-1])
    above = np.flatnonzero(values > threshold)
    ties = np.flatnonzero(values == threshold)
    need = C - above.shape[0]
    chosen = np.concatenate([above, ties[ties.shape[0] - need:]])
    chosen.sort()
    return CandidateSet(indices=chosen.astype(np.int64), threshold_score=threshold, threshold_ties=int(ties.shape[0]))


# ---------------------------
# generator facade
# ---------------------------
@dataclass
class CandidateGenerator:
    """Stage I: schedule → accumulate → bucket_topk"""

    cfg: RetrievalConfig
    codebook: Optional[object] = None
    counters: CoarseCounters = field(default_factory=CoarseCounters)

    def __post_init__(self):
        if self.codebook is None:
            self.codebook = AnalyticCodebook.from_config(self.cfg)

    def generate(self, q: TransformedVector, ids: np.ndarray) -> Tuple[CandidateSet, CollisionScores, float, float]:
        n = int(ids.shape[0])
        rho, beta = schedule(n, self.cfg)
        scores = accumulate(q, ids, rho, self.cfg, self.codebook, self.counters)
        cands = bucket_topk(scores, candidate_count(n, beta))
        return cands, scores, rho, beta
