"""
Analytic Direction Codebook

Omega = {±1/sqrt(m)}^m, 2^m sign-pattern centroids per subspace.
CentroidId bit j = sign of coordinate j (1 = positive). 저장되는 codebook 은 없고
assign / score / probe 모두 closed form 으로 계산합니다.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..utils.config import RetrievalConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProbeList:
    """(centroid id, <q_b, omega>) pairs, descending by score."""
    ids: np.ndarray
    scores: np.ndarray
    evaluated: int = 0  # centroids touched by the search

    def __len__(self) -> int:
        return int(self.ids.shape[0])


def _bit_weights(m: int) -> np.ndarray:
    return (1 << np.arange(m)).astype(np.int64)


def sign_matrix(ids: np.ndarray, m: int) -> np.ndarray:
    """(..., m) matrix of ±1 for the given centroid ids."""
    ids = np.asarray(ids, dtype=np.int64)
    bits = (ids[..., None] >> np.arange(m)) & 1
    return (2 * bits - 1).astype(np.float64)


def decode(centroid_id: int, m: int) -> np.ndarray:
    return (sign_matrix(np.asarray(centroid_id), m) / math.sqrt(m)).astype(np.float32)


def encode(omega: np.ndarray) -> int:
    omega = np.asarray(omega)
    return int(np.dot((omega > 0).astype(np.int64), _bit_weights(omega.shape[-1])))


def assign(u_b: np.ndarray) -> int:
    """argmax_omega <u_b, omega> == sign pattern of u_b (zero → positive)."""
    u_b = np.asarray(u_b)
    return int(np.dot((u_b >= 0).astype(np.int64), _bit_weights(u_b.shape[-1])))


def assign_rows(dirs: np.ndarray) -> np.ndarray:
    """(..., m) directions → (...) uint16 centroid ids."""
    dirs = np.asarray(dirs)
    m = dirs.shape[-1]
    return ((dirs >= 0).astype(np.uint32) @ _bit_weights(m).astype(np.uint32)).astype(np.uint16)


def centroid_scores(q_b: np.ndarray, ids: np.ndarray) -> np.ndarray:
    q = np.asarray(q_b, dtype=np.float64)
    m = q.shape[-1]
    return sign_matrix(ids, m) @ q / math.sqrt(m)


def centroid_score(q_b: np.ndarray, centroid_id: int) -> float:
    return float(centroid_scores(q_b, np.asarray([centroid_id]))[0])


def top_probes(q_b: np.ndarray, count: int) -> ProbeList:
    """
    Best-first sign-flip search from sign(q_b).

    Flipping coordinate j of the base pattern costs 2|q_j|/sqrt(m). Subsets of flips are
    enumerated in non-decreasing total cost (add-next / replace-last successor rule), so
    only O(count) patterns are ever touched. Ties order by ascending centroid id.
    """
    q = np.asarray(q_b, dtype=np.float64)
    m = q.shape[-1]
    total = 1 << m
    count = int(count)
    if not 1 <= count <= total:
        raise ValueError(f"probe count must be in [1, {total}], got {count}")

    base = assign(q)
    order = np.argsort(np.abs(q), kind="stable")
    costs = 2.0 * np.abs(q[order]) / math.sqrt(m)
    bits = [1 << int(j) for j in order]

    heap: List[Tuple[float, int, Tuple[int, ...]]] = [(0.0, base, ())]
    popped: List[Tuple[float, int]] = []
    threshold: Optional[float] = None
    tol = 1e-12 * (1.0 + float(np.abs(q).sum()))

    while heap:
        if threshold is not None and heap[0][0] > threshold + tol:
            break
        cost, cid, pos = heapq.heappop(heap)
        popped.append((cost, cid))
        if threshold is None and len(popped) >= count:
            threshold = cost

        if not pos:
            if m > 0:
                heapq.heappush(heap, (costs[0], cid ^ bits[0], (0,)))
            continue
        last = pos[-1]
        if last + 1 < m:
            nxt = last + 1
            heapq.heappush(heap, (cost + costs[nxt], cid ^ bits[nxt], pos + (nxt,)))
            heapq.heappush(
                heap,
                (cost - costs[last] + costs[nxt], cid ^ bits[last] ^ bits[nxt], pos[:-1] + (nxt,)),
            )

    ids = np.fromiter((c for _, c in popped), dtype=np.int64, count=len(popped))
    scores = centroid_scores(q, ids)
    keep = np.lexsort((ids, -scores))[:count]
    return ProbeList(ids=ids[keep], scores=scores[keep], evaluated=len(popped))


def exhaustive_probes(q_b: np.ndarray, count: int) -> ProbeList:
    """Reference ordering over all 2^m centroids (same tie rule)."""
    q = np.asarray(q_b, dtype=np.float64)
    ids = np.arange(1 << q.shape[-1], dtype=np.int64)
    scores = centroid_scores(q, ids)
    keep = np.lexsort((ids, -scores))[:count]
    return ProbeList(ids=ids[keep], scores=scores[keep], evaluated=int(ids.shape[0]))


# ---------------------------
# tiers
# ---------------------------
def tier_of(rank: Optional[int], probe_count: int, cfg: RetrievalConfig) -> int:
    """
    Probe rank → collision bonus. The probe list (one subspace, or the pooled list
    over all subspaces) is cut into len(tier_bonuses) equal chunks, the last chunk
    absorbing the remainder; unprobed → 0.
    """
    if rank is None or rank < 0 or rank >= probe_count:
        return 0
    tiers = cfg.tier_bonuses
    chunk = max(1, probe_count // len(tiers))
    return int(tiers[min(rank // chunk, len(tiers) - 1)])


def tier_bonus_table(probe_count: int, cfg: RetrievalConfig) -> np.ndarray:
    """bonus for every probe rank 0..probe_count-1"""
    ranks = np.arange(int(probe_count))
    tiers = np.asarray(cfg.tier_bonuses, dtype=np.int64)
    chunk = max(1, int(probe_count) // len(tiers))
    return tiers[np.minimum(ranks // chunk, len(tiers) - 1)]


def pooled_probe_order(probe_lists: Sequence[ProbeList], radii: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Subspace 별 probe list 를 하나의 list 로 합쳐 r_b * <u_b, omega> 내림차순으로 정렬

    Args:
        probe_lists: one ProbeList per subspace (each already best-first)
        radii: (B,) query radii; None weighs every subspace equally

    Returns:
        (subspace index, centroid id) per pooled rank; ties keep subspace order, then in-list rank
    """
    B = len(probe_lists)
    radii = np.ones(B) if radii is None else np.asarray(radii, dtype=np.float64)
    if radii.shape != (B,):
        raise ValueError(f"expected {B} radii, got shape {radii.shape}")
    sub = np.concatenate([np.full(len(p), b, dtype=np.int64) for b, p in enumerate(probe_lists)])
    rank = np.concatenate([np.arange(len(p), dtype=np.int64) for p in probe_lists])
    ids = np.concatenate([p.ids.astype(np.int64) for p in probe_lists])
    weighted = np.concatenate([radii[b] * p.scores.astype(np.float64) for b, p in enumerate(probe_lists)])
    order = np.lexsort((rank, sub, -weighted))
    return sub[order], ids[order]


# ---------------------------
# codebook backend interface (analytic)
# ---------------------------
@dataclass
class AnalyticCodebook:
    """Data-independent sign-pattern codebook; shared by keys and queries."""

    subspace_count: int
    subspace_dim: int
    name: str = field(default="analytic")

    @classmethod
    def from_config(cls, cfg: RetrievalConfig) -> "AnalyticCodebook":
        return cls(subspace_count=cfg.subspace_count, subspace_dim=cfg.subspace_dim)

    @property
    def size(self) -> int:
        return 1 << self.subspace_dim

    def assign_batch(self, dirs: np.ndarray) -> np.ndarray:
        """(n, B, m) → (n, B) uint16"""
        return assign_rows(dirs)

    def probe(self, q_dirs: np.ndarray, count: int) -> List[ProbeList]:
        """(B, m) query directions → one ProbeList per subspace"""
        return [top_probes(q_dirs[b], count) for b in range(q_dirs.shape[0])]
