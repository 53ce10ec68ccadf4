"""
Candidate Rerank Module (Stage II)

estimate(k_i, q) = ||q|| * sum_b w_ib * <v_ib, q~_b>

v_ib 는 4-bit code 를 즉석에서 복원한 unit direction 입니다. full-precision key 는 읽지 않습니다.
Query 마다 (B, m, 16) partial-product table 과 16-entry level^2 table 을 한 번 만들고,
후보의 nibble 로 gather 해서 sub-dot 과 복원 norm 을 동시에 얻습니다.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..data.quantizer import (
    KeyMetadata,
    MagnitudeLevels,
    MetadataBatch,
    build_metadata_batch,
    dequantize_nibbles,
    levels_for,
    unpack_nibbles,
)
from ..data.transform import TransformedVector, transform_rows
from ..utils.config import RetrievalConfig

logger = logging.getLogger(__name__)


def select_topk(scores: np.ndarray, indices: np.ndarray, k: int) -> np.ndarray:
    """
    Positions of the k largest scores, descending; equal scores → larger index first.

    Args:
        scores: (C,) estimates
        indices: (C,) key indices aligned with scores
        k: result size (clipped to C)

    Returns:
        positions into scores/indices
    """
    scores = np.asarray(scores, dtype=np.float64)
    indices = np.asarray(indices)
    C = scores.shape[0]
    k = min(int(k), C)
    if k <= 0:
        return np.zeros(0, dtype=np.int64)
    if k < C:
        part = np.argpartition(-scores, k - 1)[:k]
        kth = scores[part].min()
        above = np.flatnonzero(scores > kth)
        ties = np.flatnonzero(scores == kth)
        ties = ties[np.argsort(-indices[ties], kind="stable")][: k - above.shape[0]]
        pool = np.concatenate([above, ties])
    else:
        pool = np.arange(C)
    order = np.lexsort((-indices[pool], -scores[pool]))
    return pool[order].astype(np.int64)


@dataclass(frozen=True)
class QueryPlan:
    norm: float
    sub: np.ndarray       # (B, m) rotated query subvectors q~_b
    table: np.ndarray     # (B, m, 16) sign*level*q~_bj
    sq_table: np.ndarray  # (16,) level^2


@dataclass(frozen=True)
class RerankResult:
    indices: np.ndarray     # zone-relative, best first
    estimates: np.ndarray   # aligned with indices
    short_pool: bool = False


class CandidateRanker:
    """Stage II reranker over hot metadata."""

    def __init__(self, cfg: RetrievalConfig, levels: Optional[MagnitudeLevels] = None):
        self.cfg = cfg
        self.levels = levels or levels_for(cfg)

    @staticmethod
    def _check_pool(candidates: np.ndarray, n_rows: int) -> None:
        if candidates.size and (candidates.min() < 0 or candidates.max() >= n_rows):
            raise ValueError(f"candidate index outside metadata table of {n_rows} rows")

    def plan(self, q: TransformedVector) -> QueryPlan:
        sub = q.subvectors().astype(np.float64)
        signed = self.levels.signed_table()
        return QueryPlan(
            norm=float(q.original_norm),
            sub=sub,
            table=sub[:, :, None] * signed[None, None, :],
            sq_table=signed ** 2,
        )

    def _sub_dots(self, plan: QueryPlan, codes: np.ndarray, directions: Optional[np.ndarray]) -> np.ndarray:
        """(C, B) values of <v_b, q~_b>"""
        if directions is not None:
            return np.einsum("cbm,bm->cb", directions.astype(np.float64), plan.sub)
        nib = unpack_nibbles(codes).astype(np.intp)          # (C, B, m)
        B, m = plan.sub.shape
        dots = plan.table[np.arange(B)[:, None], np.arange(m)[None, :], nib].sum(axis=-1)
        norms = np.sqrt(plan.sq_table[nib].sum(axis=-1))
        degenerate = norms == 0.0
        if degenerate.any():
            dots = np.where(degenerate, plan.sub[None, :, 0], dots)
            norms = np.where(degenerate, 1.0, norms)
        return dots / norms

    def score_candidates(self, q: TransformedVector, candidates: np.ndarray, metadata) -> np.ndarray:
        """Fused estimates for candidate rows (float64)."""
        candidates = np.asarray(candidates, dtype=np.int64)
        self._check_pool(candidates, len(metadata))
        plan = self.plan(q)
        out = np.empty(candidates.shape[0], dtype=np.float64)
        step = self.cfg.chunk_size
        dirs_all = metadata.directions
        for start in range(0, candidates.shape[0], step):
            idx = candidates[start:start + step]
            dirs = None if dirs_all is None else dirs_all[idx]
            sub = self._sub_dots(plan, metadata.codes[idx], dirs)
            w = metadata.weights[idx].astype(np.float64)
            out[start:start + step] = plan.norm * np.sum(w * sub, axis=1)
        return out

    def estimate_ip(self, q: TransformedVector, meta: KeyMetadata) -> float:
        """Single-key estimate (dequantize → dot); no full-precision key access."""
        if meta.directions is not None:
            v = meta.directions.astype(np.float64)
        else:
            v, _ = dequantize_nibbles(unpack_nibbles(meta.codes), self.levels)
        sub = np.sum(v * q.subvectors().astype(np.float64), axis=-1)
        return float(q.original_norm * np.sum(meta.weights.astype(np.float64) * sub))

    def rerank_topk(self, q: TransformedVector, candidates, metadata, k: int) -> RerankResult:
        """
        후보 중 estimate 상위 k 개 (내림차순, 동점은 최근 토큰 우선)

        Args:
            q: transformed query
            candidates: CandidateSet 또는 zone index 배열
            metadata: MetadataTable / MetadataBatch
            k: 최종 개수

        Returns:
            RerankResult (pool 이 k 보다 작으면 전체 반환 + short_pool=True)
        """
        idx = getattr(candidates, "indices", candidates)
        idx = np.asarray(idx, dtype=np.int64)
        short = idx.shape[0] < k
        if short:
            logger.warning("Candidate pool (%d) smaller than k=%d; returning all candidates", idx.shape[0], k)
        est = self.score_candidates(q, idx, metadata)
        pos = select_topk(est, idx, k)
        return RerankResult(indices=idx[pos], estimates=est[pos], short_pool=short)


def pair_estimates(keys: np.ndarray, queries: np.ndarray, cfg: RetrievalConfig, levels: Optional[MagnitudeLevels] = None) -> np.ndarray:
    """Estimate <k_i, q_i> for aligned (key, query) rows; used by the calibration ablation."""
    levels = levels or levels_for(cfg)
    batch = build_metadata_batch(keys, cfg, levels)
    q_norms, q_radii, q_dirs = transform_rows(queries, cfg)
    q_sub = q_radii[..., None].astype(np.float64) * q_dirs.astype(np.float64)
    if batch.directions is not None:
        v = batch.directions.astype(np.float64)
    else:
        v, _ = dequantize_nibbles(unpack_nibbles(batch.codes), levels)
    sub = np.sum(v * q_sub, axis=-1)
    return q_norms * np.sum(batch.weights.astype(np.float64) * sub, axis=1)


def reference_estimates(q: TransformedVector, batch: MetadataBatch, indices, levels: MagnitudeLevels) -> np.ndarray:
    """Unfused estimator: dequantize every code to v, then dot."""
    indices = np.asarray(indices, dtype=np.int64)
    if batch.directions is not None:
        v = batch.directions[indices].astype(np.float64)
    else:
        v, _ = dequantize_nibbles(unpack_nibbles(batch.codes[indices]), levels)
    sub = np.sum(v * q.subvectors().astype(np.float64)[None], axis=-1)
    return q.original_norm * np.sum(batch.weights[indices].astype(np.float64) * sub, axis=1)
