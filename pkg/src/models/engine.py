"""
Retrieval Engine (serving facade)

decode step 흐름:
1) total < full_attention_threshold → dense attention (hot staging), fetch 없음
2) schedule(n) → accumulate → bucket_topk → rerank_topk → fetch_topk
   → approx_attention over {sink ∪ local ∪ update buffer ∪ fetched top-k}
3) new (k, v) append (flush 는 store 가 처리)

한 engine = 한 attention head 의 decode stream (single writer).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from ..analysis.attention import approx_attention, brute_topk, full_attention, recall_at_k, relative_l2_error
from ..data.store import FlushEvent, RegionMap, RowBuffer, TieredStore
from ..data.quantizer import levels_for
from ..data.transform import transform_vector
from ..utils.config import RetrievalConfig
from .coarse import CandidateGenerator, CandidateSet, CollisionScores, bucket_topk
from .rerank import CandidateRanker, RerankResult

logger = logging.getLogger(__name__)

NAN = float("nan")


@dataclass(frozen=True)
class StepTrace:
    step: int
    n: int                    # retrieval zone length at query time
    total: int
    rho: float
    beta: float
    candidate_count: int
    k: int
    fetch_count: int
    coarse_recall: float = NAN
    final_recall: float = NAN
    coarse_only_recall: float = NAN  # top-k by collision score alone
    output_rel_error: float = NAN
    threshold_ties: int = -1
    dense: bool = False
    wall_time: float = 0.0


@dataclass(frozen=True)
class StepResult:
    output: np.ndarray
    trace: StepTrace
    flush: Optional[FlushEvent] = None


@dataclass(frozen=True)
class RetrievalResult:
    indices: np.ndarray        # zone-relative top-k, best first
    candidates: CandidateSet
    scores: CollisionScores
    rerank: RerankResult
    rho: float
    beta: float
    n: int


class RetrievalEngine:
    """prefill / retrieve / decode_step facade over the tiered store."""

    def __init__(self, cfg: RetrievalConfig, value_dim: Optional[int] = None, codebook=None):
        self.cfg = cfg
        self.levels = levels_for(cfg)
        self.store = TieredStore(cfg, value_dim=value_dim, levels=self.levels, codebook=codebook)
        self.generator = CandidateGenerator(cfg, codebook=self.store.codebook)
        self.ranker = CandidateRanker(cfg, self.levels)
        self.step_count = 0

        self._shadow_k: Optional[RowBuffer] = None
        self._shadow_v: Optional[RowBuffer] = None
        if cfg.oracle_enabled:
            self._shadow_k = RowBuffer((cfg.dim,), np.float32)
            self._shadow_v = RowBuffer((self.store.value_dim,), np.float32)

    # ---------------------------
    # lifecycle
    # ---------------------------
    @classmethod
    def from_prefill(cls, keys: np.ndarray, values: np.ndarray, cfg: RetrievalConfig, codebook=None) -> "RetrievalEngine":
        keys = np.asarray(keys, dtype=np.float32).reshape(-1, cfg.dim)
        values = np.asarray(values, dtype=np.float32)
        value_dim = values.shape[1] if values.ndim == 2 else cfg.dim
        engine = cls(cfg, value_dim=value_dim, codebook=codebook)
        engine.store.prefill(keys, values.reshape(-1, value_dim))
        if engine._shadow_k is not None:
            engine._shadow_k.extend(keys)
            engine._shadow_v.extend(values.reshape(-1, value_dim))
        logger.info(
            "Engine ready: total=%d retrieval=%d dense=%s codebook=%s",
            engine.store.total, engine.store.retrieval_len, engine.dense, getattr(engine.store.codebook, "name", "?"),
        )
        return engine

    @property
    def dense(self) -> bool:
        return self.store.total < self.cfg.full_attention_threshold

    def regions(self) -> RegionMap:
        return self.store.regions()

    def append(self, key: np.ndarray, value: np.ndarray) -> Optional[FlushEvent]:
        if self._shadow_k is not None:
            self._shadow_k.extend(np.asarray(key, dtype=np.float32).reshape(1, -1))
            self._shadow_v.extend(np.asarray(value, dtype=np.float32).reshape(1, -1))
        return self.store.append(key, value)

    # ---------------------------
    # retrieval
    # ---------------------------
    def retrieve(self, q: np.ndarray, k: Optional[int] = None) -> RetrievalResult:
        """
        One Stage I + Stage II pass over the retrieval zone (no fetch, no append).
        A zero query raises DegenerateInputError; decode_step handles it before retrieval.
        """
        meta = self.store.metadata
        n = len(meta)
        k = min(int(k or self.cfg.top_k), n)
        q_t = transform_vector(q, self.cfg)
        cands, scores, rho, beta = self.generator.generate(q_t, meta.centroid_ids)
        rr = self.ranker.rerank_topk(q_t, cands, meta, k)
        return RetrievalResult(indices=rr.indices, candidates=cands, scores=scores, rerank=rr, rho=rho, beta=beta, n=n)

    def _oracle(self, q: np.ndarray, res: RetrievalResult, output: np.ndarray) -> Tuple[float, float, float, float]:
        """(coarse, final, coarse-only) recall and output error against the shadow copy"""
        regions = self.store.regions()
        all_k = self._shadow_k.view()
        all_v = self._shadow_v.view()
        zone = all_k[regions.sink_end:regions.retrieval_end]
        k = min(self.cfg.top_k, zone.shape[0])
        truth = brute_topk(q, zone, k) if k > 0 else np.zeros(0, dtype=np.int64)
        exact = full_attention(q, all_k, all_v, self.cfg.scale)
        coarse_only = bucket_topk(res.scores, min(k, len(res.scores))).indices
        return (
            recall_at_k(res.candidates.indices, truth),
            recall_at_k(res.indices, truth),
            recall_at_k(coarse_only, truth),
            relative_l2_error(output, exact),
        )

    def decode_step(self, q: np.ndarray, new_kv: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> StepResult:
        """
        Decode 한 스텝

        Args:
            q: (D,) query
            new_kv: 이번 스텝 토큰의 (key, value); attention 이후 append

        Returns:
            StepResult(output, trace, flush)
        """
        t0 = time.perf_counter()
        q = np.asarray(q, dtype=np.float32)
        n = self.store.retrieval_len

        if self.dense:
            keys, values = self.store.dense_kv()
            if keys.shape[0] == 0:
                output = np.zeros(self.store.value_dim, dtype=np.float64)
            else:
                output = full_attention(q, keys, values, self.cfg.scale)
            err = NAN
            if self._shadow_k is not None and keys.shape[0]:
                err = relative_l2_error(output, full_attention(q, self._shadow_k.view(), self._shadow_v.view(), self.cfg.scale))
            trace = StepTrace(
                step=self.step_count, n=n, total=self.store.total, rho=NAN, beta=NAN,
                candidate_count=0, k=0, fetch_count=0, output_rel_error=err, dense=True,
            )
        else:
            hot_k, hot_v = self.store.hot_kv()
            zero_q = not np.any(q)
            if n == 0 or zero_q:
                # zero query: every logit is 0, so the hot set gets uniform weights and nothing is fetched
                if zero_q and n > 0:
                    logger.warning("Zero query at step %d; attending uniformly over %d hot tokens", self.step_count, hot_k.shape[0])
                if hot_k.shape[0] == 0:
                    output = np.zeros(self.store.value_dim, dtype=np.float64)
                else:
                    output = full_attention(q, hot_k, hot_v, self.cfg.scale)
                trace = StepTrace(
                    step=self.step_count, n=n, total=self.store.total, rho=NAN, beta=NAN,
                    candidate_count=0, k=0, fetch_count=0,
                )
            else:
                res = self.retrieve(q)
                keys_f, values_f = self.store.fetch_topk(res.indices)
                output = approx_attention(q, None, keys_f, values_f, hot_k, hot_v, scale=self.cfg.scale)
                coarse_r = final_r = only_r = err = NAN
                if self._shadow_k is not None:
                    coarse_r, final_r, only_r, err = self._oracle(q, res, output)
                trace = StepTrace(
                    step=self.step_count, n=n, total=self.store.total, rho=res.rho, beta=res.beta,
                    candidate_count=len(res.candidates), k=int(res.indices.shape[0]),
                    fetch_count=int(res.indices.shape[0]), coarse_recall=coarse_r, final_recall=final_r,
                    coarse_only_recall=only_r,
                    output_rel_error=err, threshold_ties=res.candidates.threshold_ties,
                )

        flush = None
        if new_kv is not None:
            flush = self.append(*new_kv)
        self.step_count += 1
        trace = replace(trace, wall_time=time.perf_counter() - t0)
        return StepResult(output=output, trace=trace, flush=flush)

    def stats(self) -> dict:
        r = self.store.regions()
        return {
            "total": r.total,
            "sink": r.sink_len,
            "retrieval": r.retrieval_len,
            "local": r.local_len,
            "buffer": r.buffer_len,
            "cold_fetch_count": self.store.cold_fetch_count,
            "bytes_fetched": self.store.bytes_fetched,
            "eviction_count": self.store.eviction_count,
            "flush_count": self.store.flush_count,
            "steps": self.step_count,
        }


def engine_prefill(keys: np.ndarray, values: np.ndarray, cfg: RetrievalConfig, codebook=None) -> RetrievalEngine:
    return RetrievalEngine.from_prefill(keys, values, cfg, codebook=codebook)
