"""
Tiered KV Store Module

토큰 레이아웃 (contiguous, token 순서):
    sink | retrieval zone | local window | update buffer

- hot: sink/local/update-buffer full KV + retrieval zone metadata (centroid ids, 4-bit codes, w)
- cold: retrieval zone full-precision KV (append-only arena, fetch 로만 접근)

Update buffer 가 update_granularity 에 도달하면 sliding-window flush:
local 의 가장 오래된 토큰이 retrieval zone 으로 내려가고(metadata 생성 + cold 저장),
buffer 토큰이 local 로 승격됩니다.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from ..utils.config import RetrievalConfig
from ..utils.errors import SelectionError
from .codebook import AnalyticCodebook
from .pkv import append_pkv, read_pkv, write_pkv
from .quantizer import MagnitudeLevels, MetadataBatch, build_metadata_batch, ingest_keys, levels_for

logger = logging.getLogger(__name__)


# ---------------------------
# growable row storage
# ---------------------------
class RowBuffer:
    """Append-only array with amortized doubling; rows share trailing shape and dtype."""

    def __init__(self, row_shape: Tuple[int, ...], dtype, capacity: int = 0):
        self._row_shape = tuple(int(s) for s in row_shape)
        self._dtype = np.dtype(dtype)
        self._data = np.zeros((max(0, int(capacity)),) + self._row_shape, dtype=self._dtype)
        self._n = 0

    def __len__(self) -> int:
        return self._n

    def extend(self, rows: np.ndarray) -> None:
        rows = np.asarray(rows, dtype=self._dtype).reshape((-1,) + self._row_shape)
        need = self._n + rows.shape[0]
        if need > self._data.shape[0]:
            cap = max(need, 2 * self._data.shape[0], 16)
            grown = np.zeros((cap,) + self._row_shape, dtype=self._dtype)
            grown[: self._n] = self._data[: self._n]
            self._data = grown
        self._data[self._n:need] = rows
        self._n = need

    def view(self) -> np.ndarray:
        v = self._data[: self._n]
        v.flags.writeable = False
        return v

    def clear(self) -> None:
        self._n = 0


# ---------------------------
# records
# ---------------------------
@dataclass(frozen=True)
class RegionMap:
    """Half-open token ranges: [0, sink_end) | [sink_end, retrieval_end) | ... | [local_end, total)"""
    sink_end: int
    retrieval_end: int
    local_end: int
    total: int

    @property
    def sink_len(self) -> int:
        return self.sink_end

    @property
    def retrieval_len(self) -> int:
        return self.retrieval_end - self.sink_end

    @property
    def local_len(self) -> int:
        return self.local_end - self.retrieval_end

    @property
    def buffer_len(self) -> int:
        return self.total - self.local_end

    def validate(self, cfg: RetrievalConfig, pending_flush: bool = False) -> None:
        if not 0 <= self.sink_end <= self.retrieval_end <= self.local_end <= self.total:
            raise AssertionError(f"regions out of order: {self}")
        if self.sink_end > cfg.sink_size:
            raise AssertionError(f"sink larger than sink_size: {self}")
        if self.retrieval_len > 0 and self.sink_end != cfg.sink_size:
            raise AssertionError(f"retrieval zone exists before sink is full: {self}")
        if self.local_len > cfg.local_size:
            raise AssertionError(f"local window exceeds local_size: {self}")
        if self.retrieval_len > 0 and self.local_len != cfg.local_size:
            raise AssertionError(f"local window not full after warm-up: {self}")
        if not pending_flush and self.buffer_len >= cfg.update_granularity:
            raise AssertionError(f"update buffer not flushed: {self}")


@dataclass(frozen=True)
class FlushEvent:
    evicted: int            # local → sink/retrieval
    to_sink: int
    promoted: int           # buffer → local
    retrieval_len: int      # after flush
    total: int


# ---------------------------
# cold arena
# ---------------------------
class ColdArena:
    """
    In-process append-only full-precision KV arena.
    fetch() is the only read path; every read is counted.
    """

    def __init__(self, key_dim: int, value_dim: int):
        self.key_dim = int(key_dim)
        self.value_dim = int(value_dim)
        self._keys = RowBuffer((self.key_dim,), np.float32)
        self._values = RowBuffer((self.value_dim,), np.float32)
        self._lock = threading.Lock()
        self.cold_fetch_count = 0
        self.bytes_fetched = 0

    def __len__(self) -> int:
        return len(self._keys)

    def _append_rows(self, keys: np.ndarray, values: np.ndarray) -> None:
        self._keys.extend(keys)
        self._values.extend(values)

    def _read_rows(self, indices: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return self._keys.view()[indices].copy(), self._values.view()[indices].copy()

    def append(self, keys: np.ndarray, values: np.ndarray) -> None:
        keys = np.asarray(keys, dtype=np.float32)
        values = np.asarray(values, dtype=np.float32)
        if keys.shape[0] != values.shape[0]:
            raise ValueError(f"key/value count mismatch: {keys.shape[0]} vs {values.shape[0]}")
        if keys.shape[0]:
            self._append_rows(keys, values)

    def fetch(self, indices) -> Tuple[np.ndarray, np.ndarray]:
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        n = len(self)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise SelectionError(f"fetch index out of retrieval zone [0, {n}): {idx[(idx < 0) | (idx >= n)][:5]}")
        keys, values = self._read_rows(idx)
        with self._lock:
            self.cold_fetch_count += int(idx.size)
            self.bytes_fetched += int(idx.size) * (self.key_dim + self.value_dim) * 4
        return keys, values


class FileColdArena(ColdArena):
    """PKV1-backed arena: <dir>/keys.pkv, <dir>/values.pkv, memory-mapped reads."""

    def __init__(self, key_dim: int, value_dim: int, directory):
        super().__init__(key_dim, value_dim)
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.key_path = self.directory / "keys.pkv"
        self.value_path = self.directory / "values.pkv"
        write_pkv(self.key_path, np.zeros((0, self.key_dim), dtype=np.float32))
        write_pkv(self.value_path, np.zeros((0, self.value_dim), dtype=np.float32))
        self._count = 0
        self._maps: Optional[Tuple[np.ndarray, np.ndarray]] = None
        logger.info("File-backed cold arena at %s", self.directory)

    def __len__(self) -> int:
        return self._count

    def _append_rows(self, keys: np.ndarray, values: np.ndarray) -> None:
        append_pkv(self.key_path, keys)
        self._count = append_pkv(self.value_path, values)
        self._maps = None

    def _read_rows(self, indices: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        if self._maps is None:
            self._maps = (read_pkv(self.key_path, mmap=True), read_pkv(self.value_path, mmap=True))
        k_map, v_map = self._maps
        return np.array(k_map[indices], dtype=np.float32), np.array(v_map[indices], dtype=np.float32)


# ---------------------------
# hot metadata
# ---------------------------
class MetadataTable:
    """Growable retrieval-zone metadata (row i ↔ zone index i)."""

    def __init__(self, cfg: RetrievalConfig):
        B, m = cfg.subspace_count, cfg.subspace_dim
        self._ids = RowBuffer((B,), np.uint16)
        self._codes = RowBuffer((B, m // 2), np.uint8)
        self._weights = RowBuffer((B,), cfg.weight_dtype)
        self._dirs = RowBuffer((B, m), np.float32) if cfg.exact_codes else None
        self._radius = RowBuffer((B,), np.uint8) if cfg.radius_centroid_count > 1 else None

    def __len__(self) -> int:
        return len(self._ids)

    def extend(self, batch: MetadataBatch) -> None:
        self._ids.extend(batch.centroid_ids)
        self._codes.extend(batch.codes)
        self._weights.extend(batch.weights)
        if self._dirs is not None:
            self._dirs.extend(batch.directions)
        if self._radius is not None:
            self._radius.extend(batch.radius_codes)

    @property
    def centroid_ids(self) -> np.ndarray:
        return self._ids.view()

    @property
    def codes(self) -> np.ndarray:
        return self._codes.view()

    @property
    def weights(self) -> np.ndarray:
        return self._weights.view()

    @property
    def directions(self) -> Optional[np.ndarray]:
        return None if self._dirs is None else self._dirs.view()

    @property
    def radius_codes(self) -> Optional[np.ndarray]:
        return None if self._radius is None else self._radius.view()

    def batch(self) -> MetadataBatch:
        return MetadataBatch(
            centroid_ids=self.centroid_ids,
            codes=self.codes,
            weights=self.weights,
            directions=self.directions,
            radius_codes=self.radius_codes,
        )


# ---------------------------
# tiered store
# ---------------------------
class TieredStore:
    """Single-writer tiered KV store; readers may run between flushes."""

    def __init__(
        self,
        cfg: RetrievalConfig,
        value_dim: Optional[int] = None,
        levels: Optional[MagnitudeLevels] = None,
        codebook=None,
    ):
        self.cfg = cfg
        self.key_dim = cfg.dim
        self.value_dim = int(value_dim if value_dim is not None else cfg.dim)
        self.levels = levels or levels_for(cfg)
        self.codebook = codebook or AnalyticCodebook.from_config(cfg)

        if cfg.cold_dir:
            self.cold: ColdArena = FileColdArena(self.key_dim, self.value_dim, cfg.cold_dir)
        else:
            self.cold = ColdArena(self.key_dim, self.value_dim)
        self.metadata = MetadataTable(cfg)

        D, Dv = self.key_dim, self.value_dim
        self._sink_k = RowBuffer((D,), np.float32)
        self._sink_v = RowBuffer((Dv,), np.float32)
        self._local_k = np.zeros((0, D), dtype=np.float32)
        self._local_v = np.zeros((0, Dv), dtype=np.float32)
        self._buf_k = RowBuffer((D,), np.float32, capacity=cfg.update_granularity)
        self._buf_v = RowBuffer((Dv,), np.float32, capacity=cfg.update_granularity)
        self._staged_k: Optional[RowBuffer] = RowBuffer((D,), np.float32)
        self._staged_v: Optional[RowBuffer] = RowBuffer((Dv,), np.float32)

        self.flush_pending = False
        self.eviction_count = 0
        self.flush_count = 0
        self._lock = threading.RLock()

    # ---------------------------
    # counters / regions
    # ---------------------------
    @property
    def cold_fetch_count(self) -> int:
        return self.cold.cold_fetch_count

    @property
    def bytes_fetched(self) -> int:
        return self.cold.bytes_fetched

    @property
    def total(self) -> int:
        return len(self._sink_k) + len(self.cold) + self._local_k.shape[0] + len(self._buf_k)

    @property
    def retrieval_len(self) -> int:
        return len(self.cold)

    @property
    def staged(self) -> bool:
        return self._staged_k is not None

    def regions(self) -> RegionMap:
        sink_end = len(self._sink_k)
        retrieval_end = sink_end + len(self.cold)
        local_end = retrieval_end + self._local_k.shape[0]
        return RegionMap(sink_end, retrieval_end, local_end, local_end + len(self._buf_k))

    # ---------------------------
    # ingestion
    # ---------------------------
    def _evict(self, keys: np.ndarray, values: np.ndarray) -> int:
        """Move the oldest tokens out of local: sink first until full, then retrieval. Returns sink count."""
        room = max(0, self.cfg.sink_size - len(self._sink_k))
        to_sink = min(room, keys.shape[0])
        if to_sink:
            self._sink_k.extend(keys[:to_sink])
            self._sink_v.extend(values[:to_sink])
        rest_k, rest_v = keys[to_sink:], values[to_sink:]
        if rest_k.shape[0]:
            self._index_retrieval(rest_k, rest_v)
        return to_sink

    def _index_retrieval(self, keys: np.ndarray, values: np.ndarray) -> None:
        step = self.cfg.chunk_size
        for start in range(0, keys.shape[0], step):
            part = ingest_keys(keys[start:start + step])
            self.metadata.extend(build_metadata_batch(part, self.cfg, self.levels, self.codebook))
        self.cold.append(keys, values)
        if self._staged_k is not None:
            self._staged_k.extend(keys)
            self._staged_v.extend(values)

    def _release_staging(self) -> None:
        if self._staged_k is not None and self.total >= self.cfg.full_attention_threshold:
            logger.debug("Dense staging released at total=%d", self.total)
            self._staged_k = None
            self._staged_v = None

    def prefill(self, keys: np.ndarray, values: np.ndarray) -> RegionMap:
        """
        Prefill 배치 적재

        Args:
            keys: (N, D) prefill keys
            values: (N, D_v) prefill values

        Returns:
            적재 후 RegionMap
        """
        keys = np.asarray(keys, dtype=np.float32).reshape(-1, self.key_dim)
        values = np.asarray(values, dtype=np.float32).reshape(-1, self.value_dim)
        if keys.shape[0] != values.shape[0]:
            raise ValueError(f"key/value count mismatch: {keys.shape[0]} vs {values.shape[0]}")
        if self.total:
            raise RuntimeError("prefill on a non-empty store")

        with self._lock:
            n = keys.shape[0]
            cut = max(0, n - self.cfg.local_size)
            if self.total + n >= self.cfg.full_attention_threshold:
                self._staged_k = None
                self._staged_v = None
            self._evict(keys[:cut], values[:cut])
            self._local_k = keys[cut:].copy()
            self._local_v = values[cut:].copy()
        regions = self.regions()
        logger.info(
            "Prefill: %d tokens (sink=%d, retrieval=%d, local=%d)",
            n, regions.sink_len, regions.retrieval_len, regions.local_len,
        )
        return regions

    def append(self, key: np.ndarray, value: np.ndarray) -> Optional[FlushEvent]:
        """Buffer one decoded token; a full buffer flushes (or marks a pending flush in deferred mode)."""
        with self._lock:
            self._buf_k.extend(np.asarray(key, dtype=np.float32).reshape(1, self.key_dim))
            self._buf_v.extend(np.asarray(value, dtype=np.float32).reshape(1, self.value_dim))
            event = None
            if len(self._buf_k) >= self.cfg.update_granularity:
                if self.cfg.deferred_flush:
                    self.flush_pending = True
                else:
                    event = self.flush()
            self._release_staging()
            return event

    def flush(self) -> FlushEvent:
        """Sliding-window update: evict oldest local tokens, promote the buffer into local."""
        with self._lock:
            if not len(self._buf_k):
                raise RuntimeError("flush on an empty update buffer")
            all_k = np.concatenate([self._local_k, self._buf_k.view()])
            all_v = np.concatenate([self._local_v, self._buf_v.view()])
            promoted = len(self._buf_k)
            evict = max(0, all_k.shape[0] - self.cfg.local_size)

            to_sink = self._evict(all_k[:evict], all_v[:evict])
            self._local_k = all_k[evict:].copy()
            self._local_v = all_v[evict:].copy()
            self._buf_k.clear()
            self._buf_v.clear()

            self.flush_pending = False
            self.eviction_count += evict
            self.flush_count += 1
            self._release_staging()
            event = FlushEvent(
                evicted=evict,
                to_sink=to_sink,
                promoted=promoted,
                retrieval_len=self.retrieval_len,
                total=self.total,
            )
        logger.debug("Flush: %s", event)
        return event

    def sync(self) -> Optional[FlushEvent]:
        """Run a pending deferred flush."""
        with self._lock:
            return self.flush() if self.flush_pending else None

    # ---------------------------
    # reads
    # ---------------------------
    def fetch_topk(self, indices) -> Tuple[np.ndarray, np.ndarray]:
        """Zone-relative indices → exact cold KV (counted)."""
        return self.cold.fetch(indices)

    def hot_kv(self) -> Tuple[np.ndarray, np.ndarray]:
        """sink ∪ local ∪ update buffer, token order."""
        keys = np.concatenate([self._sink_k.view(), self._local_k, self._buf_k.view()])
        values = np.concatenate([self._sink_v.view(), self._local_v, self._buf_v.view()])
        return keys, values

    def dense_kv(self) -> Tuple[np.ndarray, np.ndarray]:
        """All tokens in order; only available while dense staging is active."""
        if self._staged_k is None:
            raise RuntimeError("dense staging released; retrieval zone is cold-only")
        keys = np.concatenate([self._sink_k.view(), self._staged_k.view(), self._local_k, self._buf_k.view()])
        values = np.concatenate([self._sink_v.view(), self._staged_v.view(), self._local_v, self._buf_v.view()])
        return keys, values
