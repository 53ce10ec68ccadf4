"""
Learned-centroid coarse baseline

Per-subspace k-means fit on prefill directions only (never refreshed during decode).
Same interface as AnalyticCodebook (size / assign_batch / probe), so the store,
coarse stage and engine accept it unchanged.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from sklearn.cluster import KMeans

from ..data.codebook import ProbeList
from ..data.transform import sanitize_keys, transform_rows
from ..utils.config import RetrievalConfig

logger = logging.getLogger(__name__)

LLOYD_ITERATIONS = 25


@dataclass
class KMeansCodebook:
    subspace_count: int
    subspace_dim: int
    clusters: int
    seed: int = 0
    name: str = field(default="kmeans")
    centroids: Optional[np.ndarray] = None   # (B, K, m)
    _models: List[KMeans] = field(default_factory=list, repr=False)

    @property
    def size(self) -> int:
        return self.clusters

    @property
    def fitted(self) -> bool:
        return self.centroids is not None

    def fit(self, prefill_keys: np.ndarray, cfg: RetrievalConfig) -> "KMeansCodebook":
        """
        Prefill key direction 으로 subspace 별 k-means 학습

        Args:
            prefill_keys: (N, D) raw prefill keys
            cfg: config (transform 설정 공유)

        Returns:
            self
        """
        keys = sanitize_keys(np.asarray(prefill_keys, dtype=np.float32))
        if keys.shape[0] == 0:
            raise ValueError("k-means baseline needs prefill keys")
        _, _, dirs = transform_rows(keys, cfg)
        k = min(self.clusters, keys.shape[0])
        if k < self.clusters:
            logger.warning("Only %d prefill keys; reducing k-means clusters %d → %d", keys.shape[0], self.clusters, k)
            self.clusters = k

        self._models = []
        cents = np.zeros((self.subspace_count, k, self.subspace_dim), dtype=np.float32)
        for b in range(self.subspace_count):
            km = KMeans(
                n_clusters=k,
                algorithm="lloyd",
                init="k-means++",
                n_init=1,
                max_iter=LLOYD_ITERATIONS,
                tol=0.0,
                random_state=self.seed + b,
            )
            km.fit(dirs[:, b, :].astype(np.float64))
            self._models.append(km)
            cents[b] = km.cluster_centers_.astype(np.float32)
        self.centroids = cents
        logger.info("k-means baseline fit: B=%d K=%d on %d prefill keys", self.subspace_count, k, keys.shape[0])
        return self

    def _require_fit(self) -> None:
        if self.centroids is None:
            raise RuntimeError("KMeansCodebook.fit must run before use")

    def assign_batch(self, dirs: np.ndarray) -> np.ndarray:
        """(n, B, m) → (n, B) nearest-centroid ids (Euclidean, as trained)."""
        self._require_fit()
        dirs = np.asarray(dirs, dtype=np.float32)
        out = np.zeros(dirs.shape[:2], dtype=np.uint16)
        if dirs.shape[0] == 0:
            return out
        for b in range(self.subspace_count):
            c = self.centroids[b]
            d2 = (c * c).sum(axis=1)[None, :] - 2.0 * dirs[:, b, :] @ c.T
            out[:, b] = np.argmin(d2, axis=1)
        return out

    def probe(self, q_dirs: np.ndarray, count: int) -> List[ProbeList]:
        """Rank centroids by <q_b, c>; ties by ascending id."""
        self._require_fit()
        count = min(int(count), self.clusters)
        out = []
        ids = np.arange(self.clusters, dtype=np.int64)
        for b in range(self.subspace_count):
            scores = self.centroids[b].astype(np.float64) @ np.asarray(q_dirs[b], dtype=np.float64)
            keep = np.lexsort((ids, -scores))[:count]
            out.append(ProbeList(ids=ids[keep], scores=scores[keep], evaluated=self.clusters))
        return out


def kmeans_coarse_baseline(prefill_keys: np.ndarray, clusters: int, cfg: RetrievalConfig, seed: Optional[int] = None) -> KMeansCodebook:
    cb = KMeansCodebook(
        subspace_count=cfg.subspace_count,
        subspace_dim=cfg.subspace_dim,
        clusters=int(clusters),
        seed=cfg.rotation_seed if seed is None else int(seed),
    )
    return cb.fit(prefill_keys, cfg)
