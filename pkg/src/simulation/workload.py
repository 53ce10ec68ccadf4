"""
Synthetic Workload Module

- gen_isotropic: standard-normal keys/values/queries
- gen_drift: prefill around mu0, decode keys drifting along a fixed direction
  (random, or reversing toward -mu0; optionally plateauing after a ramp),
  queries = noisy copies of recent keys (true top-k follows the drift)
- save_workload / load_workload: PKV1 arrays + workload.json
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from ..data.pkv import read_pkv, write_pkv

logger = logging.getLogger(__name__)

ARRAYS = ("prefill_keys", "prefill_values", "decode_keys", "decode_values", "queries", "decode_queries")
DRIFT_DIRECTIONS = ("random", "reverse")


@dataclass
class Workload:
    name: str
    seed: int
    prefill_keys: np.ndarray       # (N, D)
    prefill_values: np.ndarray     # (N, D)
    decode_keys: np.ndarray        # (M, D)
    decode_values: np.ndarray      # (M, D)
    queries: np.ndarray            # (Q, D) static queries against the prefill
    decode_queries: np.ndarray     # (M, D) one query per decode step
    params: Dict[str, Any] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return int(self.prefill_keys.shape[1])

    @property
    def prefill_n(self) -> int:
        return int(self.prefill_keys.shape[0])

    @property
    def decode_n(self) -> int:
        return int(self.decode_keys.shape[0])


def _normal(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    return rng.standard_normal((int(n), int(dim)), dtype=np.float32)


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return (v / np.linalg.norm(v)).astype(np.float32)


def gen_isotropic(n: int, dim: int = 128, seed: int = 0, decode_n: int = 0, query_count: int = 100) -> Workload:
    """
    등방성(standard normal) 워크로드

    Args:
        n: prefill length
        dim: key/value dimension
        seed: RNG seed (same seed → identical bytes)
        decode_n: decode stream length
        query_count: static query count

    Returns:
        Workload
    """
    rng = np.random.default_rng(int(seed))
    keys = _normal(rng, n, dim)
    values = _normal(rng, n, dim)
    queries = _normal(rng, query_count, dim)
    dec_k = _normal(rng, decode_n, dim)
    dec_v = _normal(rng, decode_n, dim)
    dec_q = _normal(rng, decode_n, dim)
    params = {"generator": "isotropic", "n": int(n), "dim": int(dim), "decode_n": int(decode_n), "query_count": int(query_count)}
    return Workload("isotropic", int(seed), keys, values, dec_k, dec_v, queries, dec_q, params)


def gen_drift(
    prefill_n: int,
    decode_n: int,
    drift_rate: float,
    seed: int = 0,
    dim: int = 128,
    prefill_mean_scale: float = 4.0,
    query_window: int = 4096,
    query_count: int = 100,
    direction: str = "random",
    ramp_steps: Optional[int] = None,
) -> Workload:
    """
    Drifting decode stream.

    prefill k ~ N(mu0, I), mu0 = prefill_mean_scale * eps;
    decode key t ~ N(mu0 + s(t) * drift_rate * delta, I), s(t) = min(t+1, ramp_steps);
    decode query t = (a key among the last query_window tokens) + N(0, I).

    direction="random" 이면 delta 는 eps 와 독립인 단위벡터,
    "reverse" 이면 delta = -eps (ramp 끝에서 평균이 mu0 반대편으로 넘어감).
    ramp_steps=None 이면 shift 가 끝없이 선형으로 증가.
    """
    if prefill_n < 1:
        raise ValueError("gen_drift needs at least one prefill token")
    if direction not in DRIFT_DIRECTIONS:
        raise ValueError(f"unknown drift direction: {direction!r} (expected one of {DRIFT_DIRECTIONS})")
    if ramp_steps is not None and ramp_steps < 1:
        raise ValueError(f"ramp_steps must be >= 1, got {ramp_steps}")
    rng = np.random.default_rng(int(seed))
    eps = _unit(rng, dim)
    delta = _unit(rng, dim) if direction == "random" else -eps
    mu0 = (float(prefill_mean_scale) * eps).astype(np.float32)

    keys = mu0 + _normal(rng, prefill_n, dim)
    values = _normal(rng, prefill_n, dim)

    steps = np.arange(1, decode_n + 1, dtype=np.float32)[:, None]
    if ramp_steps is not None:
        steps = np.minimum(steps, np.float32(ramp_steps))
    dec_k = (mu0 + steps * np.float32(drift_rate) * delta + _normal(rng, decode_n, dim)).astype(np.float32)
    dec_v = _normal(rng, decode_n, dim)

    stream = np.concatenate([keys, dec_k])
    hi = prefill_n + np.arange(decode_n)                 # tokens visible at step t
    lo = np.maximum(0, hi - int(query_window))
    pick = lo + np.floor(rng.random(decode_n) * (hi - lo)).astype(np.int64)
    dec_q = (stream[pick] + _normal(rng, decode_n, dim)).astype(np.float32)

    static_pick = rng.integers(0, prefill_n, size=query_count)
    queries = (keys[static_pick] + _normal(rng, query_count, dim)).astype(np.float32)

    params = {
        "generator": "drift",
        "prefill_n": int(prefill_n),
        "decode_n": int(decode_n),
        "drift_rate": float(drift_rate),
        "dim": int(dim),
        "prefill_mean_scale": float(prefill_mean_scale),
        "query_window": int(query_window),
        "query_count": int(query_count),
        "direction": direction,
        "ramp_steps": None if ramp_steps is None else int(ramp_steps),
    }
    return Workload("drift", int(seed), keys.astype(np.float32), values, dec_k, dec_v, queries, dec_q, params)


def save_workload(wl: Workload, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in ARRAYS:
        arr = getattr(wl, name)
        write_pkv(directory / f"{name}.pkv", arr.reshape(-1, wl.dim))
    meta = {"name": wl.name, "seed": wl.seed, "params": wl.params}
    (directory / "workload.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    logger.info("Workload saved: %s (%s, prefill=%d, decode=%d)", directory, wl.name, wl.prefill_n, wl.decode_n)
    return directory


def load_workload(directory, name: Optional[str] = None) -> Workload:
    directory = Path(directory)
    meta_path = directory / "workload.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {"name": name or directory.name, "seed": -1, "params": {}}
    arrays = {a: read_pkv(directory / f"{a}.pkv") for a in ARRAYS}
    return Workload(name=meta["name"], seed=int(meta["seed"]), params=meta.get("params", {}), **arrays)
