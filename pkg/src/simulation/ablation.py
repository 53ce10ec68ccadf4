"""
Ablation Runner

한 번에 하나의 메커니즘만 바꿔가며 MetricsRow CSV 를 생성합니다.
- drift            : analytic vs k-means(prefill-only) coarse stage, drift on/off
- alpha            : alpha correction on/off (estimator error + end-to-end recall)
- tiers            : 6-tier vs 1-tier collision bonus
- ratio_vs_length  : (rho, beta) = (0.20, 0.10) 고정, n sweep
- prior_check      : Beta prior KS report
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from ..analysis.attention import approx_attention, brute_topk, full_attention, recall_at_k, relative_l2_error
from ..analysis.priors import check_priors
from ..models.coarse import bucket_topk
from ..models.engine import RetrievalEngine, StepTrace
from ..models.rerank import pair_estimates
from ..utils.config import RetrievalConfig
from .kmeans_baseline import kmeans_coarse_baseline
from .workload import Workload, gen_drift, gen_isotropic

logger = logging.getLogger(__name__)

NAN = float("nan")
ABLATIONS = ("drift", "alpha", "tiers", "ratio_vs_length", "prior_check")


@dataclass
class MetricsRow:
    method: str
    n: int
    step: int
    rho: float
    beta: float
    C: int
    k: int
    coarse_recall_at_k: float
    final_recall_at_k: float
    output_rel_error: float
    cold_fetches: int
    wall_time: float
    # side-file columns (not part of the CSV header)
    coarse_only_recall_at_k: float = NAN
    ip_error: float = NAN
    threshold_ties: int = -1

    @classmethod
    def from_trace(cls, method: str, trace: StepTrace, record_time: bool = True) -> "MetricsRow":
        return cls(
            method=method,
            n=trace.n,
            step=trace.step,
            rho=trace.rho,
            beta=trace.beta,
            C=trace.candidate_count,
            k=trace.k,
            coarse_recall_at_k=trace.coarse_recall,
            final_recall_at_k=trace.final_recall,
            output_rel_error=trace.output_rel_error,
            cold_fetches=trace.fetch_count,
            wall_time=trace.wall_time if record_time else 0.0,
            coarse_only_recall_at_k=trace.coarse_only_recall,
            threshold_ties=trace.threshold_ties,
        )


FIELD_NAMES = [f.name for f in fields(MetricsRow)]
EXTRA_FIELDS = ["coarse_only_recall_at_k", "ip_error", "threshold_ties"]
CONTRACT_FIELDS = [f for f in FIELD_NAMES if f not in EXTRA_FIELDS]

# python field -> CSV column ('@' 는 identifier 에 못 씀)
CSV_NAMES = {name: name.replace("_at_k", "@k") for name in FIELD_NAMES}
METRIC_COLUMNS = [CSV_NAMES[f] for f in CONTRACT_FIELDS]
EXTRA_COLUMNS = [CSV_NAMES[f] for f in EXTRA_FIELDS]
ROW_KEY = ["method", "n", "step"]


def rows_to_frame(rows: Iterable[MetricsRow]) -> pd.DataFrame:
    """MetricsRow 들 → CSV 컬럼명(@k)을 쓰는 DataFrame (contract + extra 컬럼)"""
    df = pd.DataFrame([asdict(r) for r in rows], columns=FIELD_NAMES)
    return df.rename(columns=CSV_NAMES)


def extra_path(out_path) -> Path:
    out_path = Path(out_path)
    return out_path.with_name(f"{out_path.stem}.extra.csv")


def write_metrics(rows, out_path, extras: bool = True) -> pd.DataFrame:
    """
    Metrics CSV 저장

    본 파일 header 는 METRIC_COLUMNS 그대로입니다. coarse-only recall / ip_error / threshold_ties 는
    같은 행 순서로 `<stem>.extra.csv` 에 (method, n, step) 과 함께 따로 씁니다.

    Args:
        rows: MetricsRow iterable 또는 rows_to_frame 결과
        out_path: 본 CSV 경로
        extras: side file 작성 여부

    Returns:
        전체 컬럼 DataFrame
    """
    df = rows if isinstance(rows, pd.DataFrame) else rows_to_frame(rows)
    df = df.rename(columns=CSV_NAMES)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    df[METRIC_COLUMNS].to_csv(out_path, index=False)
    if extras and all(c in df.columns for c in EXTRA_COLUMNS):
        df[ROW_KEY + EXTRA_COLUMNS].to_csv(extra_path(out_path), index=False)
    logger.info("Metrics written: %s (%d rows)", out_path, len(df))
    return df


def read_metrics(path) -> pd.DataFrame:
    """본 CSV 를 읽고, side file 이 있으면 행 순서대로 extra 컬럼을 붙입니다."""
    df = pd.read_csv(path)
    side = extra_path(path)
    if side.exists():
        extra = pd.read_csv(side)
        if len(extra) != len(df) or not extra[ROW_KEY].equals(df[ROW_KEY]):
            raise ValueError(f"{side} does not line up with {path}")
        df = pd.concat([df, extra[EXTRA_COLUMNS]], axis=1)
    return df


def summarize_metrics(df: pd.DataFrame) -> pd.DataFrame:
    """(method, n) 별 평균"""
    if df.empty:
        return df
    numeric = [c for c in df.columns if c not in ("method", "n", "step") and pd.api.types.is_numeric_dtype(df[c])]
    summary = df.groupby(["method", "n"], sort=True)[numeric].mean().reset_index()
    summary.insert(2, "rows", df.groupby(["method", "n"], sort=True).size().values)
    return summary


# ---------------------------
# measurement helpers
# ---------------------------
def measure_static(
    method: str,
    engine: RetrievalEngine,
    keys: np.ndarray,
    values: np.ndarray,
    queries: np.ndarray,
    record_time: bool = True,
) -> List[MetricsRow]:
    """
    Prefill-only engine 에 대해 query 별 한 row.
    Oracle 은 harness 가 가진 원본 keys 를 쓰고, cold KV 는 fetch_topk 로만 읽습니다.
    """
    cfg = engine.cfg
    regions = engine.regions()
    zone = keys[regions.sink_end:regions.retrieval_end]
    hot_k, hot_v = engine.store.hot_kv()
    rows = []
    for i, q in enumerate(queries):
        t0 = time.perf_counter()
        res = engine.retrieve(q)
        kf, vf = engine.store.fetch_topk(res.indices)
        out = approx_attention(q, None, kf, vf, hot_k, hot_v, scale=cfg.scale)
        elapsed = time.perf_counter() - t0

        k = int(res.indices.shape[0])
        truth = brute_topk(q, zone, k)
        exact = full_attention(q, keys, values, cfg.scale)
        rows.append(
            MetricsRow(
                method=method,
                n=res.n,
                step=i,
                rho=res.rho,
                beta=res.beta,
                C=len(res.candidates),
                k=k,
                coarse_recall_at_k=recall_at_k(res.candidates.indices, truth),
                final_recall_at_k=recall_at_k(res.indices, truth),
                output_rel_error=relative_l2_error(out, exact),
                cold_fetches=k,
                wall_time=elapsed if record_time else 0.0,
                coarse_only_recall_at_k=recall_at_k(bucket_topk(res.scores, k).indices, truth),
                threshold_ties=res.candidates.threshold_ties,
            )
        )
    return rows


def run_decode(
    method: str,
    engine: RetrievalEngine,
    wl: Workload,
    measure_from: int = 0,
    measure_every: int = 1,
    record_time: bool = True,
    progress: bool = True,
) -> List[MetricsRow]:
    """
    Decode stream 재생. 측정 스텝은 decode_step(query + append), 나머지는 append 만.
    """
    rows = []
    steps = range(wl.decode_n)
    for t in tqdm(steps, desc=method, disable=not progress, leave=False):
        kv = (wl.decode_keys[t], wl.decode_values[t])
        if t >= measure_from and (t - measure_from) % max(1, measure_every) == 0:
            result = engine.decode_step(wl.decode_queries[t], kv)
            row = MetricsRow.from_trace(method, result.trace, record_time)
            row.step = t
            rows.append(row)
        else:
            engine.append(*kv)
    return rows


# ---------------------------
# ablations
# ---------------------------
def ablation_drift(
    cfg: RetrievalConfig,
    seed: int = 0,
    prefill_n: int = 20_000,
    decode_n: int = 20_000,
    prefill_mean_scale: float = 16.0,
    ramp_steps: int = 2_000,
    drift_rate: Optional[float] = None,
    measure_last: int = 5_000,
    measure_every: int = 50,
    record_time: bool = True,
    progress: bool = True,
) -> List[MetricsRow]:
    """
    analytic vs k-means(prefill-only) coarse stage, drift on/off

    drift 워크로드: decode 평균이 ramp_steps 동안 mu0 에서 -mu0 로 넘어간 뒤 유지.
    drift_rate=None 이면 2 * prefill_mean_scale / ramp_steps (정확히 반대편에서 멈춤).
    nodrift 행은 같은 seed, rate 0 (decode 가 prefill 분포 그대로).
    """
    cfg = cfg.replace(oracle_enabled=True)
    if drift_rate is None:
        drift_rate = 2.0 * prefill_mean_scale / ramp_steps
    rows: List[MetricsRow] = []
    grid = [(rate, method) for rate in (0.0, drift_rate) for method in ("analytic", "kmeans")]
    for rate, method in tqdm(grid, desc="drift", disable=not progress):
        wl = gen_drift(
            prefill_n, decode_n, rate, seed=seed, dim=cfg.dim,
            prefill_mean_scale=prefill_mean_scale, direction="reverse", ramp_steps=ramp_steps,
        )
        codebook = None
        if method == "kmeans":
            codebook = kmeans_coarse_baseline(wl.prefill_keys, cfg.centroid_count, cfg, seed=seed)
        engine = RetrievalEngine.from_prefill(wl.prefill_keys, wl.prefill_values, cfg, codebook=codebook)
        label = method if rate > 0 else f"{method}_nodrift"
        rows += run_decode(
            label, engine, wl,
            measure_from=max(0, decode_n - measure_last),
            measure_every=measure_every,
            record_time=record_time,
            progress=progress,
        )
    return rows


def _alpha_pairs(rng: np.random.Generator, pairs: int, dim: int, regime: str, noise: float):
    keys = rng.standard_normal((pairs, dim), dtype=np.float32)
    if regime == "random":
        queries = rng.standard_normal((pairs, dim), dtype=np.float32)
    elif regime == "aligned":
        queries = (keys + noise * rng.standard_normal((pairs, dim), dtype=np.float32)).astype(np.float32)
    else:
        raise ValueError(f"unknown pair regime {regime!r}")
    return keys, queries


def alpha_error_rows(
    cfg: RetrievalConfig,
    pairs: int = 10_000,
    seed: int = 0,
    noise: float = 0.3,
    regimes: Sequence[str] = ("random", "aligned"),
) -> List[MetricsRow]:
    """
    Mean |estimate - <k,q>| with and without alpha correction, per pair regime.

    random : 독립 N(0, I) key/query 쌍
    aligned: query = key + noise * N(0, I) (retrieval 이 실제로 다루는 상위 쌍)
    method label 은 `alpha_<regime>` / `no_alpha_<regime>` 입니다.
    """
    rng = np.random.default_rng(int(seed))
    rows = []
    for regime in regimes:
        keys, queries = _alpha_pairs(rng, pairs, cfg.dim, regime, noise)
        exact = np.einsum("ij,ij->i", keys.astype(np.float64), queries.astype(np.float64))
        for label, flag in (("alpha", True), ("no_alpha", False)):
            est = pair_estimates(keys, queries, cfg.replace(alpha_correction=flag, exact_codes=False))
            mae = float(np.mean(np.abs(est - exact)))
            rows.append(MetricsRow(f"{label}_{regime}", pairs, -1, NAN, NAN, 0, 0, NAN, NAN, NAN, 0, 0.0, ip_error=mae))
    return rows


def ablation_alpha(
    cfg: RetrievalConfig,
    seed: int = 0,
    n: int = 30_000,
    query_count: int = 100,
    pairs: int = 10_000,
    record_time: bool = True,
    progress: bool = True,
) -> List[MetricsRow]:
    rows = alpha_error_rows(cfg, pairs=pairs, seed=seed)
    wl = gen_isotropic(n, cfg.dim, seed=seed, query_count=query_count)
    for label, flag in tqdm((("alpha", True), ("no_alpha", False)), desc="alpha", disable=not progress):
        engine = RetrievalEngine.from_prefill(wl.prefill_keys, wl.prefill_values, cfg.replace(alpha_correction=flag))
        rows += measure_static(label, engine, wl.prefill_keys, wl.prefill_values, wl.queries, record_time)
    return rows


def ablation_tiers(
    cfg: RetrievalConfig,
    seed: int = 0,
    n: int = 30_000,
    beta: float = 0.05,
    query_count: int = 100,
    record_time: bool = True,
    progress: bool = True,
) -> List[MetricsRow]:
    wl = gen_isotropic(n, cfg.dim, seed=seed, query_count=query_count)
    rows = []
    variants = (("tiers6", (6, 5, 4, 3, 2, 1)), ("tiers1", (1,)))
    for label, tiers in tqdm(variants, desc="tiers", disable=not progress):
        engine = RetrievalEngine.from_prefill(
            wl.prefill_keys, wl.prefill_values, cfg.replace(tier_bonuses=tiers, beta_override=beta)
        )
        rows += measure_static(label, engine, wl.prefill_keys, wl.prefill_values, wl.queries, record_time)
    return rows


def ablation_ratio_vs_length(
    cfg: RetrievalConfig,
    seed: int = 0,
    lengths: Sequence[int] = (5_000, 10_000, 30_000, 100_000),
    beta: float = 0.10,
    rho: float = 0.20,
    query_count: int = 100,
    record_time: bool = True,
    progress: bool = True,
) -> List[MetricsRow]:
    """(rho, beta) 를 모든 길이에서 고정하고 n 만 바꿉니다."""
    fixed = cfg.replace(rho_beta_schedule=((0, rho, beta),), beta_override=None)
    rows = []
    for n in tqdm(lengths, desc="ratio_vs_length", disable=not progress):
        wl = gen_isotropic(int(n), cfg.dim, seed=seed, query_count=query_count)
        engine = RetrievalEngine.from_prefill(wl.prefill_keys, wl.prefill_values, fixed)
        rows += measure_static(f"beta={beta:g}", engine, wl.prefill_keys, wl.prefill_values, wl.queries, record_time)
    return rows


def ablation_prior_check(cfg: RetrievalConfig, seed: int = 0, samples: int = 100_000, **_) -> pd.DataFrame:
    ms = sorted(m for m in {2, 4, 8, 16, cfg.subspace_dim} if cfg.padded_dim % m == 0)
    reports = [check_priors(cfg.dim, m, samples=samples, seed=seed, rotation_seed=cfg.rotation_seed).to_dict() for m in ms]
    return pd.DataFrame(reports)


_RUNNERS: Dict[str, Callable] = {
    "drift": ablation_drift,
    "alpha": ablation_alpha,
    "tiers": ablation_tiers,
    "ratio_vs_length": ablation_ratio_vs_length,
    "prior_check": ablation_prior_check,
}


def run_ablation(name: str, cfg: RetrievalConfig, out_path, seed: int = 0, **kwargs) -> pd.DataFrame:
    """
    Ablation 실행 후 CSV 저장

    Args:
        name: drift | alpha | tiers | ratio_vs_length | prior_check
        cfg: base config (ablation 이 한 필드만 바꿈)
        out_path: CSV 경로
        seed: workload seed
        **kwargs: ablation 별 크기 파라미터

    Returns:
        저장된 DataFrame
    """
    if name not in _RUNNERS:
        raise ValueError(f"unknown ablation {name!r}; choose from {', '.join(ABLATIONS)}")
    logger.info("[ablation] %s (seed=%d)", name, seed)
    t0 = time.perf_counter()
    result = _RUNNERS[name](cfg, seed=seed, **kwargs)
    if isinstance(result, pd.DataFrame):
        df = result
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(out_path, index=False)
    else:
        df = write_metrics(result, out_path)
        logger.info("Summary:\n%s", summarize_metrics(df).to_string(index=False))
    logger.info("[ablation] %s done in %.1fs", name, time.perf_counter() - t0)
    return df
