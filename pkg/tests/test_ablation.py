"""Ablation runner / metrics CSV"""

import numpy as np
import pandas as pd
import pytest

from src.models.engine import RetrievalEngine
from src.simulation.ablation import (
    EXTRA_COLUMNS,
    METRIC_COLUMNS,
    MetricsRow,
    ablation_alpha,
    ablation_drift,
    ablation_ratio_vs_length,
    ablation_tiers,
    alpha_error_rows,
    measure_static,
    read_metrics,
    rows_to_frame,
    run_ablation,
    summarize_metrics,
    write_metrics,
)
from src.simulation.workload import gen_isotropic
from src.utils.config import RetrievalConfig

HEADER = "method,n,step,rho,beta,C,k,coarse_recall@k,final_recall@k,output_rel_error,cold_fetches,wall_time"


def test_header_matches_metrics_row(tmp_path):
    assert ",".join(METRIC_COLUMNS) == HEADER
    row = MetricsRow("x", 10, 0, 0.1, 0.1, 5, 2, 1.0, 1.0, 0.0, 2, 0.0)
    write_metrics([row], tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == HEADER
    extra = (tmp_path / "m.extra.csv").read_text().splitlines()
    assert extra[0] == "method,n,step,coarse_only_recall@k,ip_error,threshold_ties"
    assert extra[1].startswith("x,10,0,")


def test_read_metrics_joins_side_file(tmp_path):
    rows = [
        MetricsRow("a", 10, i, 0.1, 0.1, 5, 2, 0.5, 0.4, 0.0, 2, 0.0, coarse_only_recall_at_k=0.2, threshold_ties=i)
        for i in range(3)
    ]
    write_metrics(rows, tmp_path / "m.csv")
    df = read_metrics(tmp_path / "m.csv")
    assert list(df.columns) == METRIC_COLUMNS + EXTRA_COLUMNS
    assert df["threshold_ties"].tolist() == [0, 1, 2]
    assert df["coarse_only_recall@k"].tolist() == [0.2] * 3

    write_metrics(rows, tmp_path / "plain.csv", extras=False)
    assert not (tmp_path / "plain.extra.csv").exists()
    assert list(read_metrics(tmp_path / "plain.csv").columns) == METRIC_COLUMNS

    # side file out of step with the main file
    pd.read_csv(tmp_path / "m.extra.csv").iloc[:2].to_csv(tmp_path / "m.extra.csv", index=False)
    with pytest.raises(ValueError):
        read_metrics(tmp_path / "m.csv")


def test_measure_static_rows(small_cfg):
    wl = gen_isotropic(300, 32, seed=0, query_count=4)
    engine = RetrievalEngine.from_prefill(wl.prefill_keys, wl.prefill_values, small_cfg)
    rows = measure_static("analytic", engine, wl.prefill_keys, wl.prefill_values, wl.queries, record_time=False)
    assert len(rows) == 4
    for row in rows:
        assert row.n == 280 and row.k == 10 and row.cold_fetches == 10
        assert 0.0 <= row.final_recall_at_k <= row.coarse_recall_at_k <= 1.0
        assert 0.0 <= row.coarse_only_recall_at_k <= 1.0
        assert row.wall_time == 0.0
    assert engine.store.cold_fetch_count == 40


def test_drift_ablation_series(small_cfg):
    rows = ablation_drift(
        small_cfg, seed=0, prefill_n=200, decode_n=60, drift_rate=0.05,
        measure_last=20, measure_every=5, record_time=False, progress=False,
    )
    df = pd.DataFrame([r.__dict__ for r in rows])
    assert sorted(df["method"].unique()) == ["analytic", "analytic_nodrift", "kmeans", "kmeans_nodrift"]
    assert (df.groupby("method").size() == 4).all()
    assert df["step"].min() == 40
    assert df["final_recall_at_k"].between(0.0, 1.0).all()


def test_alpha_error_rows(small_cfg):
    rows = alpha_error_rows(small_cfg, pairs=200, seed=0)
    assert [r.method for r in rows] == ["alpha_random", "no_alpha_random", "alpha_aligned", "no_alpha_aligned"]
    assert all(np.isfinite(r.ip_error) and r.ip_error > 0 for r in rows)


@pytest.mark.parametrize(
    "name, kwargs, methods",
    [
        (
            "alpha",
            {"n": 300, "query_count": 3, "pairs": 100},
            {"alpha", "no_alpha", "alpha_random", "no_alpha_random", "alpha_aligned", "no_alpha_aligned"},
        ),
        ("tiers", {"n": 300, "query_count": 3}, {"tiers6", "tiers1"}),
        ("ratio_vs_length", {"lengths": (100, 300), "query_count": 2}, {"beta=0.1"}),
    ],
)
def test_run_ablation_writes_csv(small_cfg, tmp_path, name, kwargs, methods):
    out = tmp_path / f"{name}.csv"
    df = run_ablation(name, small_cfg, out, seed=0, record_time=False, progress=False, **kwargs)
    assert out.exists()
    assert set(df["method"]) == methods
    assert list(pd.read_csv(out).columns) == METRIC_COLUMNS
    assert list(pd.read_csv(out.with_name(f"{name}.extra.csv")).columns) == ["method", "n", "step"] + EXTRA_COLUMNS


def test_runs_reproduce_byte_for_byte(small_cfg, tmp_path):
    kwargs = {"n": 300, "query_count": 3, "record_time": False, "progress": False}
    run_ablation("tiers", small_cfg, tmp_path / "a.csv", seed=3, **kwargs)
    run_ablation("tiers", small_cfg, tmp_path / "b.csv", seed=3, **kwargs)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_prior_check_ablation(small_cfg, tmp_path):
    df = run_ablation("prior_check", small_cfg, tmp_path / "p.csv", samples=500)
    assert df["subspace_dim"].tolist() == [2, 4, 8, 16]
    assert set(df["status"]) == {"ok"}


def test_unknown_ablation(small_cfg, tmp_path):
    with pytest.raises(ValueError):
        run_ablation("nope", small_cfg, tmp_path / "x.csv")


def test_summarize_metrics():
    rows = [
        MetricsRow("a", 10, i, 0.1, 0.1, 5, 2, 0.5 + 0.1 * i, 0.5, 0.0, 2, 0.0) for i in range(3)
    ] + [MetricsRow("b", 10, 0, 0.1, 0.1, 5, 2, 1.0, 1.0, 0.0, 2, 0.0)]
    summary = summarize_metrics(pd.DataFrame([r.__dict__ for r in rows]))
    a = summary[summary["method"] == "a"].iloc[0]
    assert a["rows"] == 3
    assert a["coarse_recall_at_k"] == pytest.approx(0.6)


def test_tier_score_range_at_defaults():
    cfg = RetrievalConfig()
    assert cfg.max_score == 96
    assert cfg.replace(tier_bonuses=(1,)).max_score == 16


@pytest.mark.slow
def test_analytic_codebook_holds_recall_under_drift():
    rows = ablation_drift(RetrievalConfig(), seed=0, record_time=False, progress=False)
    recall = rows_to_frame(rows).groupby("method")["final_recall@k"].mean()
    retention = {m: recall[m] / recall[f"{m}_nodrift"] for m in ("analytic", "kmeans")}
    assert recall["analytic"] >= 0.7 * recall["analytic_nodrift"]
    assert recall["analytic"] >= recall["kmeans"] + 0.05
    # prefill-fitted centroids gain far less from the moved decode keys
    assert retention["kmeans"] <= retention["analytic"] - 0.15


@pytest.mark.slow
def test_six_tiers_beat_one_tier_at_30k():
    rows = ablation_tiers(RetrievalConfig(), seed=0, n=30_000, beta=0.05, query_count=30, record_time=False, progress=False)
    df = rows_to_frame(rows)
    by = df.groupby("method")
    coarse = by["coarse_recall@k"].mean()
    ties = by["threshold_ties"].mean()
    assert (df["beta"] == 0.05).all()
    assert coarse["tiers6"] >= coarse["tiers1"]
    assert ties["tiers6"] < ties["tiers1"]


@pytest.mark.slow
def test_alpha_correction_at_30k():
    rows = ablation_alpha(RetrievalConfig(), seed=0, n=30_000, query_count=100, pairs=10_000, record_time=False, progress=False)
    df = rows_to_frame(rows)
    mae = df[df["step"] == -1].set_index("method")["ip_error"]
    assert mae["alpha_aligned"] < mae["no_alpha_aligned"]
    # unrelated pairs: the correction neither helps nor hurts by more than 1%
    assert abs(mae["alpha_random"] / mae["no_alpha_random"] - 1.0) < 0.01

    recall = df[df["step"] >= 0].pivot(index="step", columns="method", values="final_recall@k")
    diff = recall["alpha"] - recall["no_alpha"]
    se = diff.std(ddof=1) / np.sqrt(len(diff))
    assert diff.mean() >= -2 * se


@pytest.mark.slow
def test_recall_grows_with_length_at_fixed_ratio():
    rows = ablation_ratio_vs_length(RetrievalConfig(), seed=0, beta=0.10, query_count=50, record_time=False, progress=False)
    recall = rows_to_frame(rows).groupby("n")["final_recall@k"].mean().sort_index()
    assert len(recall) == 4
    assert np.all(np.diff(recall.values) >= -0.01)
    assert recall.iloc[-1] - recall.iloc[0] >= 0.05
