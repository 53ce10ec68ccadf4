"""local_sieve CLI smoke tests"""

import json

import numpy as np
import pandas as pd
import pytest

from scripts.local_sieve import main
from src.data.pkv import write_pkv

SMALL = [
    "--dim", "32", "--subspace-count", "8", "--sink-size", "4", "--local-size", "16",
    "--update-granularity", "8", "--full-attention-threshold", "0", "--top-k", "10",
]


def test_build_writes_summary(tmp_path):
    assert main(["build", "--n", "200", "--out", str(tmp_path), "--quiet", *SMALL]) == 0
    stats = json.loads((tmp_path / "build.json").read_text())
    assert stats["retrieval"] == 180 and stats["metadata_rows"] == 180
    assert "top_k=10" in (tmp_path / "config.env").read_text()


def test_query_from_dumps_is_reproducible(tmp_path, rng):
    keys = rng.standard_normal((300, 32)).astype(np.float32)
    queries = rng.standard_normal((5, 32)).astype(np.float32)
    write_pkv(tmp_path / "k.pkv", keys)
    write_pkv(tmp_path / "q.pkv", queries)
    args = ["query", "--keys", str(tmp_path / "k.pkv"), "--queries", str(tmp_path / "q.pkv"), "--no-timing", *SMALL]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "query.csv").read_bytes()
    assert a == (tmp_path / "b" / "query.csv").read_bytes()
    assert len(pd.read_csv(tmp_path / "a" / "query.csv")) == 5


def test_simulate_decode(tmp_path):
    out = tmp_path / "run"
    argv = [
        "simulate-decode", "--prefill-n", "200", "--decode-n", "30", "--generator", "drift",
        "--drift-rate", "0.01", "--drift-direction", "reverse", "--ramp-steps", "10",
        "--oracle", "--no-timing", "--quiet", "--out", str(out),
        "--save-workload", str(tmp_path / "wl"), *SMALL,
    ]
    assert main(argv) == 0
    df = pd.read_csv(out / "decode.csv")
    assert len(df) == 30
    assert df["final_recall@k"].notna().all()
    assert (out / "decode.extra.csv").exists()
    stats = json.loads((out / "decode_stats.json").read_text())
    assert stats["total"] == 230
    params = json.loads((tmp_path / "wl" / "workload.json").read_text())["params"]
    assert params["direction"] == "reverse" and params["ramp_steps"] == 10

    replay = tmp_path / "replay"
    argv = ["simulate-decode", "--workload", str(tmp_path / "wl"), "--codebook", "kmeans",
            "--no-timing", "--quiet", "--out", str(replay), *SMALL]
    assert main(argv) == 0
    assert set(pd.read_csv(replay / "decode.csv")["method"]) == {"kmeans"}


def test_check_priors(tmp_path):
    assert main(["check-priors", "--dim", "32", "--m", "4", "--samples", "500", "--out", str(tmp_path)]) == 0
    payload = json.loads((tmp_path / "priors.json").read_text())
    assert payload["status"] == "ok" and "passes" in payload


def test_bench_prior_check(tmp_path):
    assert main(["bench", "prior_check", "--samples", "300", "--out", str(tmp_path), *SMALL]) == 0
    assert (tmp_path / "prior_check.csv").exists()


def test_bad_dump_exit_code(tmp_path):
    bad = tmp_path / "bad.pkv"
    bad.write_bytes(b"XXXX" + b"\x00" * 8)
    assert main(["build", "--keys", str(bad), "--out", str(tmp_path), *SMALL]) == 2


def test_bad_config_exit_code(tmp_path):
    assert main(["build", "--n", "50", "--out", str(tmp_path), "--dim", "32", "--subspace-count", "3"]) == 2


def test_build_from_preset(tmp_path):
    assert main(["build", "--n", "600", "--preset", "math500", "--top-k", "10", "--out", str(tmp_path), "--quiet"]) == 0
    dumped = (tmp_path / "config.env").read_text()
    assert "update_granularity=256" in dumped and "full_attention_threshold=1024" in dumped
    assert json.loads((tmp_path / "build.json").read_text())["retrieval"] == 600 - 16 - 256


def test_unknown_preset_exit_code(tmp_path):
    assert main(["build", "--n", "50", "--preset", "nope", "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit):
        main(["build", "--n", "50", "--preset", "math500", "--config", "x.env", "--out", str(tmp_path)])
