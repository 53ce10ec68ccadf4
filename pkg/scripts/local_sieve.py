"""
Local-Sieve CLI

Subcommands:
    build            prefill an engine from PKV1 dumps (or a synthetic workload) and report regions
    query            static retrieval over a prefilled engine, one metrics row per query
    bench <name>     drift | alpha | tiers | ratio_vs_length | prior_check
    check-priors     Beta prior KS report for one (D, m)
    simulate-decode  replay a decode stream through the engine

모든 RetrievalConfig 필드는 --<field-with-dashes> 로 override 가능합니다.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path
from typing import Any, Dict, Optional

# 프로젝트 루트 경로 추가
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from src.analysis.priors import check_priors
from src.data.pkv import read_pkv
from src.models.engine import RetrievalEngine
from src.simulation.ablation import ABLATIONS, measure_static, run_ablation, run_decode, summarize_metrics, write_metrics
from src.simulation.kmeans_baseline import kmeans_coarse_baseline
from src.simulation.workload import gen_drift, gen_isotropic, load_workload, save_workload
from src.utils.config import RetrievalConfig, config_to_mapping, load_config, load_preset
from src.utils.errors import ConfigError, DegenerateInputError, PkvFormatError, SelectionError

logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger("local_sieve")


# ---------------------------
# argument plumbing
# ---------------------------
def add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("retrieval config")
    source = group.add_mutually_exclusive_group()
    source.add_argument("--config", type=str, default=None, help="key=value 설정 파일")
    source.add_argument("--preset", type=str, default=None, help="configs/presets 의 작업별 설정 (aime25, math500, ...)")
    for f in fields(RetrievalConfig):
        group.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}", type=str, default=None)


def config_from_args(args: argparse.Namespace) -> RetrievalConfig:
    overrides = {
        f.name: getattr(args, f"cfg_{f.name}")
        for f in fields(RetrievalConfig)
        if getattr(args, f"cfg_{f.name}", None) is not None
    }
    if getattr(args, "preset", None):
        return load_preset(args.preset, overrides=overrides)
    return load_config(args.config, overrides=overrides)


def out_dir(args: argparse.Namespace) -> Path:
    path = Path(args.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def dump_config(cfg: RetrievalConfig, path: Path) -> None:
    lines = [f"{k}={v}" for k, v in config_to_mapping(cfg).items()]
    path.write_text("\n".join(lines) + "\n")


def load_kv(args: argparse.Namespace, cfg: RetrievalConfig):
    if args.keys:
        keys = read_pkv(args.keys)
        values = read_pkv(args.values) if args.values else keys.copy()
        queries = read_pkv(args.queries) if getattr(args, "queries", None) else None
        logger.info("Loaded %d keys (dim=%d) from %s", keys.shape[0], keys.shape[1], args.keys)
        return keys, values, queries
    wl = gen_isotropic(args.n, cfg.dim, seed=args.seed, query_count=getattr(args, "query_count", 100))
    logger.info("Generated isotropic workload n=%d dim=%d seed=%d", args.n, cfg.dim, args.seed)
    return wl.prefill_keys, wl.prefill_values, wl.queries


# ---------------------------
# commands
# ---------------------------
def cmd_build(args: argparse.Namespace) -> Dict[str, Any]:
    cfg = config_from_args(args)
    keys, values, _ = load_kv(args, cfg)
    t0 = time.perf_counter()
    engine = RetrievalEngine.from_prefill(keys, values, cfg)
    stats = engine.stats()
    stats["build_seconds"] = time.perf_counter() - t0
    stats["metadata_rows"] = len(engine.store.metadata)
    stats["dense"] = engine.dense

    out = out_dir(args)
    dump_config(cfg, out / "config.env")
    (out / "build.json").write_text(json.dumps(stats, indent=2))
    logger.info("Build summary: %s", stats)
    return stats


def cmd_query(args: argparse.Namespace) -> None:
    cfg = config_from_args(args)
    keys, values, queries = load_kv(args, cfg)
    if queries is None:
        raise SystemExit("--queries is required with --keys")
    engine = RetrievalEngine.from_prefill(keys, values, cfg)
    if engine.dense or engine.store.retrieval_len == 0:
        raise SystemExit("retrieval zone is empty or below full_attention_threshold; nothing to query")
    rows = measure_static("analytic", engine, keys, values, queries, record_time=not args.no_timing)
    df = write_metrics(rows, out_dir(args) / "query.csv")
    logger.info("Summary:\n%s", summarize_metrics(df).to_string(index=False))


def cmd_bench(args: argparse.Namespace) -> None:
    cfg = config_from_args(args)
    kwargs: Dict[str, Any] = {}
    if args.name != "prior_check":
        kwargs["record_time"] = not args.no_timing
        kwargs["progress"] = not args.quiet
    if args.name == "drift":
        kwargs.update(prefill_n=args.prefill_n, decode_n=args.decode_n, drift_rate=args.drift_rate,
                      prefill_mean_scale=args.prefill_mean_scale, ramp_steps=args.ramp_steps,
                      measure_last=args.measure_last, measure_every=args.measure_every)
    elif args.name in ("alpha", "tiers"):
        kwargs.update(n=args.n, query_count=args.query_count)
    elif args.name == "ratio_vs_length":
        kwargs.update(query_count=args.query_count)
        if args.lengths:
            kwargs["lengths"] = tuple(int(x) for x in args.lengths.split(","))
    elif args.name == "prior_check":
        kwargs["samples"] = args.samples
    out = out_dir(args)
    dump_config(cfg, out / f"{args.name}.config.env")
    run_ablation(args.name, cfg, out / f"{args.name}.csv", seed=args.seed, **kwargs)


def cmd_check_priors(args: argparse.Namespace) -> None:
    report = check_priors(args.dim, args.m, samples=args.samples, seed=args.seed)
    payload = report.to_dict()
    payload["passes"] = report.passes(args.bound)
    if args.out:
        path = out_dir(args) / "priors.json"
        path.write_text(json.dumps(payload, indent=2))
        logger.info("Prior report written: %s", path)
    logger.info("Prior report: %s", payload)


def cmd_simulate_decode(args: argparse.Namespace) -> None:
    cfg = config_from_args(args)
    if args.oracle:
        cfg = cfg.replace(oracle_enabled=True)
    if args.workload:
        wl = load_workload(args.workload)
    elif args.drift_rate > 0 or args.generator == "drift":
        wl = gen_drift(
            args.prefill_n, args.decode_n, args.drift_rate, seed=args.seed, dim=cfg.dim,
            direction=args.drift_direction, ramp_steps=args.ramp_steps,
        )
    else:
        wl = gen_isotropic(args.prefill_n, cfg.dim, seed=args.seed, decode_n=args.decode_n)
    if args.save_workload:
        save_workload(wl, args.save_workload)

    codebook = None
    if args.codebook == "kmeans":
        codebook = kmeans_coarse_baseline(wl.prefill_keys, cfg.centroid_count, cfg, seed=args.seed)
    engine = RetrievalEngine.from_prefill(wl.prefill_keys, wl.prefill_values, cfg, codebook=codebook)
    rows = run_decode(
        args.codebook, engine, wl,
        measure_every=args.measure_every,
        record_time=not args.no_timing,
        progress=not args.quiet,
    )
    engine.store.sync()
    engine.regions().validate(cfg)
    out = out_dir(args)
    df = write_metrics(rows, out / "decode.csv")
    (out / "decode_stats.json").write_text(json.dumps(engine.stats(), indent=2))
    logger.info("Engine stats: %s", engine.stats())
    if len(df):
        logger.info("Summary:\n%s", summarize_metrics(df).to_string(index=False))


# ---------------------------
# parser
# ---------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Local-Sieve KV retrieval engine / bench harness")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, config: bool = True) -> None:
        p.add_argument("--seed", type=int, default=0, help="workload seed (재현성)")
        p.add_argument("--out", type=str, default="results", help="출력 디렉토리")
        p.add_argument("--no-timing", action="store_true", help="wall_time 을 0 으로 기록 (byte 단위 재현)")
        p.add_argument("--quiet", action="store_true", help="progress bar 끄기")
        if config:
            add_config_flags(p)

    p = sub.add_parser("build", help="prefill engine and report regions")
    common(p)
    p.add_argument("--keys", type=str, default=None, help="PKV1 keys dump")
    p.add_argument("--values", type=str, default=None, help="PKV1 values dump")
    p.add_argument("--n", type=int, default=10_000, help="synthetic prefill length when --keys is absent")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("query", help="static retrieval metrics")
    common(p)
    p.add_argument("--keys", type=str, default=None)
    p.add_argument("--values", type=str, default=None)
    p.add_argument("--queries", type=str, default=None)
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--query-count", type=int, default=100)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("bench", help="run one ablation")
    common(p)
    p.add_argument("name", choices=ABLATIONS)
    p.add_argument("--n", type=int, default=30_000)
    p.add_argument("--query-count", type=int, default=100)
    p.add_argument("--prefill-n", type=int, default=20_000)
    p.add_argument("--decode-n", type=int, default=20_000)
    p.add_argument("--drift-rate", type=float, default=None, help="default: 2 * prefill-mean-scale / ramp-steps")
    p.add_argument("--prefill-mean-scale", type=float, default=16.0)
    p.add_argument("--ramp-steps", type=int, default=2_000)
    p.add_argument("--measure-last", type=int, default=5_000)
    p.add_argument("--measure-every", type=int, default=50)
    p.add_argument("--lengths", type=str, default=None, help="comma separated n sweep")
    p.add_argument("--samples", type=int, default=100_000)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("check-priors", help="Beta prior KS report")
    common(p, config=False)
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--m", type=int, default=8)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--bound", type=float, default=0.02)
    p.set_defaults(func=cmd_check_priors)

    p = sub.add_parser("simulate-decode", help="replay a decode stream")
    common(p)
    p.add_argument("--workload", type=str, default=None, help="saved workload directory")
    p.add_argument("--save-workload", type=str, default=None)
    p.add_argument("--generator", choices=["isotropic", "drift"], default="isotropic")
    p.add_argument("--prefill-n", type=int, default=10_000)
    p.add_argument("--decode-n", type=int, default=1_000)
    p.add_argument("--drift-rate", type=float, default=0.0)
    p.add_argument("--drift-direction", choices=["random", "reverse"], default="random")
    p.add_argument("--ramp-steps", type=int, default=None, help="shift stops growing after this many steps")
    p.add_argument("--codebook", choices=["analytic", "kmeans"], default="analytic")
    p.add_argument("--measure-every", type=int, default=1)
    p.add_argument("--oracle", action="store_true", help="recall / output error per measured step")
    p.set_defaults(func=cmd_simulate_decode)
    return parser


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ConfigError, PkvFormatError, DegenerateInputError, SelectionError) as e:
        logger.error("%s: %s", type(e).__name__, e)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
