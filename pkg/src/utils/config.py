"""
Retrieval Configuration Module

- RetrievalConfig: 검색 파이프라인 전체가 공유하는 불변 설정
- load_config: key=value 파일(python-dotenv) → 환경변수(SIEVE_*) → CLI override 순으로 병합
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

from dotenv import dotenv_values, load_dotenv

from .errors import ConfigError

logger = logging.getLogger(__name__)

ENV_PREFIX = "SIEVE_"

ScheduleEntry = Tuple[int, float, float]

DEFAULT_TIERS: Tuple[int, ...] = (6, 5, 4, 3, 2, 1)
DEFAULT_SCHEDULE: Tuple[ScheduleEntry, ...] = (
    (0, 0.25, 0.10),
    (20_000, 0.20, 0.08),
    (60_000, 0.15, 0.06),
    (200_000, 0.12, 0.05),
)

# pooled   : 모든 subspace 의 probe 를 query radius 가중 centroid score 로 한 줄로 세워 tier 분할
# subspace : subspace 별 probe list 를 각각 등분
TIER_RULES = ("pooled", "subspace")

PRESET_DIR = Path(__file__).resolve().parents[2] / "configs" / "presets"


def next_power_of_two(n: int) -> int:
    return 1 << (int(n) - 1).bit_length() if n > 1 else 1


@dataclass(frozen=True)
class RetrievalConfig:
    dim: int = 128
    subspace_count: int = 16
    radius_centroid_count: int = 1
    tier_bonuses: Tuple[int, ...] = DEFAULT_TIERS
    tier_rule: str = "pooled"
    rho_beta_schedule: Tuple[ScheduleEntry, ...] = DEFAULT_SCHEDULE
    sink_size: int = 16
    local_size: int = 256
    update_granularity: int = 512
    full_attention_threshold: int = 2048
    top_k: int = 100
    rotation_seed: int = 42

    alpha_correction: bool = True
    exact_codes: bool = False
    beta_override: Optional[float] = None
    weight_dtype: str = "float32"
    deferred_flush: bool = False
    oracle_enabled: bool = False
    cold_dir: Optional[str] = None
    attention_scale: Optional[float] = None
    chunk_size: int = 65_536

    def __post_init__(self):
        object.__setattr__(self, "tier_bonuses", tuple(int(b) for b in self.tier_bonuses))
        object.__setattr__(
            self,
            "rho_beta_schedule",
            tuple(sorted((int(n), float(r), float(b)) for n, r, b in self.rho_beta_schedule)),
        )
        self._validate()

    # ---------------------------
    # derived sizes
    # ---------------------------
    @property
    def padded_dim(self) -> int:
        return next_power_of_two(self.dim)

    @property
    def subspace_dim(self) -> int:
        return self.padded_dim // self.subspace_count

    @property
    def centroid_count(self) -> int:
        return 1 << self.subspace_dim

    @property
    def tier_count(self) -> int:
        return len(self.tier_bonuses)

    @property
    def max_bonus(self) -> int:
        return self.tier_bonuses[0]

    @property
    def max_score(self) -> int:
        return self.subspace_count * self.max_bonus

    @property
    def scale(self) -> float:
        return float(self.attention_scale) if self.attention_scale is not None else 1.0 / math.sqrt(self.dim)

    def replace(self, **changes: Any) -> "RetrievalConfig":
        values = asdict(self)
        values.update(changes)
        return RetrievalConfig(**values)

    # ---------------------------
    # validation
    # ---------------------------
    def _validate(self) -> None:
        positive = ("dim", "subspace_count", "radius_centroid_count", "top_k", "update_granularity", "chunk_size")
        for name in positive:
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("sink_size", "local_size", "full_attention_threshold"):
            if int(getattr(self, name)) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}")

        if self.padded_dim % self.subspace_count != 0:
            raise ConfigError(
                f"subspace_count {self.subspace_count} does not divide padded dim {self.padded_dim}"
            )
        m = self.subspace_dim
        if not 2 <= m <= 16:
            raise ConfigError(f"subspace dim m={m} outside [2, 16]")

        tiers = self.tier_bonuses
        if not tiers:
            raise ConfigError("tier_bonuses must not be empty")
        if any(b < 0 for b in tiers) or any(a <= b for a, b in zip(tiers, tiers[1:])):
            raise ConfigError(f"tier_bonuses must be strictly decreasing non-negative ints: {tiers}")
        if self.tier_rule not in TIER_RULES:
            raise ConfigError(f"tier_rule must be one of {TIER_RULES}, got {self.tier_rule!r}")
        if self.max_score > 65_535:
            raise ConfigError(f"max collision score {self.max_score} does not fit 16 bits")

        if not self.rho_beta_schedule:
            raise ConfigError("rho_beta_schedule must not be empty")
        for n, rho, beta in self.rho_beta_schedule:
            if n < 0 or not (0.0 < beta <= 1.0) or not (0.0 < rho <= 1.0):
                raise ConfigError(f"invalid schedule entry {(n, rho, beta)}")
            if rho < beta:
                raise ConfigError(f"schedule entry {(n, rho, beta)} violates rho >= beta")

        if self.beta_override is not None and not (0.0 < float(self.beta_override) <= 1.0):
            raise ConfigError(f"beta_override must be in (0, 1], got {self.beta_override}")
        if self.weight_dtype not in ("float32", "float16"):
            raise ConfigError(f"weight_dtype must be float32 or float16, got {self.weight_dtype}")
        if self.radius_centroid_count > 256:
            raise ConfigError("radius_centroid_count must fit in one byte")


# ---------------------------
# parsing
# ---------------------------
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse_bool(raw: str) -> bool:
    v = raw.strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise ConfigError(f"cannot parse boolean from {raw!r}")


def _parse_optional(raw: str, cast):
    v = raw.strip()
    if v == "" or v.lower() == "none":
        return None
    return cast(v)


def parse_tiers(raw: str) -> Tuple[int, ...]:
    return tuple(int(x) for x in raw.replace(" ", "").split(",") if x)


def parse_schedule(raw: str) -> Tuple[ScheduleEntry, ...]:
    """'0:0.15:0.10;20000:0.12:0.08' → ((0, .15, .10), (20000, .12, .08))"""
    out = []
    for chunk in raw.replace(" ", "").split(";"):
        if not chunk:
            continue
        parts = chunk.split(":")
        if len(parts) != 3:
            raise ConfigError(f"schedule entry must be n:rho:beta, got {chunk!r}")
        out.append((int(float(parts[0])), float(parts[1]), float(parts[2])))
    return tuple(out)


def format_schedule(schedule) -> str:
    return ";".join(f"{n}:{r:g}:{b:g}" for n, r, b in schedule)


_PARSERS = {
    "tier_bonuses": parse_tiers,
    "rho_beta_schedule": parse_schedule,
    "alpha_correction": _parse_bool,
    "exact_codes": _parse_bool,
    "deferred_flush": _parse_bool,
    "oracle_enabled": _parse_bool,
    "beta_override": lambda s: _parse_optional(s, float),
    "attention_scale": lambda s: _parse_optional(s, float),
    "cold_dir": lambda s: _parse_optional(s, str),
    "weight_dtype": str.strip,
    "tier_rule": str.strip,
}


def _coerce(name: str, value: Any) -> Any:
    if not isinstance(value, str):
        return value
    parser = _PARSERS.get(name)
    try:
        return parser(value) if parser else int(float(value))
    except ConfigError:
        raise
    except Exception as e:
        raise ConfigError(f"cannot parse {name}={value!r}: {e}") from e


def config_from_mapping(values: Mapping[str, Any], base: Optional[RetrievalConfig] = None) -> RetrievalConfig:
    known = {f.name for f in fields(RetrievalConfig)}
    changes: Dict[str, Any] = {}
    for raw_key, value in values.items():
        if value is None:
            continue
        key = raw_key.strip().lower().replace("-", "_")
        if key not in known:
            raise ConfigError(f"unknown config key: {raw_key}")
        changes[key] = _coerce(key, value)
    return (base or RetrievalConfig()).replace(**changes)


def config_to_mapping(cfg: RetrievalConfig) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for f in fields(RetrievalConfig):
        v = getattr(cfg, f.name)
        if f.name == "tier_bonuses":
            out[f.name] = ",".join(str(b) for b in v)
        elif f.name == "rho_beta_schedule":
            out[f.name] = format_schedule(v)
        else:
            out[f.name] = "none" if v is None else str(v)
    return out


def load_config(
    path: Optional[str] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    use_env: bool = True,
) -> RetrievalConfig:
    """
    설정 로드 (file → env → overrides)

    Args:
        path: 평문 key=value 설정 파일 경로 (None이면 생략)
        overrides: 마지막으로 적용할 값 (CLI 플래그)
        use_env: SIEVE_<FIELD> 환경변수 반영 여부

    Returns:
        검증된 RetrievalConfig
    """
    merged: Dict[str, Any] = {}

    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        merged.update({k: v for k, v in dotenv_values(p).items() if v is not None})
        logger.info("Config loaded from %s (%d keys)", p, len(merged))

    if use_env:
        load_dotenv(override=False)
        known = {f.name for f in fields(RetrievalConfig)}
        for name in known:
            env_v = os.getenv(ENV_PREFIX + name.upper())
            if env_v is not None:
                merged[name] = env_v

    if overrides:
        merged.update({k: v for k, v in overrides.items() if v is not None})

    return config_from_mapping(merged)


# ---------------------------
# task presets
# ---------------------------
def list_presets(directory: Optional[Path] = None) -> Tuple[str, ...]:
    directory = Path(directory) if directory is not None else PRESET_DIR
    return tuple(sorted(p.stem for p in directory.glob("*.env")))


def load_preset(
    name: str,
    overrides: Optional[Mapping[str, Any]] = None,
    directory: Optional[Path] = None,
) -> RetrievalConfig:
    """
    작업별 preset (configs/presets/<name>.env) 로드

    Args:
        name: preset 이름 (예: aime25, math500, gpqa_diamond, longbench_v2)
        overrides: preset 위에 덮어쓸 값
        directory: preset 디렉토리 (기본: configs/presets)

    Returns:
        검증된 RetrievalConfig
    """
    directory = Path(directory) if directory is not None else PRESET_DIR
    key = name.strip().lower().replace("-", "_")
    path = directory / f"{key}.env"
    if not path.exists():
        known = ", ".join(list_presets(directory)) or "none"
        raise ConfigError(f"unknown preset {name!r}; available: {known}")
    return load_config(str(path), overrides=overrides, use_env=False)
