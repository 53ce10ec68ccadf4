"""
Rotation Prior Checks

회전된 random unit vector 의 subspace 에너지와 좌표 분포가 Beta prior 를 따르는지 KS 검정
- z_b = r_b^2          ~ Beta(m/2, (D-m)/2)
- (u_b)_j^2            ~ Beta(1/2, (m-1)/2)
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional

import numpy as np
from scipy import stats

from ..data.transform import normalize_rows, rotate, split_polar_rows
from ..utils.config import next_power_of_two

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PriorReport:
    dim: int
    subspace_dim: int
    samples: int
    status: str                       # "ok" | "degenerate"
    ks_energy: Optional[float]
    p_energy: Optional[float]
    ks_coordinate: Optional[float]
    p_coordinate: Optional[float]
    energy_prior: str
    coordinate_prior: str

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def passes(self, bound: float = 0.02) -> bool:
        if self.status == "degenerate":
            return True
        coordinate_ok = self.ks_coordinate is None or self.ks_coordinate < bound
        return self.ks_energy < bound and coordinate_ok


def check_priors(dim: int, m: int, samples: int = 100_000, seed: int = 0, rotation_seed: int = 42) -> PriorReport:
    """
    Beta prior KS 리포트

    Args:
        dim: 원래 차원 (2의 거듭제곱이 아니면 padding 후 사용)
        m: subspace dimension
        samples: random unit vector 수
        seed: 샘플 RNG seed
        rotation_seed: SRHT seed

    Returns:
        PriorReport (m == padded dim 이면 status="degenerate")
    """
    padded = next_power_of_two(dim)
    if m < 1 or padded % m:
        raise ValueError(f"m={m} does not divide padded dim {padded}")
    B = padded // m
    a_z, b_z = m / 2.0, (padded - m) / 2.0
    a_u, b_u = 0.5, (m - 1) / 2.0
    energy_prior = f"Beta({a_z:g},{b_z:g})"
    coordinate_prior = f"Beta({a_u:g},{b_u:g})"

    if B == 1:
        logger.info("check_priors: m == D, z_b is identically 1 (degenerate)")
        return PriorReport(padded, m, samples, "degenerate", None, None, None, None, energy_prior, coordinate_prior)

    rng = np.random.default_rng(int(seed))
    x = rng.standard_normal((int(samples), int(dim)), dtype=np.float32)
    unit, _ = normalize_rows(x)
    radii, dirs = split_polar_rows(rotate(unit, rotation_seed), B)

    z = (radii.astype(np.float64) ** 2).ravel()
    u2 = (dirs.astype(np.float64) ** 2).ravel()
    ks_z = stats.kstest(z, stats.beta(a_z, b_z).cdf)
    if m == 1:
        ks_u = None
    else:
        ks_u = stats.kstest(u2, stats.beta(a_u, b_u).cdf)

    report = PriorReport(
        dim=padded,
        subspace_dim=m,
        samples=int(samples),
        status="ok",
        ks_energy=float(ks_z.statistic),
        p_energy=float(ks_z.pvalue),
        ks_coordinate=None if ks_u is None else float(ks_u.statistic),
        p_coordinate=None if ks_u is None else float(ks_u.pvalue),
        energy_prior=energy_prior,
        coordinate_prior=coordinate_prior,
    )
    logger.info("check_priors D=%d m=%d: KS(z)=%.4f KS(u^2)=%s", padded, m, report.ks_energy, report.ks_coordinate)
    return report
