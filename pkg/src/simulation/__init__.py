"""Workloads, baselines and ablations for Local-Sieve"""

from .kmeans_baseline import KMeansCodebook
from .workload import Workload, gen_drift, gen_isotropic

__all__ = ['KMeansCodebook', 'Workload', 'gen_drift', 'gen_isotropic']
