"""Vector transform, codebook, quantizer and tiered storage for Local-Sieve"""

from .codebook import AnalyticCodebook, ProbeList
from .quantizer import MagnitudeLevels, design_levels
from .store import ColdArena, FileColdArena, RegionMap, TieredStore
from .transform import TransformedVector, transform_vector

__all__ = [
    'AnalyticCodebook', 'ProbeList', 'MagnitudeLevels', 'design_levels',
    'ColdArena', 'FileColdArena', 'RegionMap', 'TieredStore',
    'TransformedVector', 'transform_vector',
]
