"""Candidate generation, reranking and the retrieval engine for Local-Sieve"""

from .coarse import CandidateGenerator
from .engine import RetrievalEngine
from .rerank import CandidateRanker

__all__ = ['CandidateGenerator', 'CandidateRanker', 'RetrievalEngine']
