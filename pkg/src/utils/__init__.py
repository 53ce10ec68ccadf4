"""Configuration and error types for Local-Sieve"""

from .config import RetrievalConfig, load_config
from .errors import ConfigError, DegenerateInputError, PkvFormatError, SelectionError

__all__ = ['RetrievalConfig', 'load_config', 'ConfigError', 'DegenerateInputError', 'PkvFormatError', 'SelectionError']
