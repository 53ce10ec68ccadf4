"""
Error types for Local-Sieve

모두 내장 예외를 상속하므로 호출 측에서는 ValueError / IndexError 로도 잡을 수 있습니다.
"""


class DegenerateInputError(ValueError):
    """Zero-norm (or otherwise unusable) vector at the API boundary."""


class ConfigError(ValueError):
    """RetrievalConfig validation or parsing failure."""


class SelectionError(IndexError):
    """Fetch of an index outside the retrieval zone (a selection bug)."""


class PkvFormatError(ValueError):
    """Malformed PKV1 dump."""
