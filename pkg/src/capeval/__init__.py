"""Caption-evaluation toolkit: CLIPScore-family scoring over precomputed
embeddings, plus the statistical harnesses used to compare caption metrics
against human judgments."""

__version__ = "0.1.0"

from capeval.errors import (
    CapevalError,
    DataError,
    FormatError,
    LoadError,
    UndefinedStatisticError,
)

__all__ = [
    "CapevalError",
    "DataError",
    "FormatError",
    "LoadError",
    "UndefinedStatisticError",
    "__version__",
]
