"""Cattle activity classification from IMU data via spectrogram features and a small MLP."""

from cattle_tfd.errors import (
    CattleTfdError,
    DegenerateChannelError,
    EmptyDatasetError,
    ParseError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "CattleTfdError",
    "DegenerateChannelError",
    "EmptyDatasetError",
    "ParseError",
    "ValidationError",
    "__version__",
]
