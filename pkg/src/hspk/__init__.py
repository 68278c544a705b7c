"""Speckle-to-image reconstruction through a simulated multimode fiber with histogram-aware losses."""

from hspk.errors import (
    CapacityError,
    ConfigError,
    ContractError,
    DimensionError,
    FormatError,
    HspkError,
    NumericError,
)

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "ConfigError",
    "ContractError",
    "DimensionError",
    "FormatError",
    "HspkError",
    "NumericError",
    "__version__",
]
