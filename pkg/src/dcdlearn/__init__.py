"""Multi-order augmentation and cross-distance metric learning on synthetic re-ID data."""

from .errors import (
    ConfigError,
    DataError,
    DcdlError,
    LoadError,
    NumericalError,
    ParseError,
    SchemaError,
    ShapeError,
    UsageError,
)

__version__ = "0.1.0"
