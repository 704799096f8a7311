"""Semi-supervised hypersphere anomaly detection for limit-order-book data."""

from . import data, evalx, harness, nnet, objectives  # noqa: F401
from .errors import (  # noqa: F401
    ConfigError,
    DataError,
    DivergenceError,
    LobSadError,
    SchemaError,
    ShapeError,
)

__version__ = "0.1.0"
