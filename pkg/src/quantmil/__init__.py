"""Quantile bag representation for multiple instance learning."""

from .core import (
    DEFAULT_QUANTILES,
    HEP2_CLASSES,
    Bag,
    Dataset,
    MissingClassError,
    ProtocolError,
    QuantileSpec,
    validate_dataset,
)
from .representation import bag_minimax_rep, bag_quantile_rep, quantile_value, represent_dataset

__version__ = "0.1.0"
