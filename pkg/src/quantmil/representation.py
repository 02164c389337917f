"""Fixed-length bag vectors from per-feature order statistics.

A bag of ``n`` instances in ``d`` dimensions becomes a vector of length
``d * len(levels)``: for every feature, the values are sorted and the entry at
0-based index ``min(floor(q * n), n - 1)`` is taken for each level ``q``. No
interpolation is done, so every output entry is one of the bag's values. The
minimum/maximum representation is the special case ``levels = (0, 1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Bag, Dataset, QuantileSpec


@dataclass(frozen=True)
class BagVector:
    """Quantile summary of one bag, laid out feature-major.

    ``values[l * len(spec) + j]`` is the ``spec.levels[j]`` quantile of feature ``l``.
    """

    values: np.ndarray
    spec: QuantileSpec
    dim: int

    def by_feature(self) -> np.ndarray:
        return self.values.reshape(self.dim, len(self.spec))


def order_index(q: float, n: int) -> int:
    """0-based position in a sorted list of length ``n`` that holds quantile ``q``."""
    return min(int(math.floor(q * n)), n - 1)


def quantile_value(values, q: float) -> float:
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("cannot take a quantile of an empty sequence")
    if not (0.0 <= q <= 1.0):
        raise ValueError(f"quantile level {q} outside [0, 1]")
    s = np.sort(values)
    return float(s[order_index(q, s.size)])


def quantile_matrix(X, spec: QuantileSpec) -> np.ndarray:
    """Quantiles of each column of ``X`` as a ``(d, len(spec))`` array."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("need a nonempty (n, d) instance matrix")
    n = X.shape[0]
    idx = [order_index(q, n) for q in spec.levels]
    return np.sort(X, axis=0)[idx, :].T.copy()


def bag_quantile_rep(bag: Bag, spec: QuantileSpec | None = None) -> BagVector:
    spec = spec or QuantileSpec()
    X = bag.X
    values = quantile_matrix(X, spec).ravel()
    values.setflags(write=False)
    return BagVector(values=values, spec=spec, dim=X.shape[1])


def bag_minimax_rep(bag: Bag) -> np.ndarray:
    """``[min_1, max_1, ..., min_d, max_d]`` over the bag's instances."""
    X = bag.X
    out = np.empty(2 * X.shape[1])
    out[0::2] = X.min(axis=0)
    out[1::2] = X.max(axis=0)
    return out


def represent_dataset(ds: Dataset, spec: QuantileSpec | None = None) -> np.ndarray:
    """Stack the quantile vectors of all bags into an ``(n_bags, d * |Q|)`` matrix."""
    spec = spec or QuantileSpec()
    if not ds.bags:
        return np.empty((0, ds.dim * len(spec)))
    return np.stack([bag_quantile_rep(b, spec).values for b in ds.bags])
