"""Moving labels between cells and images.

Cell predictions are combined into an image label by majority vote or by the
mean / product of cell posteriors; an image label is pushed back down to its
cells by propagation. All argmax ties resolve to the lowest class index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import as_posterior

PRODUCT_EPS = 1e-12


@dataclass(frozen=True)
class BagPrediction:
    bag_id: str
    predicted: int
    combiner: str
    posteriors: Optional[np.ndarray] = None


def majority_vote(instance_labels, n_classes: int | None = None) -> int:
    labels = np.asarray(instance_labels, dtype=np.int64).ravel()
    if labels.size == 0:
        raise ValueError("cannot vote over an empty list")
    counts = np.bincount(labels, minlength=n_classes or 0)
    return int(np.argmax(counts))


def _stack(posteriors) -> np.ndarray:
    rows = [as_posterior(p) for p in posteriors]
    if not rows:
        raise ValueError("cannot combine an empty list of posteriors")
    return np.stack(rows)


def _column_sums(M) -> np.ndarray:
    # summing in sorted order makes the result depend only on each column's multiset,
    # so input order cannot perturb exact ties
    return np.sort(M, axis=0).sum(axis=0)


def mean_rule(posteriors) -> int:
    P = _stack(posteriors)
    return int(np.argmax(_column_sums(P) / P.shape[0]))


def product_rule(posteriors) -> int:
    """Argmax of the summed log-posteriors, floored at ``PRODUCT_EPS``."""
    return int(np.argmax(_column_sums(np.log(_stack(posteriors) + PRODUCT_EPS))))


def propagate(bag_label: int, n: int) -> list:
    if n < 1:
        raise ValueError("a bag must contain at least one instance")
    return [int(bag_label)] * n


COMBINERS = ("vote", "mean", "product")


def combine(name: str, labels=None, posteriors=None, n_classes: int | None = None) -> int:
    """Dispatch to one of :data:`COMBINERS`."""
    if name == "vote":
        if labels is None:
            labels = np.argmax(_stack(posteriors), axis=1)
        return majority_vote(labels, n_classes)
    if name == "mean":
        return mean_rule(posteriors)
    if name == "product":
        return product_rule(posteriors)
    raise ValueError(f"unknown combiner {name!r}; choose from {COMBINERS}")
