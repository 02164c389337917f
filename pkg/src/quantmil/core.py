"""Data model shared by every stage: bags of instances, datasets, quantile levels."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

HEP2_CLASSES = (
    "centromere",
    "coarse speckled",
    "cytoplasmatic",
    "fine speckled",
    "homogeneous",
    "nucleolar",
)

DEFAULT_QUANTILES = (0.10, 0.11, 0.50, 1.00)


class QuantmilError(Exception):
    """Base class for errors raised by this package."""


class ProtocolError(QuantmilError):
    """An evaluation protocol cannot run on the given data (e.g. a singleton class)."""


class MissingClassError(ProtocolError):
    """A training set lacks one of the classes the model must predict."""


def _frozen_array(values, ndim: int) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Bag:
    """A labeled (or unlabeled) collection of instance feature vectors.

    Instances are kept as individual read-only vectors so that a malformed
    bag can still be built and then diagnosed by :func:`validate_dataset`.
    Use :attr:`X` for the stacked ``(n, d)`` matrix.
    """

    id: str
    instances: tuple
    label: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(
            self, "instances", tuple(_frozen_array(x, 1) for x in self.instances)
        )
        if self.label is not None:
            object.__setattr__(self, "label", int(self.label))

    @classmethod
    def from_matrix(cls, id: str, X, label: Optional[int] = None) -> "Bag":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError(f"bag {id}: instance matrix must be 2-d, got shape {X.shape}")
        return cls(id=id, instances=tuple(X), label=label)

    @property
    def size(self) -> int:
        return len(self.instances)

    @property
    def X(self) -> np.ndarray:
        if not self.instances:
            raise ValueError(f"bag {self.id}: empty bag")
        dims = {x.shape[0] for x in self.instances}
        if len(dims) != 1:
            raise ValueError(f"bag {self.id}: inconsistent dimension")
        X = np.stack(self.instances)
        X.setflags(write=False)
        return X


@dataclass(frozen=True)
class Dataset:
    bags: tuple
    class_names: tuple
    dim: int

    def __post_init__(self):
        object.__setattr__(self, "bags", tuple(self.bags))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        seen = set()
        for bag in self.bags:
            if bag.id in seen:
                raise ValueError(f"duplicate bag id {bag.id!r}")
            seen.add(bag.id)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def ids(self) -> list:
        return [b.id for b in self.bags]

    def labels(self) -> np.ndarray:
        if any(b.label is None for b in self.bags):
            raise ValueError("dataset contains unlabeled bags")
        return np.array([b.label for b in self.bags], dtype=np.int64)

    def bag(self, id: str) -> Bag:
        for b in self.bags:
            if b.id == id:
                return b
        raise KeyError(id)

    def subset(self, ids: Sequence[str]) -> "Dataset":
        index = {b.id: b for b in self.bags}
        return Dataset(tuple(index[i] for i in ids), self.class_names, self.dim)


@dataclass(frozen=True)
class QuantileSpec:
    levels: tuple = field(default=DEFAULT_QUANTILES)

    def __post_init__(self):
        levels = tuple(float(q) for q in self.levels)
        if not levels:
            raise ValueError("at least one quantile level is required")
        for q in levels:
            if not (0.0 <= q <= 1.0):
                raise ValueError(f"quantile level {q} outside [0, 1]")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError("quantile levels must be strictly increasing")
        object.__setattr__(self, "levels", levels)

    def __len__(self) -> int:
        return len(self.levels)

    @classmethod
    def parse(cls, text: str) -> "QuantileSpec":
        """Parse a comma-separated list such as ``"0.1,0.11,0.5,1"``."""
        try:
            levels = [float(t) for t in text.split(",") if t.strip()]
        except ValueError as exc:
            raise ValueError(f"cannot parse quantile list {text!r}") from exc
        return cls(tuple(levels))

    def __str__(self) -> str:
        return ",".join(repr(q) for q in self.levels)


def as_posterior(probs, atol: float = 1e-9) -> np.ndarray:
    """Validate a class posterior vector and return it as a float array."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("posterior must be a nonempty vector")
    if np.any(p < -atol) or np.any(p > 1 + atol) or not np.all(np.isfinite(p)):
        raise ValueError("posterior entries must lie in [0, 1]")
    if abs(p.sum() - 1.0) > atol:
        raise ValueError(f"posterior sums to {p.sum()!r}, not 1")
    return p


def validate_dataset(ds: Dataset, require_labels: bool = False) -> list:
    """Return a list of human-readable invariant violations (empty if valid)."""
    problems = []
    if ds.dim < 1:
        problems.append(f"dataset: dimension {ds.dim} < 1")
    if require_labels and ds.n_classes < 2:
        problems.append(f"dataset: {ds.n_classes} classes, at least 2 required")
    seen = set()
    for bag in ds.bags:
        if bag.id in seen:
            problems.append(f"bag {bag.id}: duplicate id")
        seen.add(bag.id)
        if bag.size == 0:
            problems.append(f"bag {bag.id}: empty bag")
        dims = {x.shape[0] for x in bag.instances}
        if len(dims) > 1:
            problems.append(f"bag {bag.id}: inconsistent dimension")
        elif dims and dims != {ds.dim}:
            problems.append(
                f"bag {bag.id}: dimension {dims.pop()} differs from dataset dimension {ds.dim}"
            )
        if any(not np.all(np.isfinite(x)) for x in bag.instances):
            problems.append(f"bag {bag.id}: non-finite feature value")
        if bag.label is None:
            if require_labels:
                problems.append(f"bag {bag.id}: missing label")
        elif not (0 <= bag.label < ds.n_classes):
            problems.append(f"bag {bag.id}: label {bag.label} outside 0..{ds.n_classes - 1}")
    return problems
