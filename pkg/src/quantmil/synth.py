"""Synthetic bags for exercising the pipelines without the HEp-2 images.

Every instance is drawn from a per-class Gaussian body; with probability
``outlier_rate`` an instance is instead drawn uniformly from a wide symmetric
interval around the class location. Two presets are provided:

``mean-coded``
    classes differ in feature locations; any reasonable summary separates them.
``shape-coded``
    all classes share location 0 and differ only in spread and outlier rate,
    so the median carries no class information but low and high quantiles do.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Bag, Dataset

PRESETS = ("shape-coded", "mean-coded")


@dataclass(frozen=True)
class ClassSpec:
    loc: tuple
    scale: tuple
    outlier_rate: float = 0.0
    outlier_width: float = 8.0

    def __post_init__(self):
        object.__setattr__(self, "loc", tuple(float(v) for v in self.loc))
        object.__setattr__(self, "scale", tuple(float(v) for v in self.scale))
        if len(self.loc) != len(self.scale):
            raise ValueError("loc and scale must have the same length")
        if any(s <= 0 for s in self.scale):
            raise ValueError("scales must be positive")
        if not (0.0 <= self.outlier_rate <= 1.0):
            raise ValueError("outlier_rate must lie in [0, 1]")


@dataclass(frozen=True)
class SynthConfig:
    classes: tuple
    bags_per_class: object = 5  # int, or one count per class
    n_min: int = 13
    n_max: int = 119
    bag_jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if len(self.classes) < 2:
            raise ValueError("at least 2 classes are required")
        if len({len(c.loc) for c in self.classes}) != 1:
            raise ValueError("all classes must share one dimension")
        if self.n_min < 1 or self.n_max < self.n_min:
            raise ValueError(f"invalid bag size range [{self.n_min}, {self.n_max}]")
        counts = self.bag_counts
        if len(counts) != len(self.classes):
            raise ValueError("bags_per_class needs one count per class")
        if min(counts) < 1:
            raise ValueError("bags_per_class must be at least 1")
        if self.bag_jitter < 0:
            raise ValueError("bag_jitter must be non-negative")

    @property
    def dim(self) -> int:
        return len(self.classes[0].loc)

    @property
    def bag_counts(self) -> tuple:
        if isinstance(self.bags_per_class, (int, np.integer)):
            return (int(self.bags_per_class),) * len(self.classes)
        return tuple(int(k) for k in self.bags_per_class)

    @property
    def n_classes(self) -> int:
        return len(self.classes)


def preset(
    name: str,
    n_classes: int = 6,
    bags_per_class=5,
    n_min: int = 13,
    n_max: int = 119,
    dim: int = 16,
    seed: int = 0,
) -> SynthConfig:
    """Build a :class:`SynthConfig` whose class distributions are drawn from ``seed``."""
    rng = np.random.default_rng([seed, 1])
    classes = []
    for _ in range(n_classes):
        if name == "shape-coded":
            classes.append(
                ClassSpec(
                    loc=np.zeros(dim),
                    scale=np.exp(rng.uniform(np.log(0.4), np.log(2.5), dim)),
                    outlier_rate=float(rng.choice([0.0, 0.05, 0.15])),
                )
            )
        elif name == "mean-coded":
            classes.append(ClassSpec(loc=rng.normal(0.0, 2.0, dim), scale=np.ones(dim)))
        else:
            raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}")
    jitter = 0.05 if name == "shape-coded" else 0.2
    if not isinstance(bags_per_class, int):
        bags_per_class = tuple(bags_per_class)
    return SynthConfig(tuple(classes), bags_per_class, n_min, n_max, jitter, seed)


def _draw_bag(rng, spec: ClassSpec, n: int, jitter: float) -> np.ndarray:
    loc = np.asarray(spec.loc) + jitter * rng.standard_normal(len(spec.loc))
    scale = np.asarray(spec.scale)
    X = loc + scale * rng.standard_normal((n, len(loc)))
    outliers = rng.random(n) < spec.outlier_rate
    if outliers.any():
        half = spec.outlier_width * scale
        X[outliers] = loc + rng.uniform(-half, half, (int(outliers.sum()), len(loc)))
    return X


def generate(config: SynthConfig, class_names=None) -> Dataset:
    """Labeled bags, class-major order, ids ``bag000, bag001, ...``."""
    if class_names is None:
        class_names = tuple(f"class{c}" for c in range(config.n_classes))
    if len(class_names) != config.n_classes:
        raise ValueError("one class name per class spec is required")
    rng = np.random.default_rng([config.seed, 0])
    bags = []
    for c, (spec, count) in enumerate(zip(config.classes, config.bag_counts)):
        for _ in range(count):
            n = int(rng.integers(config.n_min, config.n_max + 1))
            X = _draw_bag(rng, spec, n, config.bag_jitter)
            bags.append(Bag.from_matrix(f"bag{len(bags):03d}", X, c))
    return Dataset(tuple(bags), tuple(class_names), config.dim)
