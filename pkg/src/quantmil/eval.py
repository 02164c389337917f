"""Evaluation protocols: fixed train/test split and leave-one-bag-out CV.

Two pipelines are supported:

``level="image"``
    Each bag is summarized by its quantile vector, a classifier is trained on
    bags, and the predicted bag label is propagated to every instance.
``level="cell"``
    A classifier is trained on individual instances (each inheriting its
    bag's label); instance predictions are combined into a bag label.

Both produce an instance-level and a bag-level confusion matrix and a
per-bag report. Cross-validation pools counts over folds.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .classify import LogisticConfig, train_l1svm_ova, train_logistic
from .combine import COMBINERS, combine, propagate
from .core import Dataset, MissingClassError, ProtocolError, QuantileSpec
from .representation import represent_dataset

LEVELS = ("image", "cell")
CLASSIFIERS = ("logistic", "l1svm")


@dataclass(frozen=True)
class PipelineConfig:
    level: str = "image"
    classifier: str = "logistic"
    combiner: str = "vote"
    quantiles: QuantileSpec = field(default_factory=QuantileSpec)
    ridge: float = 1e-4
    max_iter: int = 5000
    tol: float = 1e-6
    reg_strength: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ValueError(f"level must be one of {LEVELS}")
        if self.classifier not in CLASSIFIERS:
            raise ValueError(f"classifier must be one of {CLASSIFIERS}")
        if self.combiner not in COMBINERS:
            raise ValueError(f"combiner must be one of {COMBINERS}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["quantiles"] = list(self.quantiles.levels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        d["quantiles"] = QuantileSpec(tuple(d["quantiles"]))
        return cls(**d)


def fit_classifier(X, y, n_classes: int, config: PipelineConfig):
    """Train the configured classifier; the result has ``predict`` and ``predict_proba``."""
    if config.classifier == "logistic":
        lc = LogisticConfig(ridge=config.ridge, max_iter=config.max_iter, tol=config.tol, seed=config.seed)
        return train_logistic(X, y, n_classes, lc)
    return train_l1svm_ova(X, y, config.reg_strength, n_classes)


# --------------------------------------------------------------------------
# Result containers
# --------------------------------------------------------------------------


def _abbreviations(names: Sequence[str]) -> list:
    short = [n[:2].capitalize() for n in names]
    return short if len(set(short)) == len(short) else list(names)


@dataclass
class ConfusionMatrix:
    """Counts with rows = true class and columns = estimated class."""

    counts: np.ndarray
    class_names: tuple

    @classmethod
    def zeros(cls, class_names) -> "ConfusionMatrix":
        k = len(class_names)
        return cls(np.zeros((k, k), dtype=np.int64), tuple(class_names))

    def add(self, true: int, predicted: int, count: int = 1) -> None:
        self.counts[true, predicted] += count

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts, self.class_names)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def format(self, title: str = "") -> str:
        names = _abbreviations(self.class_names)
        w = max(4, max(len(n) for n in names) + 1, len(str(self.counts.max(initial=0))) + 1)
        lines = [title] if title else []
        lines.append("true".ljust(w) + "|" + "".join(n.rjust(w) for n in names))
        lines.append("-" * (w + 1 + w * len(names)))
        for n, row in zip(names, self.counts):
            lines.append(n.ljust(w) + "|" + "".join(str(v).rjust(w) for v in row))
        lines.append(f"{100 * accuracy(self):.2f}% correct" if self.total else "no items")
        return "\n".join(lines)


def accuracy(cm: ConfusionMatrix) -> float:
    total = cm.counts.sum()
    if total <= 0:
        raise ValueError("accuracy of an empty confusion matrix is undefined")
    return float(np.trace(cm.counts) / total)


@dataclass(frozen=True)
class SplitSpec:
    train: tuple
    test: tuple

    def validate(self, ids: Sequence[str]) -> None:
        train, test = set(self.train), set(self.test)
        if train & test:
            raise ValueError(f"train and test share bags: {sorted(train & test)}")
        if train | test != set(ids):
            raise ValueError("split does not cover exactly the dataset's bags")


@dataclass(frozen=True)
class ImageResult:
    """Outcome for one test bag; ``cell_counts[c]`` = instances predicted as class ``c``."""

    id: str
    true_label: int
    predicted: int
    cell_counts: tuple

    @property
    def n_cells(self) -> int:
        return int(sum(self.cell_counts))

    @property
    def correct(self) -> int:
        return int(self.cell_counts[self.true_label])

    @property
    def fraction(self) -> float:
        return self.correct / self.n_cells


@dataclass
class PerImageReport:
    rows: list
    class_names: tuple

    def to_dicts(self) -> list:
        return [
            {
                "id": r.id,
                "true_label": self.class_names[r.true_label],
                "predicted_label": self.class_names[r.predicted],
                "n_cells": r.n_cells,
                "correct": r.correct,
                "fraction": r.fraction,
            }
            for r in self.rows
        ]

    def format(self) -> str:
        wid = max([2] + [len(r.id) for r in self.rows])
        wl = max(len("true label"), *(len(n) for n in self.class_names))
        lines = [f"{'':>{wid}}  {'true label':<{wl}}  {'corr.':>5}  {'fraction':>8}"]
        for r in self.rows:
            lines.append(
                f"{r.id:>{wid}}  {self.class_names[r.true_label]:<{wl}}  {r.correct:>5}  {100 * r.fraction:>7.1f}%"
            )
        return "\n".join(lines)


@dataclass
class EvalResult:
    cell_cm: ConfusionMatrix
    image_cm: ConfusionMatrix
    per_image: PerImageReport
    folds: list = field(default_factory=list)

    @property
    def cell_accuracy(self) -> float:
        return accuracy(self.cell_cm)

    @property
    def image_accuracy(self) -> float:
        return accuracy(self.image_cm)

    def to_report(self, config: PipelineConfig, extra: Optional[dict] = None) -> dict:
        report = {"config": config.to_dict()}
        if extra:
            report["config"].update(extra)
        report.update(
            {
                "class_names": list(self.cell_cm.class_names),
                "folds": self.folds,
                "cell_confusion": self.cell_cm.counts.tolist(),
                "image_confusion": self.image_cm.counts.tolist(),
                "per_image": self.per_image.to_dicts(),
                "cell_accuracy": self.cell_accuracy if self.cell_cm.total else None,
                "image_accuracy": self.image_accuracy if self.image_cm.total else None,
            }
        )
        return report

    def format(self) -> str:
        return "\n\n".join(
            [
                self.cell_cm.format("cell level evaluation"),
                self.image_cm.format("image level evaluation"),
                self.per_image.format(),
            ]
        )


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=False) + "\n"


# --------------------------------------------------------------------------
# Bag tables: precomputed bag vectors for the image-level pipeline
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BagTable:
    """One row per bag: id, label, instance count and bag vector."""

    ids: tuple
    X: np.ndarray
    labels: np.ndarray
    sizes: np.ndarray
    class_names: tuple

    @classmethod
    def from_dataset(cls, ds: Dataset, spec: QuantileSpec) -> "BagTable":
        return cls(
            tuple(ds.ids),
            represent_dataset(ds, spec),
            ds.labels(),
            np.array([b.size for b in ds.bags], dtype=np.int64),
            ds.class_names,
        )

    def subset(self, ids: Sequence[str]) -> "BagTable":
        pos = {b: i for i, b in enumerate(self.ids)}
        idx = np.array([pos[i] for i in ids], dtype=np.int64)
        return BagTable(tuple(ids), self.X[idx], self.labels[idx], self.sizes[idx], self.class_names)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)


def _bag_labels(data) -> dict:
    if isinstance(data, BagTable):
        return dict(zip(data.ids, data.labels.tolist()))
    return {b.id: b.label for b in data.bags}


# --------------------------------------------------------------------------
# Protocols
# --------------------------------------------------------------------------


def _cell_training_data(train: Dataset):
    X = np.vstack([b.X for b in train.bags])
    y = np.concatenate([np.full(b.size, b.label) for b in train.bags])
    return X, y


def train_pipeline(data, config: PipelineConfig):
    """Fit the configured classifier on bags (image level) or on their instances (cell level)."""
    n_classes = len(data.class_names)
    if config.level == "image":
        if isinstance(data, Dataset):
            data = BagTable.from_dataset(data, config.quantiles)
        return fit_classifier(data.X, data.labels, n_classes, config)
    if isinstance(data, BagTable):
        raise ValueError("the cell-level pipeline needs instance data, not bag vectors")
    X, y = _cell_training_data(data)
    return fit_classifier(X, y, n_classes, config)


def predict_bags(model, data, config: PipelineConfig) -> list:
    """Apply a trained pipeline to every bag of ``data``; returns one :class:`ImageResult` per bag.

    Bags must be labeled, since results are scored against the true label.
    """
    n_classes = len(data.class_names)
    rows = []
    if config.level == "image":
        if isinstance(data, Dataset):
            data = BagTable.from_dataset(data, config.quantiles)
        predicted = model.predict(data.X) if len(data.ids) else np.empty(0, dtype=np.int64)
        for i, bag_id in enumerate(data.ids):
            pred = int(predicted[i])
            cells = propagate(pred, int(data.sizes[i]))
            counts = np.bincount(cells, minlength=n_classes)
            rows.append(ImageResult(bag_id, int(data.labels[i]), pred, tuple(counts.tolist())))
        return rows
    if isinstance(data, BagTable):
        raise ValueError("the cell-level pipeline needs instance data, not bag vectors")
    for bag in data.bags:
        labels = model.predict(bag.X)
        posteriors = model.predict_proba(bag.X) if config.combiner != "vote" else None
        pred = combine(config.combiner, labels=labels, posteriors=posteriors, n_classes=n_classes)
        counts = np.bincount(labels, minlength=n_classes)
        rows.append(ImageResult(bag.id, bag.label, pred, tuple(counts.tolist())))
    return rows


def evaluate_model(model, data, config: PipelineConfig) -> EvalResult:
    return _collect(predict_bags(model, data, config), data.class_names)


def _run(train_data, test_data, config: PipelineConfig) -> list:
    return predict_bags(train_pipeline(train_data, config), test_data, config)


def _collect(rows, class_names, folds=None) -> EvalResult:
    cell_cm = ConfusionMatrix.zeros(class_names)
    image_cm = ConfusionMatrix.zeros(class_names)
    for r in rows:
        image_cm.add(r.true_label, r.predicted)
        cell_cm.counts[r.true_label] += np.asarray(r.cell_counts, dtype=np.int64)
    return EvalResult(cell_cm, image_cm, PerImageReport(list(rows), tuple(class_names)), folds or [])


def _check_all_classes(data, ids, n_classes) -> None:
    labels = _bag_labels(data)
    present = {labels[i] for i in ids}
    if None in present:
        raise ValueError("training bags must be labeled")
    missing = sorted(set(range(n_classes)) - present)
    if missing:
        raise MissingClassError(f"training set has no bags of classes {missing}")


def evaluate_split(data, split: SplitSpec, config: PipelineConfig) -> EvalResult:
    """Train on ``split.train``, test on ``split.test``.

    ``data`` is a :class:`Dataset`, or a :class:`BagTable` for the image-level pipeline.
    """
    ids = list(data.ids)
    split.validate(ids)
    _check_all_classes(data, split.train, len(data.class_names))
    rows = _run(data.subset(split.train), data.subset(split.test), config)
    fold = {"fold": 0, "train": list(split.train), "test": list(split.test)}
    return _collect(rows, data.class_names, [fold])


def check_cv_preconditions(data) -> None:
    labels = _bag_labels(data)
    if len(labels) < 2:
        raise ProtocolError("leave-one-bag-out needs at least 2 bags")
    if any(v is None for v in labels.values()):
        raise ProtocolError("leave-one-bag-out needs every bag labeled")
    counts = np.bincount(list(labels.values()), minlength=len(data.class_names))
    thin = [data.class_names[c] for c in range(len(counts)) if counts[c] < 2]
    if thin:
        raise ProtocolError(f"classes with fewer than 2 bags cannot be cross-validated: {thin}")


def leave_one_bag_out_cv(
    data,
    config: PipelineConfig,
    threads: int = 1,
    on_missing: str = "abort",
) -> EvalResult:
    """One fold per bag, in dataset order; confusion counts are pooled over folds.

    With ``on_missing="abort"`` a class with fewer than two bags is a
    :class:`ProtocolError` raised before any fold runs. With ``"skip"`` the
    folds whose training part lacks a class are recorded as skipped and left
    out of the pooled counts.
    """
    if on_missing not in ("abort", "skip"):
        raise ValueError("on_missing must be 'abort' or 'skip'")
    if on_missing == "abort":
        check_cv_preconditions(data)
    elif len(data.ids) < 2:
        raise ProtocolError("leave-one-bag-out needs at least 2 bags")
    ids = list(data.ids)
    if config.level == "image" and isinstance(data, Dataset):
        data = BagTable.from_dataset(data, config.quantiles)

    def run_fold(k):
        test = [ids[k]]
        train = ids[:k] + ids[k + 1 :]
        try:
            _check_all_classes(data, train, len(data.class_names))
        except MissingClassError as exc:
            if on_missing == "abort":
                raise
            return None, str(exc)
        return _run(data.subset(train), data.subset(test), config), None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run_fold, range(len(ids))))
    else:
        outcomes = [run_fold(k) for k in range(len(ids))]

    rows, folds = [], []
    for k, (fold_rows, skipped) in enumerate(outcomes):
        entry = {"fold": k, "test": [ids[k]]}
        if skipped:
            entry["skipped"] = skipped
        else:
            r = fold_rows[0]
            entry.update(
                {
                    "true_label": data.class_names[r.true_label],
                    "predicted_label": data.class_names[r.predicted],
                    "n_cells": r.n_cells,
                    "correct": r.correct,
                }
            )
            rows.extend(fold_rows)
        folds.append(entry)
    return _collect(rows, data.class_names, folds)
