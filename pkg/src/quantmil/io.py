"""On-disk formats: cell manifest, feature cache, bag-vector table, model file.

Caches and bag tables are CSV with a block of ``# key=value`` header lines.
Reals are written with 17 significant digits, so files round-trip exactly and
identical inputs give byte-identical outputs.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .classify import L1SvmOvaModel, LogisticConfig, LogisticModel, Standardizer
from .core import Bag, Dataset, QuantileSpec, QuantmilError
from .eval import BagTable, PipelineConfig

FEATURES_FORMAT = "quantmil-features"
BAGS_FORMAT = "quantmil-bags"
MODEL_FORMAT = "quantmil-model"
FORMAT_VERSION = 1

MANIFEST_COLUMNS = ("image_id", "cell_id", "label_name", "image_path", "mask_path")


class IngestionError(QuantmilError):
    """An input file is missing, unreadable or malformed."""


class SchemaError(QuantmilError):
    """Two artifacts were produced under incompatible feature schemas or versions."""


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def atomic_write(path, text: str) -> None:
    """Write ``text`` to a temporary sibling file, then rename it over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------------
# Manifest
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRow:
    image_id: str
    cell_id: str
    label_name: str
    image_path: Path
    mask_path: Path
    split: Optional[str] = None
    line: int = 0


def read_manifest(path, check_files: bool = True) -> list:
    """Read a manifest CSV; relative file paths resolve against the manifest's directory."""
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            missing = [c for c in MANIFEST_COLUMNS if c not in (reader.fieldnames or [])]
            if missing:
                raise IngestionError(f"{path}: manifest lacks columns {missing}")
            raw = list(reader)
    except OSError as exc:
        raise IngestionError(f"{path}: {exc}") from exc

    base = path.parent
    rows, labels, errors = [], {}, []
    for i, r in enumerate(raw, start=2):
        row = ManifestRow(
            image_id=r["image_id"],
            cell_id=r["cell_id"],
            label_name=r["label_name"],
            image_path=base / r["image_path"],
            mask_path=base / r["mask_path"],
            split=(r.get("split") or None),
            line=i,
        )
        first = labels.setdefault(row.image_id, row.label_name)
        if first != row.label_name:
            errors.append(
                f"{path}:{i}: image {row.image_id} has cells labeled {first!r} and {row.label_name!r}"
            )
        if check_files:
            for p in (row.image_path, row.mask_path):
                if not p.is_file():
                    errors.append(f"{path}:{i}: file not found: {p}")
        rows.append(row)
    if errors:
        raise IngestionError("\n".join(errors))
    return rows


# --------------------------------------------------------------------------
# Header helpers
# --------------------------------------------------------------------------


def _header_lines(meta: dict) -> list:
    return [f"# {k}={v}" for k, v in meta.items()]


def _split_header(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestionError(f"{path}: {exc}") from exc
    meta, body = {}, []
    for line in text.splitlines():
        if line.startswith("# ") and not body:
            key, _, value = line[2:].partition("=")
            meta[key.strip()] = value
        else:
            body.append(line)
    return meta, list(csv.reader(body))


def _encode_classes(names) -> str:
    for n in names:
        if "|" in n or "\n" in n:
            raise ValueError(f"class name {n!r} may not contain '|' or newlines")
    return "|".join(names)


def _check_format(path, meta, expected):
    fmt_, _, version = meta.get("format", "").partition(" ")
    if fmt_ != expected:
        raise IngestionError(f"{path}: not a {expected} file (format={meta.get('format')!r})")
    if version != str(FORMAT_VERSION):
        raise SchemaError(f"{path}: {expected} version {version!r}, expected {FORMAT_VERSION}")


def sniff_format(path) -> str:
    meta, _ = _split_header(path)
    return meta.get("format", "").partition(" ")[0]


# --------------------------------------------------------------------------
# Feature cache: one row per cell
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CellRow:
    image_id: str
    cell_id: str
    label: str
    features: np.ndarray


def format_feature_cache(rows, class_names, schema: str) -> str:
    rows = list(rows)
    dim = len(rows[0].features) if rows else 0
    out = io.StringIO()
    meta = {
        "format": f"{FEATURES_FORMAT} {FORMAT_VERSION}",
        "dim": dim,
        "schema": schema,
        "classes": _encode_classes(class_names),
    }
    out.write("\n".join(_header_lines(meta)) + "\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["image_id", "cell_id", "label"] + [f"f{k}" for k in range(dim)])
    for r in rows:
        w.writerow([r.image_id, r.cell_id, r.label] + [fmt(v) for v in r.features])
    return out.getvalue()


def write_feature_cache(path, rows, class_names, schema: str) -> None:
    atomic_write(path, format_feature_cache(rows, class_names, schema))


def dataset_to_rows(ds: Dataset) -> list:
    rows = []
    for bag in ds.bags:
        label = ds.class_names[bag.label] if bag.label is not None else ""
        for k, x in enumerate(bag.instances):
            rows.append(CellRow(bag.id, f"{bag.id}-{k:03d}", label, x))
    return rows


@dataclass(frozen=True)
class FeatureCache:
    dataset: Dataset
    schema: str


def read_feature_cache(path) -> FeatureCache:
    """Load a cache as a :class:`Dataset`, grouping rows by image id in first-seen order."""
    meta, rows = _split_header(path)
    _check_format(path, meta, FEATURES_FORMAT)
    try:
        dim = int(meta["dim"])
        classes = tuple(meta["classes"].split("|")) if meta.get("classes") else ()
        schema = meta["schema"]
    except (KeyError, ValueError) as exc:
        raise IngestionError(f"{path}: bad header: {exc}") from exc
    if not rows or rows[0][:3] != ["image_id", "cell_id", "label"]:
        raise IngestionError(f"{path}: missing column header row")
    index = {name: i for i, name in enumerate(classes)}
    groups, labels = {}, {}
    for lineno, r in enumerate(rows[1:], start=len(meta) + 2):
        if not r:
            continue
        if len(r) != dim + 3:
            raise IngestionError(f"{path}:{lineno}: expected {dim + 3} columns, got {len(r)}")
        image_id, _, label = r[:3]
        try:
            x = np.array([float(v) for v in r[3:]])
        except ValueError as exc:
            raise IngestionError(f"{path}:{lineno}: {exc}") from exc
        if label and label not in index:
            raise IngestionError(f"{path}:{lineno}: unknown label {label!r}")
        if labels.setdefault(image_id, label) != label:
            raise IngestionError(f"{path}:{lineno}: image {image_id} has mixed labels")
        groups.setdefault(image_id, []).append(x)
    bags = tuple(
        Bag(id=i, instances=tuple(xs), label=index[labels[i]] if labels[i] else None)
        for i, xs in groups.items()
    )
    return FeatureCache(Dataset(bags, classes, dim), schema)


# --------------------------------------------------------------------------
# Bag-vector table: one row per image
# --------------------------------------------------------------------------


def format_bag_table(table: BagTable, spec: QuantileSpec, dim: int, schema: str) -> str:
    out = io.StringIO()
    meta = {
        "format": f"{BAGS_FORMAT} {FORMAT_VERSION}",
        "dim": dim,
        "quantiles": str(spec),
        "schema": schema,
        "classes": _encode_classes(table.class_names),
    }
    out.write("\n".join(_header_lines(meta)) + "\n")
    w = csv.writer(out, lineterminator="\n")
    cols = [f"f{l}@{q!r}" for l in range(dim) for q in spec.levels]
    w.writerow(["image_id", "label", "n_instances"] + cols)
    for i, bag_id in enumerate(table.ids):
        label = table.class_names[table.labels[i]] if table.labels[i] >= 0 else ""
        w.writerow([bag_id, label, int(table.sizes[i])] + [fmt(v) for v in table.X[i]])
    return out.getvalue()


@dataclass(frozen=True)
class BagFile:
    table: BagTable
    spec: QuantileSpec
    dim: int
    schema: str


def read_bag_table(path) -> BagFile:
    meta, rows = _split_header(path)
    _check_format(path, meta, BAGS_FORMAT)
    try:
        dim = int(meta["dim"])
        spec = QuantileSpec.parse(meta["quantiles"])
        classes = tuple(meta["classes"].split("|"))
        schema = meta["schema"]
    except (KeyError, ValueError) as exc:
        raise IngestionError(f"{path}: bad header: {exc}") from exc
    width = dim * len(spec)
    index = {name: i for i, name in enumerate(classes)}
    ids, X, labels, sizes = [], [], [], []
    for lineno, r in enumerate(rows[1:], start=len(meta) + 2):
        if not r:
            continue
        if len(r) != width + 3:
            raise IngestionError(f"{path}:{lineno}: expected {width + 3} columns, got {len(r)}")
        if r[1] not in index:
            raise IngestionError(f"{path}:{lineno}: unknown label {r[1]!r}")
        ids.append(r[0])
        labels.append(index[r[1]])
        sizes.append(int(r[2]))
        X.append([float(v) for v in r[3:]])
    table = BagTable(
        tuple(ids),
        np.array(X, dtype=np.float64).reshape(len(ids), width),
        np.array(labels, dtype=np.int64),
        np.array(sizes, dtype=np.int64),
        classes,
    )
    return BagFile(table, spec, dim, schema)


# --------------------------------------------------------------------------
# Model file
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SavedModel:
    model: object
    config: PipelineConfig
    class_names: tuple
    feature_schema: str
    feature_dim: int


def format_model(saved: SavedModel) -> str:
    m = saved.model
    kind = "logistic" if isinstance(m, LogisticModel) else "l1svm"
    doc = {
        "format": MODEL_FORMAT,
        "version": FORMAT_VERSION,
        "kind": kind,
        "feature_schema": saved.feature_schema,
        "feature_dim": saved.feature_dim,
        "class_names": list(saved.class_names),
        "pipeline": saved.config.to_dict(),
        "standardization": {"mean": m.scaler.mean.tolist(), "std": m.scaler.std.tolist()},
        "weights": m.weights.tolist(),
    }
    if kind == "logistic":
        doc["n_iter"] = m.n_iter
    return json.dumps(doc, indent=1) + "\n"


def write_model(path, saved: SavedModel) -> None:
    atomic_write(path, format_model(saved))


def read_model(path) -> SavedModel:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise IngestionError(f"{path}: cannot read model: {exc}") from exc
    if doc.get("format") != MODEL_FORMAT:
        raise IngestionError(f"{path}: not a {MODEL_FORMAT} file")
    if doc.get("version") != FORMAT_VERSION:
        raise SchemaError(f"{path}: model version {doc.get('version')!r}, expected {FORMAT_VERSION}")
    config = PipelineConfig.from_dict(doc["pipeline"])
    scaler = Standardizer(np.array(doc["standardization"]["mean"]), np.array(doc["standardization"]["std"]))
    W = np.array(doc["weights"], dtype=np.float64)
    W.setflags(write=False)
    if doc["kind"] == "logistic":
        lc = LogisticConfig(ridge=config.ridge, max_iter=config.max_iter, tol=config.tol, seed=config.seed)
        model = LogisticModel(W, scaler, lc, doc.get("n_iter", 0))
    elif doc["kind"] == "l1svm":
        model = L1SvmOvaModel(W, scaler, config.reg_strength)
    else:
        raise IngestionError(f"{path}: unknown model kind {doc['kind']!r}")
    return SavedModel(model, config, tuple(doc["class_names"]), doc["feature_schema"], int(doc["feature_dim"]))
