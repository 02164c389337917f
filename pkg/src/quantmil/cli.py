"""Command-line entry point.

Subcommands follow the classification procedure stage by stage::

    quantmil extract   manifest.csv -o cells.csv
    quantmil represent cells.csv -o bags.csv --quantiles 0.1,0.11,0.5,1
    quantmil train     cells.csv -o model.json --level image
    quantmil eval      model.json test_cells.csv -o report
    quantmil cv        cells.csv -o cv_report --level image --threads 4
    quantmil synth     -o synth_cells.csv --preset shape-coded

Exit codes: 0 success, 2 usage, 3 ingestion, 4 schema/model mismatch,
5 protocol precondition.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import imaging
from .combine import COMBINERS
from .core import HEP2_CLASSES, Bag, Dataset, MissingClassError, ProtocolError, QuantileSpec
from .eval import (
    CLASSIFIERS,
    LEVELS,
    BagTable,
    PipelineConfig,
    evaluate_model,
    leave_one_bag_out_cv,
    report_json,
    train_pipeline,
)
from .io import (
    BAGS_FORMAT,
    FEATURES_FORMAT,
    CellRow,
    IngestionError,
    SavedModel,
    SchemaError,
    atomic_write,
    dataset_to_rows,
    format_bag_table,
    read_bag_table,
    read_feature_cache,
    read_manifest,
    read_model,
    sniff_format,
    write_feature_cache,
    write_model,
)
from .representation import represent_dataset
from .synth import PRESETS, generate, preset

log = logging.getLogger("quantmil")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INGESTION = 3
EXIT_SCHEMA = 4
EXIT_PROTOCOL = 5

THREADS_ENV = "QUANTMIL_THREADS"


def gabor_schema(bank: imaging.GaborBank) -> str:
    return f"gabor-v1;{bank.describe()}"


def synth_schema(dim: int) -> str:
    return f"synthetic-v1;dim={dim}"


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")


def _quantiles(text: str) -> QuantileSpec:
    try:
        return QuantileSpec.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


# --------------------------------------------------------------------------
# extract
# --------------------------------------------------------------------------


def _extract_one(row, bank):
    try:
        img = imaging.load_image(row.image_path)
        mask = imaging.load_mask(row.mask_path)
        if img.shape != mask.shape:
            raise ValueError(f"image {img.shape} and mask {mask.shape} differ in shape")
        return imaging.cell_features(img, mask, bank), None
    except Exception as exc:  # noqa: BLE001 - reported per row
        return None, f"line {row.line} ({row.image_id}/{row.cell_id}): {row.image_path}, {row.mask_path}: {exc}"


def cmd_extract(args) -> int:
    bank = imaging.GaborBank(args.sigmas, args.thetas, args.frequencies)
    rows = read_manifest(args.manifest)
    if args.subset:
        rows = [r for r in rows if r.split == args.subset]
    if not rows:
        raise IngestionError(f"{args.manifest}: no cells selected")

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(lambda r: _extract_one(r, bank), rows))
    else:
        results = [_extract_one(r, bank) for r in rows]

    errors = [err for _, err in results if err]
    if errors:
        raise IngestionError("feature extraction failed:\n" + "\n".join(errors))

    names = sorted({r.label_name for r in rows})
    if args.classes:
        names = list(args.classes.split(","))
    elif set(names) <= set(HEP2_CLASSES):
        names = list(HEP2_CLASSES)
    cells = [CellRow(r.image_id, r.cell_id, r.label_name, f) for r, (f, _) in zip(rows, results)]
    write_feature_cache(args.output, cells, names, gabor_schema(bank))
    log.info("wrote %d cells x %d features to %s", len(cells), bank.feature_dim, args.output)
    return EXIT_OK


# --------------------------------------------------------------------------
# represent
# --------------------------------------------------------------------------


def _bag_table(ds: Dataset, spec: QuantileSpec) -> BagTable:
    labels = np.array([-1 if b.label is None else b.label for b in ds.bags], dtype=np.int64)
    sizes = np.array([b.size for b in ds.bags], dtype=np.int64)
    return BagTable(tuple(ds.ids), represent_dataset(ds, spec), labels, sizes, ds.class_names)


def cmd_represent(args) -> int:
    cache = read_feature_cache(args.cache)
    ds = cache.dataset
    if not ds.bags:
        raise IngestionError(f"{args.cache}: no bags")
    text = format_bag_table(_bag_table(ds, args.quantiles), args.quantiles, ds.dim, cache.schema)
    atomic_write(args.output, text)
    log.info("wrote %d bags x %d values to %s", len(ds.bags), ds.dim * len(args.quantiles), args.output)
    return EXIT_OK


# --------------------------------------------------------------------------
# train / eval / cv
# --------------------------------------------------------------------------


def _load_data(path, config: PipelineConfig):
    """Return ``(data, schema, dim, config)``; bag files fix the quantile levels."""
    kind = sniff_format(path)
    if kind == FEATURES_FORMAT:
        cache = read_feature_cache(path)
        return cache.dataset, cache.schema, cache.dataset.dim, config
    if kind == BAGS_FORMAT:
        if config.level != "image":
            raise SchemaError(f"{path}: bag vectors can only feed the image-level pipeline")
        bf = read_bag_table(path)
        if np.any(bf.table.labels < 0):
            raise IngestionError(f"{path}: every bag needs a label")
        cfg = PipelineConfig.from_dict({**config.to_dict(), "quantiles": list(bf.spec.levels)})
        return bf.table, bf.schema, bf.dim, cfg
    raise IngestionError(f"{path}: unrecognized file format")


def _config(args, **overrides) -> PipelineConfig:
    values = dict(
        level=args.level,
        classifier=args.classifier,
        combiner=getattr(args, "combiner", "vote"),
        quantiles=args.quantiles,
        ridge=args.ridge,
        max_iter=args.max_iter,
        tol=args.tol,
        reg_strength=args.reg,
        seed=args.seed,
    )
    values.update(overrides)
    return PipelineConfig(**values)


def _write_report(prefix, result, config, extra=None) -> None:
    text = result.format()
    if prefix:
        prefix = Path(prefix)
        atomic_write(prefix.with_name(prefix.name + ".json"), report_json(result.to_report(config, extra)))
        atomic_write(prefix.with_name(prefix.name + ".txt"), text + "\n")
    print(text)


def cmd_train(args) -> int:
    data, schema, dim, config = _load_data(args.data, _config(args))
    model = train_pipeline(data, config)
    write_model(args.output, SavedModel(model, config, tuple(data.class_names), schema, dim))
    log.info("wrote %s model to %s", config.classifier, args.output)
    return EXIT_OK


def _relabel(data, model_classes):
    """Re-express ``data`` labels in the model's class order."""
    if tuple(data.class_names) == tuple(model_classes):
        return data
    index = {n: i for i, n in enumerate(model_classes)}
    unknown = set(data.class_names) - set(index)
    if unknown:
        raise SchemaError(f"data has classes unknown to the model: {sorted(unknown)}")
    remap = np.array([index[n] for n in data.class_names])
    if isinstance(data, BagTable):
        return BagTable(data.ids, data.X, remap[data.labels], data.sizes, tuple(model_classes))
    bags = tuple(
        Bag(b.id, b.instances, None if b.label is None else int(remap[b.label])) for b in data.bags
    )
    return Dataset(bags, tuple(model_classes), data.dim)


def cmd_eval(args) -> int:
    saved = read_model(args.model)
    config = PipelineConfig.from_dict({**saved.config.to_dict(), "combiner": args.combiner})
    data, schema, dim, config_data = _load_data(args.data, config)
    if schema != saved.feature_schema or dim != saved.feature_dim:
        raise SchemaError(
            f"feature schema mismatch: model expects {saved.feature_schema!r} (dim {saved.feature_dim}), "
            f"data has {schema!r} (dim {dim})"
        )
    if config_data.quantiles != config.quantiles:
        raise SchemaError(
            f"quantile mismatch: model uses {config.quantiles}, bag file has {config_data.quantiles}"
        )
    data = _relabel(data, saved.class_names)
    if isinstance(data, Dataset) and any(b.label is None for b in data.bags):
        raise IngestionError(f"{args.data}: evaluation needs labeled bags")
    result = evaluate_model(saved.model, data, config)
    _write_report(args.output, result, config)
    return EXIT_OK


def cmd_cv(args) -> int:
    data, _, _, config = _load_data(args.data, _config(args))
    result = leave_one_bag_out_cv(data, config, threads=args.threads, on_missing=args.on_missing)
    _write_report(args.output, result, config, {"protocol": "leave-one-bag-out"})
    return EXIT_OK


# --------------------------------------------------------------------------
# synth
# --------------------------------------------------------------------------


def cmd_synth(args) -> int:
    counts = args.bags_per_class
    counts = int(counts[0]) if len(counts) == 1 else tuple(int(c) for c in counts)
    cfg = preset(args.preset, args.classes, counts, args.n_min, args.n_max, args.dim, args.seed)
    names = HEP2_CLASSES if args.classes == len(HEP2_CLASSES) and args.hep2_names else None
    ds = generate(cfg, names)
    write_feature_cache(args.output, dataset_to_rows(ds), ds.class_names, synth_schema(ds.dim))
    log.info("wrote %d synthetic bags to %s", len(ds.bags), args.output)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _add_model_flags(p, with_combiner=True) -> None:
    p.add_argument("--level", choices=LEVELS, default="image",
                   help="image: quantile bag vectors + propagation; cell: per-cell baseline + combiner")
    p.add_argument("--classifier", choices=CLASSIFIERS, default="logistic")
    if with_combiner:
        p.add_argument("--combiner", choices=COMBINERS, default="vote")
    p.add_argument("--quantiles", type=_quantiles, default=QuantileSpec(), help="comma-separated levels in [0, 1]")
    p.add_argument("--ridge", type=float, default=1e-4, help="logistic L2 penalty")
    p.add_argument("--max-iter", type=int, default=5000)
    p.add_argument("--tol", type=float, default=1e-6, help="gradient-norm stopping tolerance")
    p.add_argument("--reg", type=float, default=1.0, help="L1-SVM regularization strength")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quantmil", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="Gabor features for every cell in a manifest")
    p.add_argument("manifest")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--sigmas", type=_float_list, default=imaging.DEFAULT_SIGMAS)
    p.add_argument("--thetas", type=_float_list, default=imaging.DEFAULT_THETAS)
    p.add_argument("--frequencies", type=_float_list, default=imaging.DEFAULT_FREQUENCIES)
    p.add_argument("--subset", help="keep only manifest rows whose split column equals this value")
    p.add_argument("--classes", help="comma-separated class names fixing the label order")
    p.add_argument("--threads", type=int, default=_default_threads())
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("represent", help="quantile bag vectors from a feature cache")
    p.add_argument("cache")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--quantiles", type=_quantiles, default=QuantileSpec())
    p.set_defaults(func=cmd_represent)

    p = sub.add_parser("train", help="train a classifier and save it")
    p.add_argument("data", help="feature cache, or bag-vector file for --level image")
    p.add_argument("-o", "--output", required=True)
    _add_model_flags(p, with_combiner=False)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved model on labeled data")
    p.add_argument("model")
    p.add_argument("data")
    p.add_argument("-o", "--output", help="report prefix; writes PREFIX.json and PREFIX.txt")
    p.add_argument("--combiner", choices=COMBINERS, default="vote")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cv", help="leave-one-bag-out cross-validation")
    p.add_argument("data")
    p.add_argument("-o", "--output", help="report prefix; writes PREFIX.json and PREFIX.txt")
    _add_model_flags(p)
    p.add_argument("--threads", type=int, default=_default_threads())
    p.add_argument("--on-missing", choices=("abort", "skip"), default="abort",
                   help="what to do with a fold whose training part lacks a class")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("synth", help="write a synthetic feature cache")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--preset", choices=PRESETS, default="shape-coded")
    p.add_argument("--classes", type=int, default=6)
    p.add_argument("--bags-per-class", type=_float_list, default=(5,),
                   help="one count, or one per class (e.g. 6,5,4,4,5,4)")
    p.add_argument("--n-min", type=int, default=13)
    p.add_argument("--n-max", type=int, default=119)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hep2-names", action="store_true", help="name 6 classes after the HEp-2 patterns")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except IngestionError as exc:
        print(f"quantmil: ingestion error: {exc}", file=sys.stderr)
        return EXIT_INGESTION
    except SchemaError as exc:
        print(f"quantmil: schema mismatch: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (ProtocolError, MissingClassError) as exc:
        print(f"quantmil: protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except ValueError as exc:
        print(f"quantmil: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
