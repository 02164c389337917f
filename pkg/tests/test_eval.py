import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from quantmil.core import Bag, Dataset, MissingClassError, ProtocolError, QuantileSpec
from quantmil.eval import (
    BagTable,
    ConfusionMatrix,
    PipelineConfig,
    SplitSpec,
    accuracy,
    evaluate_split,
    leave_one_bag_out_cv,
    report_json,
)
from quantmil.synth import generate, preset

NAMES = ("Ce", "Co", "Cy", "Fi", "Ho", "Nu")
SPLIT_CELL_COUNTS = [
    [94, 0, 0, 1, 4, 50],
    [9, 29, 6, 49, 3, 5],
    [0, 3, 47, 0, 1, 0],
    [25, 8, 0, 39, 36, 6],
    [1, 2, 0, 30, 141, 6],
    [16, 1, 0, 1, 17, 104],
]
CV_CELL_COUNTS = [
    [357, 0, 0, 0, 0, 0],
    [0, 161, 0, 49, 0, 0],
    [0, 0, 109, 0, 0, 0],
    [0, 48, 0, 97, 63, 0],
    [0, 0, 0, 42, 288, 0],
    [66, 0, 0, 0, 0, 175],
]
CV_IMAGE_COUNTS = [
    [6, 0, 0, 0, 0, 0],
    [0, 4, 0, 1, 0, 0],
    [0, 0, 4, 0, 0, 0],
    [0, 1, 0, 2, 1, 0],
    [0, 0, 0, 1, 4, 0],
    [1, 0, 0, 0, 0, 3],
]


def cm(counts):
    return ConfusionMatrix(np.array(counts, dtype=np.int64), NAMES[: len(counts)])


@pytest.fixture(scope="module")
def separable():
    return generate(preset("mean-coded", n_classes=3, bags_per_class=4, dim=4, n_min=5, n_max=30, seed=3))


class TestAccuracy:
    def test_identity(self):
        assert accuracy(cm(np.eye(6, dtype=int) * 7)) == 1.0

    def test_reference_matrices(self):
        assert accuracy(cm(SPLIT_CELL_COUNTS)) == pytest.approx(0.6185, abs=5e-5)
        assert accuracy(cm(CV_CELL_COUNTS)) == pytest.approx(0.816, abs=5e-4)
        assert accuracy(cm(CV_IMAGE_COUNTS)) == pytest.approx(0.821, abs=5e-4)
        assert cm(CV_IMAGE_COUNTS).total == 28

    def test_empty(self):
        with pytest.raises(ValueError):
            accuracy(cm(np.zeros((3, 3), int)))

    @given(arrays(np.int64, (4, 4), elements=st.integers(0, 50)))
    def test_range_and_diagonal(self, counts):
        if counts.sum() == 0:
            return
        a = accuracy(cm(counts))
        assert 0.0 <= a <= 1.0
        assert (a == 1.0) == (np.count_nonzero(counts - np.diag(np.diag(counts))) == 0)

    def test_format_layout(self):
        text = cm(SPLIT_CELL_COUNTS).format("cell level evaluation")
        assert "61.85% correct" in text
        assert text.splitlines()[1].split("|")[1].split() == list(NAMES)


class TestEvaluateSplit:
    def _split(self, ds):
        train = tuple(b.id for i, b in enumerate(ds.bags) if i % 4 != 0)
        test = tuple(b.id for i, b in enumerate(ds.bags) if i % 4 == 0)
        return SplitSpec(train, test)

    @pytest.mark.parametrize("level, classifier", [("image", "logistic"), ("cell", "l1svm"), ("cell", "logistic")])
    def test_separable_is_perfect(self, separable, level, classifier):
        res = evaluate_split(separable, self._split(separable), PipelineConfig(level=level, classifier=classifier))
        assert res.image_accuracy == 1.0 and res.cell_accuracy == 1.0
        assert np.count_nonzero(res.cell_cm.counts - np.diag(np.diag(res.cell_cm.counts))) == 0

    @pytest.mark.parametrize("combiner", ["vote", "mean", "product"])
    def test_cell_level_counts(self, combiner):
        ds = generate(preset("shape-coded", n_classes=3, bags_per_class=4, dim=3, seed=1))
        split = self._split(ds)
        res = evaluate_split(ds, split, PipelineConfig(level="cell", classifier="logistic", combiner=combiner))
        n_test = sum(ds.bag(i).size for i in split.test)
        assert res.cell_cm.total == n_test
        assert res.image_cm.total == len(split.test)
        # recount oracle
        correct = sum(r.correct for r in res.per_image.rows)
        assert res.cell_accuracy == correct / n_test
        for r in res.per_image.rows:
            assert r.fraction == r.correct / ds.bag(r.id).size
        np.testing.assert_array_equal(
            res.cell_cm.counts.sum(axis=1),
            np.bincount([ds.bag(i).label for i in split.test for _ in range(ds.bag(i).size)], minlength=3),
        )

    def test_image_level_propagation(self):
        ds = generate(preset("shape-coded", n_classes=3, bags_per_class=5, dim=2, seed=2))
        split = self._split(ds)
        res = evaluate_split(ds, split, PipelineConfig(level="image"))
        assert all(r.fraction in (0.0, 1.0) for r in res.per_image.rows)
        expected = np.zeros((3, 3), int)
        for r in res.per_image.rows:
            expected[r.true_label, r.predicted] += ds.bag(r.id).size
        np.testing.assert_array_equal(res.cell_cm.counts, expected)

    def test_invalid_split(self, separable):
        ids = separable.ids
        with pytest.raises(ValueError):
            evaluate_split(separable, SplitSpec(tuple(ids[:5]), tuple(ids[4:])), PipelineConfig())
        with pytest.raises(ValueError):
            evaluate_split(separable, SplitSpec(tuple(ids[:5]), tuple(ids[6:])), PipelineConfig())

    def test_missing_class(self, separable):
        ids = separable.ids
        train = tuple(i for i in ids if separable.bag(i).label != 2)
        test = tuple(i for i in ids if separable.bag(i).label == 2)
        with pytest.raises(MissingClassError):
            evaluate_split(separable, SplitSpec(train, test), PipelineConfig())

    def test_bag_table_input(self, separable):
        split = self._split(separable)
        cfg = PipelineConfig(quantiles=QuantileSpec((0.25, 0.75)))
        a = evaluate_split(separable, split, cfg)
        b = evaluate_split(BagTable.from_dataset(separable, cfg.quantiles), split, cfg)
        np.testing.assert_array_equal(a.cell_cm.counts, b.cell_cm.counts)
        with pytest.raises(ValueError):
            evaluate_split(BagTable.from_dataset(separable, cfg.quantiles), split, PipelineConfig(level="cell"))


class TestCrossValidation:
    def test_fold_audit(self):
        ds = generate(preset("shape-coded", bags_per_class=(6, 5, 4, 4, 5, 4), dim=4))
        res = leave_one_bag_out_cv(ds, PipelineConfig())
        assert len(res.folds) == 28
        assert [f["test"] for f in res.folds] == [[i] for i in ds.ids]
        assert res.image_cm.total == 28
        assert res.cell_cm.total == sum(b.size for b in ds.bags)

    def test_duplicated_bags_are_perfect(self):
        rng = np.random.default_rng(0)
        protos = [rng.normal(3 * c, 1, (20, 3)) for c in range(3)]
        bags = [Bag.from_matrix(f"b{c}{k}", protos[c], c) for c in range(3) for k in range(2)]
        ds = Dataset(tuple(bags), ("a", "b", "c"), 3)
        res = leave_one_bag_out_cv(ds, PipelineConfig())
        assert res.image_accuracy == 1.0 and res.cell_accuracy == 1.0

    def test_threads_do_not_change_results(self):
        ds = generate(preset("shape-coded", n_classes=3, bags_per_class=4, dim=3, seed=5))
        cfg = PipelineConfig(level="cell", classifier="l1svm", combiner="mean")
        a = leave_one_bag_out_cv(ds, cfg, threads=1).to_report(cfg)
        b = leave_one_bag_out_cv(ds, cfg, threads=4).to_report(cfg)
        assert report_json(a) == report_json(b)

    def test_singleton_class_precondition(self):
        ds = generate(preset("mean-coded", n_classes=3, bags_per_class=(2, 2, 1), dim=2))
        with pytest.raises(ProtocolError, match="fewer than 2 bags"):
            leave_one_bag_out_cv(ds, PipelineConfig())

    def test_skip_folds_missing_a_class(self):
        ds = generate(preset("mean-coded", n_classes=3, bags_per_class=(2, 2, 1), dim=2))
        res = leave_one_bag_out_cv(ds, PipelineConfig(), on_missing="skip")
        skipped = [f for f in res.folds if "skipped" in f]
        assert [f["test"] for f in skipped] == [[ds.ids[-1]]]
        assert res.image_cm.total == 4

    def test_report_schema(self):
        ds = generate(preset("mean-coded", n_classes=2, bags_per_class=3, dim=2))
        cfg = PipelineConfig()
        rep = json.loads(report_json(leave_one_bag_out_cv(ds, cfg).to_report(cfg)))
        assert set(rep) >= {
            "config", "folds", "cell_confusion", "image_confusion", "per_image", "cell_accuracy", "image_accuracy"
        }
        assert rep["config"]["quantiles"] == [0.1, 0.11, 0.5, 1.0]
        assert rep["per_image"][0].keys() >= {"id", "true_label", "correct", "fraction"}
