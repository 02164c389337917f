import numpy as np
import pytest

from quantmil.core import (
    DEFAULT_QUANTILES,
    HEP2_CLASSES,
    Bag,
    Dataset,
    QuantileSpec,
    as_posterior,
    validate_dataset,
)


def _ds(*bags, names=("a", "b"), dim=3):
    return Dataset(tuple(bags), names, dim)


class TestValidateDataset:
    def test_valid(self):
        ds = _ds(Bag.from_matrix("x", np.ones((2, 3)), 0), Bag.from_matrix("y", np.zeros((4, 3)), 1))
        assert validate_dataset(ds) == []
        assert validate_dataset(ds, require_labels=True) == []

    def test_mixed_dimension(self):
        bag = Bag("X", (np.ones(3), np.ones(4)), 0)
        assert validate_dataset(_ds(bag)) == ["bag X: inconsistent dimension"]

    def test_empty_bag(self):
        assert validate_dataset(_ds(Bag("X", (), 0))) == ["bag X: empty bag"]

    def test_label_out_of_range(self):
        problems = validate_dataset(_ds(Bag.from_matrix("X", np.ones((1, 3)), 5)))
        assert problems == ["bag X: label 5 outside 0..1"]

    def test_non_finite(self):
        problems = validate_dataset(_ds(Bag("X", (np.array([1.0, np.nan, 0.0]),), 0)))
        assert problems == ["bag X: non-finite feature value"]

    def test_dataset_dimension_mismatch(self):
        problems = validate_dataset(_ds(Bag.from_matrix("X", np.ones((2, 2)), 0)))
        assert problems == ["bag X: dimension 2 differs from dataset dimension 3"]

    def test_unlabeled_allowed_unless_training(self):
        ds = _ds(Bag.from_matrix("X", np.ones((2, 3))))
        assert validate_dataset(ds) == []
        assert validate_dataset(ds, require_labels=True) == ["bag X: missing label"]

    def test_single_class_rejected_for_training(self):
        ds = _ds(Bag.from_matrix("X", np.ones((2, 3)), 0), names=("a",))
        assert validate_dataset(ds, require_labels=True) == ["dataset: 1 classes, at least 2 required"]


def test_duplicate_ids_rejected():
    b = Bag.from_matrix("dup", np.ones((1, 2)), 0)
    with pytest.raises(ValueError, match="duplicate"):
        Dataset((b, b), ("a", "b"), 2)


def test_bag_is_immutable():
    bag = Bag.from_matrix("x", np.arange(6.0).reshape(3, 2), 1)
    with pytest.raises(ValueError):
        bag.X[0, 0] = 99.0
    with pytest.raises(ValueError):
        bag.instances[0][0] = 99.0
    with pytest.raises(AttributeError):
        bag.label = 0


def test_bag_preserves_instance_order():
    X = np.array([[3.0], [1.0], [2.0]])
    np.testing.assert_array_equal(Bag.from_matrix("x", X).X, X)


class TestQuantileSpec:
    def test_default(self):
        assert QuantileSpec().levels == (0.10, 0.11, 0.50, 1.00) == DEFAULT_QUANTILES

    @pytest.mark.parametrize("levels", [(), (0.5, 0.5), (0.6, 0.2), (-0.1,), (1.5,)])
    def test_rejects(self, levels):
        with pytest.raises(ValueError):
            QuantileSpec(levels)

    def test_parse_roundtrip(self):
        spec = QuantileSpec.parse("0.1, 0.11,0.5,1")
        assert spec == QuantileSpec()
        assert QuantileSpec.parse(str(spec)) == spec


def test_hep2_class_order():
    assert HEP2_CLASSES == tuple(sorted(HEP2_CLASSES))
    assert len(HEP2_CLASSES) == 6


def test_as_posterior():
    np.testing.assert_array_equal(as_posterior([0.25, 0.75]), [0.25, 0.75])
    with pytest.raises(ValueError):
        as_posterior([0.5, 0.6])
    with pytest.raises(ValueError):
        as_posterior([1.5, -0.5])
