import json
import os

import numpy as np
import pytest
from PIL import Image

from quantmil import cli
from quantmil.core import QuantileSpec
from quantmil.io import read_bag_table, read_feature_cache
from quantmil.representation import bag_minimax_rep, represent_dataset


def run(*argv):
    return cli.main([str(a) for a in argv])


def write_cells(root, n=3, size=32, seed=0):
    rng = np.random.default_rng(seed)
    lines = ["image_id,cell_id,label_name,image_path,mask_path"]
    for k in range(n):
        img = rng.integers(0, 256, (size, size, 3), dtype=np.uint8)
        mask = np.zeros((size, size), np.uint8)
        mask[6:26, 5 + k : 25 + k] = 255
        Image.fromarray(img).save(root / f"img{k}.png")
        Image.fromarray(mask).save(root / f"mask{k}.png")
        label = "homogeneous" if k < 2 else "fine speckled"
        lines.append(f"im{k // 2},c{k},{label},img{k}.png,mask{k}.png")
    (root / "manifest.csv").write_text("\n".join(lines) + "\n")
    return root / "manifest.csv"


@pytest.fixture
def synth_cache(tmp_path):
    path = tmp_path / "cells.csv"
    assert run("synth", "-o", path, "--classes", 3, "--bags-per-class", 4, "--dim", 3, "--n-max", 40) == 0
    return path


class TestExtract:
    def test_three_cells(self, tmp_path):
        manifest = write_cells(tmp_path)
        out = tmp_path / "f.csv"
        assert run("extract", manifest, "-o", out, "--threads", 2) == 0
        cache = read_feature_cache(out)
        assert cache.dataset.dim == 63
        assert [b.size for b in cache.dataset.bags] == [2, 1]
        assert cache.dataset.class_names[0] == "centromere"
        first = out.read_bytes()
        assert run("extract", manifest, "-o", out, "--threads", 1) == 0
        assert out.read_bytes() == first

    def test_corrupt_mask(self, tmp_path):
        manifest = write_cells(tmp_path)
        (tmp_path / "mask1.png").write_bytes(b"not an image")
        out = tmp_path / "f.csv"
        assert run("extract", manifest, "-o", out) == 3
        assert not out.exists()

    def test_missing_file(self, tmp_path):
        manifest = write_cells(tmp_path)
        os.remove(tmp_path / "img0.png")
        assert run("extract", manifest, "-o", tmp_path / "f.csv") == 3


class TestRepresent:
    def test_columns_and_composition(self, synth_cache, tmp_path):
        out = tmp_path / "bags.csv"
        assert run("represent", synth_cache, "-o", out) == 0
        bf = read_bag_table(out)
        ds = read_feature_cache(synth_cache).dataset
        assert bf.table.X.shape == (12, 3 * 4)
        np.testing.assert_array_equal(bf.table.X, represent_dataset(ds, QuantileSpec()))
        header = [l for l in out.read_text().splitlines() if not l.startswith("#")][0]
        assert header.split(",")[3:5] == ["f0@0.1", "f0@0.11"]

    def test_default_63_features_give_252(self, tmp_path):
        cache = tmp_path / "c.csv"
        assert run("synth", "-o", cache, "--classes", 2, "--bags-per-class", 2, "--dim", 63, "--n-max", 20) == 0
        out = tmp_path / "b.csv"
        assert run("represent", cache, "-o", out) == 0
        assert read_bag_table(out).table.X.shape[1] == 252

    def test_minimax(self, synth_cache, tmp_path):
        out = tmp_path / "mm.csv"
        assert run("represent", synth_cache, "-o", out, "--quantiles", "0,1") == 0
        ds = read_feature_cache(synth_cache).dataset
        X = read_bag_table(out).table.X
        for row, bag in zip(X, ds.bags):
            np.testing.assert_array_equal(row, bag_minimax_rep(bag))

    @pytest.mark.parametrize("q", ["1.5", "0.5,0.2", "a"])
    def test_bad_quantiles(self, synth_cache, tmp_path, q):
        with pytest.raises(SystemExit) as exc:
            run("represent", synth_cache, "-o", tmp_path / "x.csv", "--quantiles", q)
        assert exc.value.code == 2


class TestTrainEval:
    def test_roundtrip(self, synth_cache, tmp_path, capsys):
        model = tmp_path / "m.json"
        assert run("train", synth_cache, "-o", model) == 0
        assert run("eval", model, synth_cache, "-o", tmp_path / "r") == 0
        rep = json.loads((tmp_path / "r.json").read_text())
        assert rep["image_confusion"] and sum(map(sum, rep["image_confusion"])) == 12
        assert "% correct" in (tmp_path / "r.txt").read_text()
        assert "% correct" in capsys.readouterr().out

    def test_bag_file_input_matches_cache(self, synth_cache, tmp_path):
        bags = tmp_path / "b.csv"
        run("represent", synth_cache, "-o", bags)
        run("train", synth_cache, "-o", tmp_path / "m1.json")
        run("train", bags, "-o", tmp_path / "m2.json")
        w1 = json.loads((tmp_path / "m1.json").read_text())["weights"]
        w2 = json.loads((tmp_path / "m2.json").read_text())["weights"]
        assert w1 == w2

    def test_schema_mismatch(self, synth_cache, tmp_path):
        model = tmp_path / "m.json"
        assert run("train", synth_cache, "-o", model) == 0
        other = tmp_path / "other.csv"
        run("synth", "-o", other, "--classes", 3, "--bags-per-class", 2, "--dim", 4, "--n-max", 20)
        assert run("eval", model, other) == 4

    def test_quantile_mismatch(self, synth_cache, tmp_path):
        model = tmp_path / "m.json"
        run("train", synth_cache, "-o", model)
        bags = tmp_path / "b.csv"
        run("represent", synth_cache, "-o", bags, "--quantiles", "0.5")
        assert run("eval", model, bags) == 4

    def test_bag_file_rejected_for_cell_level(self, synth_cache, tmp_path):
        bags = tmp_path / "b.csv"
        run("represent", synth_cache, "-o", bags)
        assert run("train", bags, "-o", tmp_path / "m.json", "--level", "cell") == 4


class TestCv:
    def test_28_bags(self, tmp_path):
        cache = tmp_path / "c.csv"
        assert run("synth", "-o", cache, "--bags-per-class", "6,5,4,4,5,4", "--dim", 4, "--hep2-names") == 0
        assert run("cv", cache, "-o", tmp_path / "a", "--threads", 1) == 0
        assert run("cv", cache, "-o", tmp_path / "b", "--threads", 4) == 0
        a = (tmp_path / "a.json").read_bytes()
        assert a == (tmp_path / "b.json").read_bytes()
        rep = json.loads(a)
        assert len(rep["folds"]) == 28
        assert sum(map(sum, rep["image_confusion"])) == 28
        assert rep["class_names"][0] == "centromere"

    def test_singleton_class(self, tmp_path):
        cache = tmp_path / "c.csv"
        run("synth", "-o", cache, "--classes", 3, "--bags-per-class", "2,2,1", "--dim", 2)
        assert run("cv", cache) == 5
        assert run("cv", cache, "--on-missing", "skip") == 0

    def test_no_temp_files_left(self, synth_cache, tmp_path):
        run("cv", synth_cache, "-o", tmp_path / "r")
        assert sorted(p.name for p in tmp_path.iterdir()) == ["cells.csv", "r.json", "r.txt"]
