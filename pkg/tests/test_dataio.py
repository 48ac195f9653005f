"""Tests for ingestion, preprocessing, and split generation.

Schema statistics and transforms are checked against hand-computed
values; splits against explicit counting arguments.
"""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tandem.dataio import (DesignMatrix, FeatureSchema, RawTable, SchemaError,
                           SplitError, SplitSpec, TransformError, fit_schema,
                           load_csv, load_design_matrix, make_splits,
                           save_design_matrix, schema_from_json,
                           schema_to_json, transform)


def table(**cols):
    names = list(cols)
    target = cols.pop("target", None)
    return RawTable(names=[n for n in names if n != "target"],
                    columns=[cols[n] for n in names if n != "target"],
                    target_name="target" if target is not None else None,
                    target=target)


class TestLoadCsv:
    def test_basic_parse(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("age,color,target\n2,red,yes\n4,blue,no\n6,red,yes\n",
                     encoding="utf-8")
        raw = load_csv(p, target_column="target")
        assert raw.names == ["age", "color"]
        assert raw.columns[0] == ["2", "4", "6"]
        assert raw.target == ["yes", "no", "yes"]

    def test_missing_cells(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("a,b\n1,\nNA,x\n3,y\n", encoding="utf-8")
        raw = load_csv(p)
        assert raw.columns[0] == ["1", None, "3"]
        assert raw.columns[1] == [None, "x", "y"]
        assert raw.target is None

    def test_missing_target_column_raises(self, tmp_path):
        p = tmp_path / "q.csv"
        p.write_text("a,b\n1,2\n", encoding="utf-8")
        with pytest.raises(SchemaError):
            load_csv(p, target_column="label")

    def test_ragged_row_raises(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("a,b\n1,2\n3\n", encoding="utf-8")
        with pytest.raises(SchemaError):
            load_csv(p)

    def test_duplicate_header_raises(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,a\n1,2\n", encoding="utf-8")
        with pytest.raises(SchemaError):
            load_csv(p)


class TestFitSchema:
    def test_numeric_statistics(self):
        raw = table(x=[2.0, 4.0, 6.0])
        s = fit_schema(raw, [0, 1, 2])
        col = s.columns["x"]
        assert col["kind"] == "numeric"
        assert (col["min"], col["max"], col["mean"]) == (2.0, 6.0, 4.0)

    def test_vocabulary_first_appearance(self):
        raw = table(c=["a", "b", "a"])
        s = fit_schema(raw, [0, 1, 2])
        assert s.columns["c"]["kind"] == "categorical"
        assert s.columns["c"]["vocab"] == ["a", "b"]

    def test_mean_ignores_missing(self):
        raw = table(x=[1.0, None, 3.0])
        s = fit_schema(raw, [0, 1, 2])
        assert s.columns["x"]["mean"] == 2.0

    def test_statistics_use_fit_rows_only(self):
        raw = table(x=[1.0, 2.0, 100.0])
        s = fit_schema(raw, [0, 1])
        assert s.columns["x"]["max"] == 2.0

    def test_numeric_strings_detected(self):
        raw = table(x=["2", "4.5", "-1e2"])
        s = fit_schema(raw, [0, 1, 2])
        assert s.columns["x"]["kind"] == "numeric"
        assert s.columns["x"]["min"] == -100.0

    def test_mixed_column_is_categorical(self):
        raw = table(x=["2", "oops", "4"])
        s = fit_schema(raw, [0, 1, 2])
        assert s.columns["x"]["kind"] == "categorical"

    def test_empty_fit_rows_raises(self):
        with pytest.raises(SchemaError):
            fit_schema(table(x=[1.0]), [])

    def test_all_missing_column_names_offender(self):
        raw = table(x=[1.0, 2.0], y=[None, None])
        with pytest.raises(SchemaError, match="y"):
            fit_schema(raw, [0, 1])

    def test_classification_target_vocab(self):
        raw = table(x=[1.0, 2.0, 3.0], target=["no", "yes", "no"])
        s = fit_schema(raw, [0, 1, 2])
        assert s.target == {"kind": "classification", "vocab": ["no", "yes"]}

    def test_numeric_target_is_regression(self):
        raw = table(x=[1.0, 2.0], target=["0.5", "1.5"])
        s = fit_schema(raw, [0, 1])
        assert s.target == {"kind": "regression"}


class TestTransform:
    def fitted(self, raw, rows=None):
        rows = rows if rows is not None else list(range(raw.n_rows))
        return fit_schema(raw, rows)

    def test_min_max_formula(self):
        raw = table(x=[2.0, 4.0, 6.0])
        dm = transform(raw, self.fitted(raw))
        np.testing.assert_allclose(dm.values[:, 0], [0.0, 0.5, 1.0])

    def test_out_of_range_clamped(self):
        fit = table(x=[0.0, 10.0])
        schema = self.fitted(fit)
        test = table(x=[-5.0, 15.0])
        dm = transform(test, schema)
        np.testing.assert_array_equal(dm.values[:, 0], [0.0, 1.0])

    def test_missing_numeric_imputed_then_scaled(self):
        raw = table(x=[0.0, None, 10.0])
        dm = transform(raw, self.fitted(raw))
        # mean of non-missing is 5, scaled to 0.5
        np.testing.assert_allclose(dm.values[1, 0], 0.5)

    def test_constant_column_maps_to_zero(self):
        raw = table(x=[5.0, 5.0])
        dm = transform(raw, self.fitted(raw))
        np.testing.assert_array_equal(dm.values[:, 0], [0.0, 0.0])

    def test_one_hot_rows(self):
        raw = table(c=["a", "b"])
        dm = transform(raw, self.fitted(raw))
        np.testing.assert_array_equal(dm.values, [[1.0, 0.0], [0.0, 1.0]])
        assert dm.feature_names == ["c=a", "c=b"]

    def test_unseen_token_all_zeros(self):
        schema = self.fitted(table(c=["a", "b"]))
        dm = transform(table(c=["zz"]), schema)
        np.testing.assert_array_equal(dm.values, [[0.0, 0.0]])

    def test_missing_token_all_zeros(self):
        raw = table(c=["a", None, "b"])
        dm = transform(raw, self.fitted(raw, rows=[0, 2]))
        np.testing.assert_array_equal(dm.values[1], [0.0, 0.0])

    def test_column_mismatch_raises(self):
        schema = self.fitted(table(x=[1.0, 2.0]))
        with pytest.raises(TransformError):
            transform(table(y=[1.0, 2.0]), schema)

    def test_unparsable_numeric_cell_raises(self):
        schema = self.fitted(table(x=[1.0, 2.0]))
        with pytest.raises(TransformError, match="x"):
            transform(table(x=["abc"]), schema)

    def test_origin_map(self):
        raw = table(x=[1.0, 2.0], c=["a", "b"])
        dm = transform(raw, self.fitted(raw))
        assert dm.origin == {"x": "x", "c=a": "c", "c=b": "c"}

    def test_classification_targets_encoded(self):
        raw = table(x=[1.0, 2.0, 3.0], target=["no", "yes", "no"])
        dm = transform(raw, self.fitted(raw))
        np.testing.assert_array_equal(dm.targets, [0, 1, 0])
        assert dm.target_kind == "classification"

    def test_regression_targets_pass_through(self):
        raw = table(x=[1.0, 2.0], target=["0.5", "-2"])
        dm = transform(raw, self.fitted(raw))
        np.testing.assert_array_equal(dm.targets, [0.5, -2.0])
        assert dm.target_kind == "regression"

    def test_unseen_target_token_raises(self):
        fit = table(x=[1.0, 2.0], target=["a", "b"])
        schema = self.fitted(fit)
        with pytest.raises(TransformError):
            transform(table(x=[3.0], target=["c"]), schema)

    def test_width_matches_schema_expansion(self):
        raw = table(x=[1.0, 2.0], c=["a", "b"], d=["u", "u"])
        dm = transform(raw, self.fitted(raw))
        assert dm.values.shape == (2, 1 + 2 + 1)

    def test_refit_on_transformed_is_unit_range(self):
        rng = np.random.default_rng(0)
        raw = table(x=list(rng.normal(0, 5, 20)),
                    y=list(rng.uniform(-3, 9, 20)))
        dm = transform(raw, self.fitted(raw))
        again = RawTable(names=dm.feature_names,
                         columns=[list(dm.values[:, j]) for j in range(2)],
                         target_name=None, target=None)
        s2 = fit_schema(again, list(range(20)))
        for name in dm.feature_names:
            assert abs(s2.columns[name]["min"] - 0.0) < 1e-12
            assert abs(s2.columns[name]["max"] - 1.0) < 1e-12

    @given(st.integers(min_value=0, max_value=10 ** 6))
    @settings(max_examples=25, deadline=None)
    def test_exactly_one_hot_per_seen_token(self, seed):
        rng = np.random.default_rng(seed)
        vocab = ["u", "v", "w"]
        cells = [vocab[i] for i in rng.integers(0, 3, 12)]
        raw = table(c=cells)
        dm = transform(raw, fit_schema(raw, list(range(12))))
        sums = dm.values.sum(axis=1)
        np.testing.assert_array_equal(sums, np.ones(12))
        assert set(np.unique(dm.values)) <= {0.0, 1.0}


class TestMakeSplits:
    def test_deterministic(self):
        a = make_splits(10, None, pretrain_per_class=4, label_budget=4,
                        val_frac=0.25, seed=7)
        b = make_splits(10, None, pretrain_per_class=4, label_budget=4,
                        val_frac=0.25, seed=7)
        assert a == b

    def test_paper_scale_pool(self):
        y = np.array([0] * 3000 + [1] * 3000)
        s = make_splits(6000, y, pretrain_per_class=2000, label_budget=1000,
                        val_frac=0.25, seed=0)
        assert len(s.pretrain_idx) == 4000

    def test_zero_budget(self):
        s = make_splits(10, None, pretrain_per_class=5, label_budget=0,
                        val_frac=0.25, seed=1)
        assert s.train_idx == [] and s.val_idx == []
        assert len(s.test_idx) == 5

    def test_sets_partition_everything(self):
        y = np.array([0, 1] * 20)
        s = make_splits(40, y, pretrain_per_class=8, label_budget=12,
                        val_frac=0.25, seed=3)
        every = sorted(s.pretrain_idx + s.train_idx + s.val_idx + s.test_idx)
        assert every == list(range(40))

    def test_pretrain_stratified_exactly(self):
        y = np.array([0] * 30 + [1] * 10)
        s = make_splits(40, y, pretrain_per_class=6, label_budget=0,
                        val_frac=0.5, seed=2)
        counts = np.bincount(y[s.pretrain_idx])
        np.testing.assert_array_equal(counts, [6, 6])

    def test_largest_remainder_allocation(self):
        # after pretraining, class a keeps 3 rows and class b keeps 7;
        # budget 5 splits 1.5/3.5, remainders tie, lower class wins
        y = np.array(["a"] * 4 + ["b"] * 8)
        s = make_splits(12, y, pretrain_per_class=1, label_budget=5,
                        val_frac=0.2, seed=4)
        labeled = np.array(s.train_idx + s.val_idx)
        counts = {c: int(np.sum(y[labeled] == c)) for c in ("a", "b")}
        assert counts == {"a": 2, "b": 3}

    def test_validation_size_rounded(self):
        s = make_splits(30, None, pretrain_per_class=10, label_budget=10,
                        val_frac=0.25, seed=5)
        assert len(s.val_idx) == 3 and len(s.train_idx) == 7

    def test_insufficient_class_named(self):
        y = np.array([0] * 50 + [1] * 3)
        with pytest.raises(SplitError, match="1"):
            make_splits(53, y, pretrain_per_class=5, label_budget=0,
                        val_frac=0.5, seed=6)

    def test_budget_exceeding_pool_raises(self):
        with pytest.raises(SplitError):
            make_splits(10, None, pretrain_per_class=8, label_budget=5,
                        val_frac=0.5, seed=7)

    def test_bad_val_frac_raises(self):
        for frac in (0.0, 1.0, -0.5):
            with pytest.raises(SplitError):
                make_splits(10, None, pretrain_per_class=2, label_budget=4,
                            val_frac=frac, seed=8)

    def test_target_length_mismatch_raises(self):
        with pytest.raises(SplitError):
            make_splits(10, np.zeros(9), pretrain_per_class=2,
                        label_budget=2, val_frac=0.5, seed=9)

    def test_disjoint_over_many_seeds(self):
        y = np.tile(np.arange(3), 20)
        for seed in range(100):
            s = make_splits(60, y, pretrain_per_class=5, label_budget=9,
                            val_frac=1 / 3, seed=seed)
            pools = [set(s.pretrain_idx), set(s.train_idx),
                     set(s.val_idx), set(s.test_idx)]
            for i in range(4):
                for j in range(i + 1, 4):
                    assert not pools[i] & pools[j], (seed, i, j)

    def test_json_round_trip(self):
        s = make_splits(20, None, pretrain_per_class=5, label_budget=8,
                        val_frac=0.25, seed=11)
        blob = s.to_json()
        back = SplitSpec.from_json(blob)
        assert back == s
        json.loads(blob)


class TestSerialization:
    def test_schema_json_round_trip(self):
        raw = table(x=[1.0, None, 3.5], c=["a", "b", "a"],
                    target=["p", "q", "p"])
        s = fit_schema(raw, [0, 1, 2])
        back = schema_from_json(schema_to_json(s))
        assert back == s

    def test_matrix_cache_round_trip(self, tmp_path):
        raw = table(x=[0.1, 0.9, 0.4], c=["a", "b", "a"],
                    target=["p", "q", "p"])
        dm = transform(raw, fit_schema(raw, [0, 1, 2]))
        path = tmp_path / "cache.csv"
        save_design_matrix(dm, path)
        back = load_design_matrix(path)
        np.testing.assert_array_equal(back.values, dm.values)
        assert back.feature_names == dm.feature_names
        np.testing.assert_array_equal(back.targets, dm.targets)
        assert back.target_kind == dm.target_kind

    def test_matrix_cache_without_targets(self, tmp_path):
        raw = table(x=[0.25, 0.75])
        dm = transform(raw, fit_schema(raw, [0, 1]))
        path = tmp_path / "plain.csv"
        save_design_matrix(dm, path)
        back = load_design_matrix(path)
        assert back.targets is None
        np.testing.assert_array_equal(back.values, dm.values)
