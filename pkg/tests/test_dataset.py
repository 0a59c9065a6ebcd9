import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import write_xapi_like
from xaiagree import dataset as ds
from xaiagree.dataset import CATEGORICAL, NUMERIC, DataError


def test_load_csv_infers_kinds(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,b\n1,x\n2,y\n")
    t = ds.load_csv(p)
    assert t.column_names == ["a", "b"]
    assert t.column_kinds == [NUMERIC, CATEGORICAL]
    assert t.rows == [[1.0, "x"], [2.0, "y"]]


def test_load_csv_quoted_fields(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text('a,b\n1,"x, y"\n2,"z"\n')
    assert ds.load_csv(p).column("b") == ["x, y", "z"]


@pytest.mark.parametrize("body, match", [
    ("a,b\n1,x,z\n", "ragged"),
    ("a,b\n", "no data"),
    ("", "empty"),
    ("a,b\n1,\n", "missing value"),
])
def test_load_csv_errors(tmp_path, body, match):
    p = tmp_path / "t.csv"
    p.write_text(body)
    with pytest.raises(DataError, match=match):
        ds.load_csv(p)


def test_load_csv_missing_file(tmp_path):
    with pytest.raises(DataError, match="no such file"):
        ds.load_csv(tmp_path / "nope.csv")


def test_raw_table_rejects_ragged_rows():
    with pytest.raises(DataError):
        ds.RawTable(["a", "b"], [NUMERIC, NUMERIC], [[1.0]])


class TestAmriehRecipe:
    def test_shape_and_columns(self, tmp_path):
        table = ds.load_csv(write_xapi_like(tmp_path / "x.csv"))
        assert len(table.rows) == 480
        assert len(table.column_names) == 17
        data = ds.preprocess_amrieh(table)
        assert data.features.shape == (269, 12)
        assert data.labels.sum() == 142
        for dropped in ds.AMRIEH_DROPPED:
            assert not any(n.startswith(dropped) for n in data.feature_names)
        # StageID has three levels -> two indicators, alphabetically first dropped
        assert "StageID_lowerlevel" in data.feature_names
        assert "StageID_MiddleSchool" in data.feature_names
        assert "StageID_HighSchool" not in data.feature_names

    def test_binary_categoricals_give_one_column_each(self, tmp_path):
        data = ds.preprocess_amrieh(ds.load_csv(write_xapi_like(tmp_path / "x.csv")))
        for col in ("gender", "Semester", "Relation", "ParentAnsweringSurvey",
                    "ParentschoolSatisfaction", "StudentAbsenceDays"):
            assert sum(n.startswith(col + "_") for n in data.feature_names) == 1

    def test_only_medium_rows_is_an_error(self, tmp_path):
        path = write_xapi_like(tmp_path / "x.csv", class_counts={"M": 30})
        with pytest.raises(DataError):
            ds.preprocess_amrieh(ds.load_csv(path))

    def test_unknown_schema(self):
        table = ds.RawTable(["a", "Class"], [NUMERIC, CATEGORICAL], [[1.0, "H"]])
        with pytest.raises(DataError, match="schema"):
            ds.preprocess_amrieh(table)

    def test_unexpected_target_label(self, tmp_path):
        path = write_xapi_like(tmp_path / "x.csv", class_counts={"H": 5, "X": 5})
        with pytest.raises(DataError, match="unexpected target"):
            ds.preprocess_amrieh(ds.load_csv(path))


def _table(columns, kinds, rows):
    return ds.RawTable(list(columns), list(kinds), [list(r) for r in rows])


class TestGenericRecipe:
    def test_numeric_passthrough(self):
        t = _table(["a", "b", "y"], [NUMERIC, NUMERIC, CATEGORICAL],
                   [[1.0, 2.0, "p"], [3.0, 4.0, "n"], [5.0, 1.0, "p"]])
        data = ds.preprocess_generic(t, "y", "p")
        assert data.feature_names == ["a", "b"]
        np.testing.assert_array_equal(data.labels, [1, 0, 1])

    def test_programming_course_shape(self):
        # 16 predictors as in the course table; School Type, Program, City are categorical
        rng = np.random.default_rng(0)
        names = ["Age", "School Type", "Family Size", "Program", "Semester", "First Grade",
                 "Submissions", "Attempted", "Completed", "Scoring", "City", "Writing",
                 "Human Sciences", "Natural Sciences", "Languages", "Mathematics", "Passed"]
        cats = {"School Type": ["public", "private"], "Program": ["CS", "CE"],
                "City": ["small", "large"]}
        rows = []
        for i in range(60):
            row = [cats[n][i % 2] if n in cats else float(rng.integers(0, 100))
                   for n in names[:-1]]
            rows.append(row + [["yes", "no"][i % 2]])
        kinds = [CATEGORICAL if n in cats or n == "Passed" else NUMERIC for n in names]
        data = ds.preprocess_generic(_table(names, kinds, rows), "Passed", "yes")
        assert data.K >= 16

    def test_three_labels_is_not_binary(self):
        t = _table(["a", "y"], [NUMERIC, CATEGORICAL],
                   [[1.0, "a"], [2.0, "b"], [3.0, "c"]])
        with pytest.raises(DataError, match="not binary"):
            ds.preprocess_generic(t, "y", "a")

    def test_exclude_labels_makes_binary(self):
        t = _table(["a", "y"], [NUMERIC, CATEGORICAL],
                   [[1.0, "a"], [2.0, "b"], [3.0, "c"], [4.0, "a"]])
        data = ds.preprocess_generic(t, "y", "a", exclude_labels=["c"])
        assert data.n == 3

    def test_constant_features_rejected(self):
        t = _table(["a", "y"], [NUMERIC, CATEGORICAL], [[1.0, "a"], [1.0, "b"]])
        with pytest.raises(DataError, match="constant"):
            ds.preprocess_generic(t, "y", "a")

    def test_numeric_target(self):
        t = _table(["a", "y"], [NUMERIC, NUMERIC], [[1.0, 1.0], [2.0, 0.0], [0.5, 1.0]])
        data = ds.preprocess_generic(t, "y", "1")
        np.testing.assert_array_equal(data.labels, [1, 0, 1])


@given(st.lists(st.sampled_from("abcde"), min_size=1, max_size=40))
def test_one_hot_drop_first(values):
    cols, names = ds.one_hot(values, "c")
    levels = sorted(set(values))
    assert cols.shape == (len(values), len(levels) - 1)
    assert names == [f"c_{lvl}" for lvl in levels[1:]]
    assert np.all(cols.sum(axis=1) <= 1)


class TestSplits:
    @pytest.mark.parametrize("n, sizes", [(269, (188, 40, 41)), (100, (70, 15, 15))])
    def test_sizes(self, n, sizes):
        # floor(0.70 n), floor(0.15 n), remainder
        assert sizes[0] == math.floor(0.7 * n) and sizes[1] == math.floor(0.15 * n)
        assert ds.make_splits(n, 3).sizes() == sizes

    @given(st.integers(10, 2000), st.integers(0, 2**31))
    @settings(max_examples=50)
    def test_partition(self, n, seed):
        s = ds.make_splits(n, seed)
        joined = np.concatenate([s.train_idx, s.val_idx, s.test_idx])
        assert sorted(joined.tolist()) == list(range(n))

    def test_deterministic(self):
        a, b = ds.make_splits(269, 7), ds.make_splits(269, 7)
        for x, y in zip((a.train_idx, a.val_idx, a.test_idx), (b.train_idx, b.val_idx, b.test_idx)):
            np.testing.assert_array_equal(x, y)

    def test_distinct_seeds_differ(self):
        differing = sum(
            not np.array_equal(ds.make_splits(269, s).test_idx, ds.make_splits(269, s + 100).test_idx)
            for s in range(10)
        )
        assert differing >= 1

    def test_too_small(self):
        with pytest.raises(DataError):
            ds.make_splits(9, 0)


class TestStandardize:
    def test_constant_column_becomes_zero(self):
        X = np.column_stack([np.full(5, 3.0), np.arange(5.0)])
        Z, scaler = ds.standardize(X, np.arange(5))
        np.testing.assert_array_equal(Z[:, 0], 0.0)
        assert scaler.scale[0] == 1.0

    def test_hand_example(self):
        X = np.array([[0.0], [2.0], [5.0]])
        Z, _ = ds.standardize(X, [0, 1])
        np.testing.assert_allclose(Z[:2, 0], [-1.0, 1.0])
        np.testing.assert_allclose(Z[2, 0], 4.0)

    def test_idempotent(self, rng):
        X, _ = ds.standardize(rng.normal(3, 2, (50, 4)), np.arange(50))
        Z, _ = ds.standardize(X, np.arange(50))
        np.testing.assert_allclose(Z, X, atol=1e-9)

    @given(st.integers(0, 10_000))
    @settings(max_examples=30)
    def test_fit_rows_have_zero_mean_unit_std(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(rng.uniform(-50, 50, 6), rng.uniform(0.1, 20, 6), (40, 6))
        fit = rng.choice(40, 25, replace=False)
        Z, _ = ds.standardize(X, fit)
        assert np.all(np.abs(Z[fit].mean(axis=0)) < 1e-9)
        assert np.all(np.abs(Z[fit].std(axis=0) - 1) < 1e-9)

    def test_empty_fit(self):
        with pytest.raises(DataError):
            ds.standardize(np.ones((3, 2)), [])


class TestSynthetic:
    def test_balanced(self):
        d = ds.synthetic_blobs(400, 12, 6.0, 0)
        assert d.features.shape == (400, 12)
        assert d.labels.sum() == 200

    @pytest.mark.parametrize("args", [(401, 12, 1.0), (400, 1, 1.0), (400, 12, -1.0)])
    def test_invalid(self, args):
        with pytest.raises(DataError):
            ds.synthetic_blobs(*args, seed=0)

    def test_prepare_standardizes_on_train(self):
        p = ds.prepare(ds.synthetic_blobs(400, 12, 6.0, 0), seed=0)
        train = p.dataset.features[p.splits.train_idx]
        assert np.all(np.abs(train.mean(axis=0)) < 1e-9)
        assert np.all(np.abs(train.std(axis=0) - 1) < 1e-9)
        m = p.manifest()
        assert m["splits"]["seed"] == 0
        assert len(m["splits"]["test"]) == 60
