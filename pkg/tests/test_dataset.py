import io
import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rlcmtr.dataset import (ArffParseError, Dataset, DatasetError, TargetConfigError,
                            UnsupportedAttributeError, apply_normalizer, concat_holdout,
                            fit_normalizer, impute_mean, invert_normalizer, load_dataset,
                            make_holdout, make_kfold, parse_arff, parse_csv, random_holdout)

SMALL_ARFF = """% toy file
@relation toy
@attribute a numeric
@ATTRIBUTE 'b c' NUMERIC
@attribute y real
@data
1,2,3
4,5,6
"""


class TestParseArff:
    def test_structure(self):
        d = parse_arff(SMALL_ARFF, targets=1)
        assert (d.m, d.p, d.q) == (2, 2, 1)
        assert d.input_names == ("a", "b c")
        assert d.target_names == ("y",)
        assert d.name == "toy"
        np.testing.assert_array_equal(d.Y[:, 0], [3, 6])

    def test_named_targets_override_position(self):
        d = parse_arff(SMALL_ARFF, targets=["a"])
        assert d.target_names == ("a",)
        np.testing.assert_array_equal(d.X, [[2, 3], [5, 6]])

    def test_stream_input(self):
        assert parse_arff(io.StringIO(SMALL_ARFF), targets=2).q == 2

    def test_wrong_field_count_names_line(self):
        bad = SMALL_ARFF + "1,2\n"
        with pytest.raises(ArffParseError) as exc:
            parse_arff(bad, targets=1)
        assert exc.value.line == 9
        assert "line 9" in str(exc.value)

    def test_nominal_rejected(self):
        text = SMALL_ARFF.replace("@attribute a numeric", "@attribute a {x,y}")
        with pytest.raises(UnsupportedAttributeError):
            parse_arff(text, targets=1)

    def test_string_rejected(self):
        text = SMALL_ARFF.replace("@attribute a numeric", "@attribute a string")
        with pytest.raises(UnsupportedAttributeError):
            parse_arff(text, targets=1)

    @pytest.mark.parametrize("q", [0, 3, 4])
    def test_bad_target_count(self, q):
        with pytest.raises(TargetConfigError):
            parse_arff(SMALL_ARFF, targets=q)

    def test_unknown_target_name(self):
        with pytest.raises(TargetConfigError):
            parse_arff(SMALL_ARFF, targets=["nope"])

    def test_missing_marked_nan(self):
        d = parse_arff(SMALL_ARFF.replace("4,5,6", "?,5,6"), targets=1)
        assert d.has_missing
        assert np.isnan(d.X[1, 0])

    def test_non_numeric_cell(self):
        with pytest.raises(ArffParseError):
            parse_arff(SMALL_ARFF.replace("4,5,6", "4,x,6"), targets=1)

    def test_no_data_section(self):
        with pytest.raises(ArffParseError):
            parse_arff("@relation r\n@attribute a numeric\n@attribute b numeric\n", targets=1)

    def test_sparse_rows_rejected(self):
        with pytest.raises(ArffParseError):
            parse_arff(SMALL_ARFF + "{0 1, 2 3}\n", targets=1)


def test_parse_csv():
    d = parse_csv("a,b,y1,y2\n1,2,3,4\n5,?,7,8\n", targets=2)
    assert (d.m, d.p, d.q) == (2, 2, 2)
    assert np.isnan(d.X[1, 1])
    with pytest.raises(ArffParseError):
        parse_csv("a,b,y\n1,2\n", targets=1)


class TestImpute:
    def test_column_mean(self):
        d = Dataset([[1.0], [np.nan], [3.0]], [[0.0], [1.0], [2.0]], ("a",), ("y",))
        np.testing.assert_array_equal(impute_mean(d).X[:, 0], [1, 2, 3])

    def test_identity_without_missing(self):
        d = Dataset([[1.0], [2.0]], [[0.0], [1.0]], ("a",), ("y",))
        assert impute_mean(d) is d

    def test_fully_missing_column(self):
        d = Dataset([[np.nan], [np.nan]], [[0.0], [1.0]], ("a",), ("y",))
        with pytest.raises(DatasetError, match="'a'"):
            impute_mean(d)

    def test_targets_imputed_too(self):
        d = Dataset([[1.0], [2.0], [3.0]], [[np.nan], [1.0], [3.0]], ("a",), ("y",))
        np.testing.assert_array_equal(impute_mean(d).Y[:, 0], [2, 1, 3])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.one_of(st.none(), st.floats(-1e6, 1e6)), min_size=2, max_size=20)
           .filter(lambda xs: any(x is not None for x in xs)))
    def test_idempotent(self, values):
        col = np.array([np.nan if v is None else v for v in values])
        d = Dataset(col[:, None], np.zeros((len(col), 1)), ("a",), ("y",))
        once = impute_mean(d)
        twice = impute_mean(once)
        assert not once.has_missing
        np.testing.assert_array_equal(once.X, twice.X)


class TestNormalizer:
    def test_fit(self):
        n = fit_normalizer([[2.0, 0.0], [4.0, 10.0], [6.0, -1.0]])
        np.testing.assert_array_equal(n.mins, [2, -1])
        np.testing.assert_array_equal(n.maxs, [6, 10])

    def test_apply_and_invert(self):
        n = fit_normalizer([[2.0], [4.0], [6.0]])
        np.testing.assert_array_equal(apply_normalizer(n, [[2.0], [4.0], [6.0]])[:, 0], [0, 0.5, 1])
        np.testing.assert_array_equal(invert_normalizer(n, [[0.0], [0.5], [1.0]])[:, 0], [2, 4, 6])

    def test_constant_target(self):
        n = fit_normalizer([[5.0], [5.0]])
        assert n.mins[0] == n.maxs[0] == 5
        assert apply_normalizer(n, [[5.0]])[0, 0] == 0
        assert invert_normalizer(n, [[0.0]])[0, 0] == 5

    def test_no_clipping_for_test_values(self):
        n = fit_normalizer([[0.0], [10.0]])
        np.testing.assert_array_equal(n.apply([[-5.0], [20.0]])[:, 0], [-0.5, 2.0])

    def test_column_mismatch(self):
        with pytest.raises(ValueError):
            fit_normalizer([[1.0, 2.0]]).apply([[1.0]])

    def test_round_trip_random(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            Y = rng.normal(scale=rng.uniform(0.1, 100), size=(rng.integers(2, 30), rng.integers(1, 6)))
            n = fit_normalizer(Y)
            U = n.apply(Y)
            assert U.min() >= 0 and U.max() <= 1
            np.testing.assert_allclose(n.invert(U), Y, rtol=1e-12, atol=1e-12 * np.abs(Y).max())


class TestSplits:
    def test_loo_singletons(self):
        plan = make_kfold(10, 10, seed=3)
        assert sorted(np.bincount(plan.fold_assignments)) == [1] * 10

    def test_uneven(self):
        plan = make_kfold(11, 10, seed=3)
        assert sorted(np.bincount(plan.fold_assignments)) == [1] * 9 + [2]

    def test_deterministic(self):
        a, b = make_kfold(57, 7, 11), make_kfold(57, 7, 11)
        np.testing.assert_array_equal(a.fold_assignments, b.fold_assignments)
        assert not np.array_equal(a.fold_assignments, make_kfold(57, 7, 12).fold_assignments)

    def test_too_many_folds(self):
        with pytest.raises(ValueError):
            make_kfold(5, 6, 0)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 200), st.integers(2, 20), st.integers(0, 2**32 - 1))
    def test_partition(self, m, folds, seed):
        folds = min(folds, m)
        plan = make_kfold(m, folds, seed)
        tests = np.concatenate([te for _, te in plan.splits()])
        np.testing.assert_array_equal(np.sort(tests), np.arange(m))
        sizes = np.bincount(plan.fold_assignments, minlength=folds)
        assert sizes.max() - sizes.min() <= 1
        for tr, te in plan.splits():
            assert len(np.intersect1d(tr, te)) == 0
            assert len(tr) + len(te) == m

    def test_holdout(self):
        plan = make_holdout([0, 2], [1, 3])
        (tr, te), = list(plan.splits())
        np.testing.assert_array_equal(tr, [0, 2])
        np.testing.assert_array_equal(te, [1, 3])
        with pytest.raises(ValueError):
            make_holdout([0, 1], [1, 2])

    def test_random_holdout_sizes(self):
        plan = random_holdout(300, 0.5, 1)
        (tr, te), = list(plan.splits())
        assert len(tr) == len(te) == 150

    def test_predefined_split_counts(self):
        rng = np.random.default_rng(0)
        names = ("a",), ("y",)
        train = Dataset(rng.normal(size=(4165, 1)), rng.normal(size=(4165, 1)), *names)
        test = Dataset(rng.normal(size=(5065, 1)), rng.normal(size=(5065, 1)), *names)
        data, plan = concat_holdout(train, test)
        (tr, te), = list(plan.splits())
        assert (len(tr), len(te)) == (4165, 5065)
        np.testing.assert_array_equal(data.X[te], test.X)


def test_load_dataset(tmp_path):
    path = tmp_path / "toy.arff"
    path.write_text(SMALL_ARFF.replace("4,5,6", "?,5,6"))
    d = load_dataset(path, 1)
    assert not d.has_missing
    assert d.X[1, 0] == 1.0
    assert load_dataset(path, 1, impute=False).has_missing


EDM = os.environ.get("RLCMTR_EDM")


@pytest.mark.skipif(not EDM or not Path(EDM).exists(), reason="set RLCMTR_EDM to the edm ARFF file")
def test_edm_shape():
    d = load_dataset(EDM, 2)
    assert (d.m, d.p, d.q) == (154, 16, 2)
