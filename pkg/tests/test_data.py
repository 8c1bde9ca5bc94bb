import numpy as np
import pytest

from gsbps import ColumnRoles, Dataset, DataError, Estimand, build_design, design_for, load_csv, reduce_design


def test_design_column_count():
    X = build_design(np.zeros((3, 2)) + 1.0, np.array([[1, 0], [0, 1], [1, 1]]))
    assert X.n_columns == (1 + 2) * (1 + 2)


def test_design_row_by_hand():
    X = build_design(np.array([[1.0, 2.0]]), np.array([[1.0, 0.0]]))
    np.testing.assert_array_equal(X.values[0], [1, 1, 0, 1, 2, 1, 2, 0, 0])
    assert [lab[0] for lab in X.labels] == ["intercept", "subgroup", "subgroup", "feature", "feature",
                                            "interaction", "interaction", "interaction", "interaction"]


def test_design_without_subgroups():
    X = build_design(np.array([[5.0]]), None)
    np.testing.assert_array_equal(X.values, [[1, 5]])


def test_design_dimension_mismatch():
    with pytest.raises(DataError, match="dimension mismatch"):
        build_design(np.ones((3, 1)), np.ones((2, 1)))


def test_design_linear_in_features():
    rng = np.random.default_rng(1)
    S = (rng.uniform(size=(20, 3)) < 0.5).astype(float)
    Z1, Z2 = rng.normal(size=(20, 2)), rng.normal(size=(20, 2))
    a, b = 2.5, -0.7
    X = build_design(a * Z1 + b * Z2, S).values
    X1, X2 = build_design(Z1, S).values, build_design(Z2, S).values
    cols = slice(1 + 3, None)
    np.testing.assert_allclose(X[:, cols], a * X1[:, cols] + b * X2[:, cols], atol=1e-12)


def test_partition_indicators_sum_to_one():
    g = np.arange(12) % 3
    S = (g[:, None] == np.arange(3)).astype(float)
    X = build_design(np.arange(12.0)[:, None], S)
    np.testing.assert_array_equal(X.values[:, 1:4].sum(axis=1), X.values[:, 0])


def test_reduce_design_partition_with_interactions():
    g = np.arange(30) % 3
    S = (g[:, None] == np.arange(3)).astype(float)
    Z = np.random.default_rng(0).normal(size=(30, 2))
    X = reduce_design(build_design(Z, S))
    assert {lab[0] for lab in X.labels} == {"subgroup", "interaction"}
    assert np.linalg.matrix_rank(X.values) == X.n_columns


def test_reduce_design_partition_main_effects_keeps_features():
    g = np.arange(30) % 3
    S = (g[:, None] == np.arange(3)).astype(float)
    Z = np.random.default_rng(0).normal(size=(30, 2))
    full = build_design(Z, S)
    main = full.select([i for i, lab in enumerate(full.labels) if lab[0] != "interaction"])
    X = reduce_design(main)
    assert [lab[0] for lab in X.labels] == ["subgroup"] * 3 + ["feature"] * 2


def test_reduce_design_overlapping_untouched():
    S = np.array([[1, 0], [1, 1], [0, 1], [0, 0]], dtype=float)
    X = build_design(np.arange(4.0)[:, None], S)
    assert reduce_design(X) is X


def test_constant_combination_recovers_ones(small_data):
    X = design_for(small_data)
    c = X.constant_combination()
    np.testing.assert_allclose(X.values @ c, 1.0, atol=1e-12)


def test_dataset_counts():
    d = Dataset(np.array([[0.0], [1.0], [2.0]]), np.array([1, 0, 1]))
    assert (d.n, d.n_treated, d.n_control) == (3, 2, 1)


@pytest.mark.parametrize("T, msg", [([1, 2, 0], "non-binary treatment"), ([1, 1, 1], "untreated")])
def test_dataset_rejects_bad_treatment(T, msg):
    with pytest.raises(DataError, match=msg):
        Dataset(np.array([[0.0], [1.0], [2.0]]), np.array(T))


def test_dataset_rejects_constant_covariate():
    with pytest.raises(DataError, match="constant"):
        Dataset(np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]]), np.array([1, 0, 1]))


def test_dataset_rejects_single_unit():
    with pytest.raises(DataError):
        Dataset(np.array([[0.0]]), np.array([1]))


def test_dataset_arrays_read_only(small_data):
    with pytest.raises(ValueError):
        small_data.covariates[0, 0] = 1.0


def test_estimand_parse():
    assert Estimand.parse("ate") is Estimand.ATE
    assert Estimand.parse(Estimand.ATT) is Estimand.ATT
    with pytest.raises(DataError):
        Estimand.parse("ATC")


def _write(tmp_path, text):
    p = tmp_path / "d.csv"
    p.write_text(text, encoding="utf-8")
    return p


def test_load_csv_counts(tmp_path):
    p = _write(tmp_path, "T,Z,Y,S\n1,0.5,2,1\n0,1.5,1,0\n1,2.0,3,1\n")
    d = load_csv(p, ColumnRoles("T", ["Z"], "Y", ["S"]))
    assert (d.n_treated, d.n_control, d.n_subgroups) == (2, 1, 1)


def test_load_csv_non_binary_treatment(tmp_path):
    p = _write(tmp_path, "T,Z\n1,0.5\n2,1.5\n0,2.0\n")
    with pytest.raises(DataError, match="non-binary treatment"):
        load_csv(p, ColumnRoles("T", ["Z"]))


def test_load_csv_missing_outcome_column_named(tmp_path):
    p = _write(tmp_path, "T,Z\n1,0.5\n0,1.5\n")
    with pytest.raises(DataError, match="'Y'"):
        load_csv(p, ColumnRoles("T", ["Z"], "Y"))


def test_load_csv_missing_cell(tmp_path):
    p = _write(tmp_path, "T,Z\n1,\n0,1.5\n1,2\n")
    with pytest.raises(DataError, match="missing cells"):
        load_csv(p, ColumnRoles("T", ["Z"]))


def test_load_csv_non_numeric(tmp_path):
    p = _write(tmp_path, "T,Z\n1,abc\n0,1.5\n1,2\n")
    with pytest.raises(DataError, match="non-numeric"):
        load_csv(p, ColumnRoles("T", ["Z"]))


def test_load_csv_non_binary_subgroup(tmp_path):
    p = _write(tmp_path, "T,Z,S\n1,0.5,3\n0,1.5,0\n1,2,1\n")
    with pytest.raises(DataError, match="non-binary"):
        load_csv(p, ColumnRoles("T", ["Z"], subgroups=["S"]))
