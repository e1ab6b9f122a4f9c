import numpy as np
import pytest

from nestedtrial.data import CohortDataset, SchemaError, read_csv, write_csv


def test_from_arrays_and_accessors():
    ds = CohortDataset.from_arrays([1, 1, 0, 1], [[0.0], [1.0], [2.0], [3.0]], [1, 0, None, 1], [2.0, 3.0, None, 4.0])
    assert ds.n_total == 4 and ds.n_trial == 3
    assert ds.treatment_levels == (0, 1)
    np.testing.assert_array_equal(ds.in_arm(1), [True, False, False, True])
    assert np.isnan(ds.outcome[2])
    np.testing.assert_array_equal(ds.design(["x1"])[:, 0], 1.0)


def test_arrays_are_read_only(cohort):
    with pytest.raises(ValueError):
        cohort.outcome[0] = 1.0


@pytest.mark.parametrize(
    "s, a, y, msg",
    [
        ([0, 0], [None, None], [None, None], "no trial"),
        ([1, 1], [0, 0], [1.0, 2.0], None),  # treatment level 1 declared but absent
        ([1, 0], [0, None], [np.nan, np.nan], "outcome"),
    ],
)
def test_schema_violations(s, a, y, msg):
    with pytest.raises(SchemaError):
        CohortDataset.from_arrays(s, [[0.0], [1.0]], a, y, treatment_levels=(0, 1))


def test_nonfinite_covariates_rejected():
    with pytest.raises(SchemaError):
        CohortDataset.from_arrays([1, 1], [[np.inf], [1.0]], [0, 1], [1.0, 2.0])


def test_csv_round_trip_is_lossless(tmp_path, cohort):
    path = tmp_path / "c.csv"
    write_csv(cohort, path)
    back = read_csv(path, participation="S", treatment="A", outcome="Y", covariates=["x1", "x2"])
    np.testing.assert_array_equal(back.covariates, cohort.covariates)
    np.testing.assert_array_equal(back.participation, cohort.participation)
    np.testing.assert_array_equal(back.arm, cohort.arm)
    np.testing.assert_array_equal(back.outcome[back.participation], cohort.outcome[cohort.participation])


def test_csv_complete_case_and_unused_columns(tmp_path, caplog):
    path = tmp_path / "c.csv"
    path.write_text(
        "S,A,Y,age,note\n"
        "1,surgery,1,50,a\n"
        "1,medical,0,,b\n"
        "1,medical,1,61,c\n"
        "0,,,70,d\n"
        "0,,,NA,e\n"
    )
    with caplog.at_level("WARNING"):
        ds = read_csv(path, participation="S", treatment="A", outcome="Y", covariates=["age"])
    assert ds.n_total == 3
    assert ds.dropped_incomplete == 2
    assert set(ds.treatment_levels) == {"medical", "surgery"}
    assert "note" in caplog.text


@pytest.mark.parametrize(
    "body",
    [
        "S,A,Y,x\n1,1,,0.5\n1,0,1,0.2\n",   # trial row without outcome
        "S,A,Y,x\n1,1,1,0.5\n0,1,,0.2\n1,0,0,1\n",  # non-participant with treatment
        "S,A,Y,x\n2,1,1,0.5\n",             # bad participation code
        "S,A,Y,x\n1,1,1,abc\n",             # non-numeric covariate
    ],
)
def test_csv_schema_errors(tmp_path, body):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(SchemaError):
        read_csv(path, participation="S", treatment="A", outcome="Y", covariates=["x"])


def test_csv_missing_column(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("S,A,Y\n1,1,1\n")
    with pytest.raises(SchemaError, match="missing"):
        read_csv(path, participation="S", treatment="A", outcome="Y", covariates=["x"])
