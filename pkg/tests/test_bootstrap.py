import numpy as np
import pytest

from nestedtrial.bootstrap import (
    BootstrapConfig,
    BootstrapError,
    bootstrap_ci,
    percentile_interval,
    report_for,
    resample_indices,
)
from nestedtrial.data import CohortDataset
from nestedtrial.estimators import Analysis, Estimator

COV = ("x1", "x2")


def order_statistic_quantile(values, q):
    """Independent linear-interpolation quantile: position h = (n-1) q."""
    v = sorted(values)
    h = (len(v) - 1) * q
    lo = int(np.floor(h))
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (h - lo) * (v[hi] - v[lo])


@pytest.mark.parametrize("level", [0.5, 0.8, 0.9, 0.95, 0.99])
def test_percentile_interval_matches_hand_quantiles(level):
    rng = np.random.default_rng(int(level * 100))
    draws = rng.standard_t(3, size=537)
    lo, hi = percentile_interval(draws, level)
    a = (1 - level) / 2
    assert lo == pytest.approx(order_statistic_quantile(draws, a), abs=1e-12)
    assert hi == pytest.approx(order_statistic_quantile(draws, 1 - a), abs=1e-12)


def test_percentile_interval_order_independent():
    v = np.arange(20.0)
    assert percentile_interval(v) == percentile_interval(v[::-1])


def test_resample_streams_are_per_replicate():
    a = resample_indices(50, 7, 3)
    assert np.array_equal(a, resample_indices(50, 7, 3))
    assert not np.array_equal(a, resample_indices(50, 7, 4))
    assert a.min() >= 0 and a.max() < 50


def test_constant_outcome_gives_degenerate_interval(cohort):
    const = cohort.with_outcome(np.full(cohort.n_total, 2.5))
    res = bootstrap_ci(const, Analysis(COV, COV, family="gaussian"), BootstrapConfig(20, seed=3))
    for est in Estimator:
        if est is Estimator.IPW:
            continue  # N-divided IPW is not location invariant
        rep = report_for(res, est)
        assert rep.point == pytest.approx(0.0, abs=1e-9)
        assert rep.ci_low == pytest.approx(0.0, abs=1e-9) and rep.ci_high == pytest.approx(0.0, abs=1e-9)


def test_determinism_and_parallel_equivalence(cohort):
    an = Analysis(COV, COV)
    a = bootstrap_ci(cohort, an, BootstrapConfig(4, seed=11))
    b = bootstrap_ci(cohort, an, BootstrapConfig(4, seed=11))
    c = bootstrap_ci(cohort, an, BootstrapConfig(4, seed=11, n_jobs=2))
    for key in a.reports:
        assert a.reports[key] == b.reports[key] == c.reports[key]
        np.testing.assert_array_equal(a.replicate_estimates[key], c.replicate_estimates[key])
    d = bootstrap_ci(cohort, an, BootstrapConfig(4, seed=12))
    assert any(a.reports[k] != d.reports[k] for k in a.reports)


def test_resampling_unit_is_cohort_row(cohort, monkeypatch):
    import nestedtrial.bootstrap as bs

    seen = []
    real = bs.estimate

    def spy(data, analysis, warn=True):
        seen.append(data)
        return real(data, analysis, warn=warn)

    monkeypatch.setattr(bs, "estimate", spy)
    bootstrap_ci(cohort, Analysis(COV, COV), BootstrapConfig(3, seed=5))
    for r, data in enumerate(seen[1:]):
        rows = resample_indices(cohort.n_total, 5, r)
        assert data.n_total == cohort.n_total
        np.testing.assert_array_equal(data.participation, cohort.participation[rows])
        np.testing.assert_array_equal(data.covariates, cohort.covariates[rows])


def _fragile_cohort():
    # one treated trial row: many resamples lose the arm entirely
    n = 60
    s = np.zeros(n, dtype=bool)
    s[:12] = True
    a = np.where(s, 0.0, np.nan)
    a[0] = 1.0
    y = np.where(s, np.arange(n, dtype=float), np.nan)
    return CohortDataset.from_arrays(s, np.random.default_rng(0).normal(size=(n, 2)), a, y)


def test_failed_replicates_abort_or_skip():
    ds = _fragile_cohort()
    an = Analysis((), ())
    with pytest.raises(BootstrapError, match="failed"):
        bootstrap_ci(ds, an, BootstrapConfig(50, seed=1))
    with pytest.raises(BootstrapError, match="replicate"):
        bootstrap_ci(ds, an, BootstrapConfig(50, seed=1, failure_policy="abort"))


def test_config_validation():
    with pytest.raises(ValueError):
        BootstrapConfig(1)
    with pytest.raises(ValueError):
        BootstrapConfig(10, ci_level=1.0)
    with pytest.raises(ValueError):
        BootstrapConfig(10, failure_policy="retry")


def test_ratio_contrast_reported(binary_cohort):
    res = bootstrap_ci(binary_cohort, Analysis(COV, COV), BootstrapConfig(30, seed=2), contrasts=("difference", "ratio"))
    rep = report_for(res, "dr2", "ratio")
    assert rep.ci_low <= rep.ci_high and rep.point > 0
    assert res.skipped == 0 and res.valid
