import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import logit

from nestedtrial.glm import (
    ConvergenceError,
    Family,
    RankDeficientError,
    SeparationError,
    fit_glm,
    log_likelihood,
    predict_mean,
    score,
)


def _cells(p0, p1, n=10):
    x = np.repeat([0.0, 1.0], n)
    y = np.concatenate([np.arange(n) < p0 * n, np.arange(n) < p1 * n]).astype(float)
    return np.column_stack([np.ones(2 * n), x]), y


def test_intercept_only_logit_symmetric():
    fit = fit_glm(np.ones((4, 1)), [0, 1, 1, 0], family="binomial")
    assert fit.converged
    assert fit.coefficients[0] == pytest.approx(0.0, abs=1e-12)


def test_intercept_only_identity_is_mean():
    fit = fit_glm(np.ones((3, 1)), [1.0, 2.0, 3.0])
    assert fit.coefficients[0] == pytest.approx(2.0, abs=1e-12)


def test_saturated_logit_matches_cell_logits():
    x, y = _cells(0.2, 0.8)
    fit = fit_glm(x, y, family=Family.BINOMIAL)
    # independent route: logit of the observed cell proportions
    b0 = logit(y[x[:, 1] == 0].mean())
    b1 = logit(y[x[:, 1] == 1].mean()) - b0
    np.testing.assert_allclose(fit.coefficients, [b0, b1], atol=1e-9)
    np.testing.assert_allclose(fit.coefficients, [-1.3862944, 2.7725887], atol=1e-6)


def test_predict_mean_examples():
    from nestedtrial.glm import FittedGlm

    zeros = np.zeros(2)
    design = np.array([[1.0, 3.0], [1.0, -2.0]])
    logit_m = FittedGlm(Family.BINOMIAL, zeros, True, 1, 0.0)
    ident_m = FittedGlm(Family.GAUSSIAN, zeros, True, 1, 0.0)
    np.testing.assert_array_equal(predict_mean(logit_m, design), [0.5, 0.5])
    np.testing.assert_array_equal(predict_mean(ident_m, design), [0.0, 0.0])
    m = FittedGlm(Family.BINOMIAL, np.array([-1.3863, 2.7726]), True, 1, 0.0)
    assert predict_mean(m, [1.0, 1.0])[0] == pytest.approx(0.8, abs=1e-4)
    with pytest.raises(ValueError):
        predict_mean(m, np.ones((2, 3)))


def _random_problem(rng, family, n=40, p=3):
    x = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
    beta = rng.normal(scale=0.7, size=p)
    w = rng.uniform(0.2, 3.0, size=n)
    if family is Family.BINOMIAL:
        y = (rng.random(n) < 1 / (1 + np.exp(-x @ beta))).astype(float)
    else:
        y = x @ beta + rng.normal(size=n)
    return x, y, w


@pytest.mark.parametrize("family", list(Family))
def test_score_at_solution_is_recomputable(family):
    rng = np.random.default_rng(3)
    x, y, w = _random_problem(rng, family)
    fit = fit_glm(x, y, w, family)
    recomputed = np.max(np.abs(score(fit.coefficients, x, y, w, family)))
    assert recomputed <= 1e-8
    assert fit.max_score == pytest.approx(recomputed, abs=1e-14)


@pytest.mark.parametrize("family", list(Family))
def test_score_matches_finite_differences(family):
    rng = np.random.default_rng(11)
    for _ in range(10):
        x, y, w = _random_problem(rng, family)
        c = rng.normal(scale=0.5, size=x.shape[1])
        analytic = score(c, x, y, w, family)
        h = 1e-5
        numeric = np.array([
            (log_likelihood(c + h * e, x, y, w, family) - log_likelihood(c - h * e, x, y, w, family)) / (2 * h)
            for e in np.eye(x.shape[1])
        ])
        np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(scale=st.floats(1e-3, 1e4), seed=st.integers(0, 2**32 - 1))
def test_weight_scaling_invariance(scale, seed):
    rng = np.random.default_rng(seed)
    x, y, w = _random_problem(rng, Family.BINOMIAL, n=60)
    try:
        base = fit_glm(x, y, w, "binomial")
    except SeparationError:
        return
    scaled = fit_glm(x, y, w * scale, "binomial")
    np.testing.assert_allclose(scaled.coefficients, base.coefficients, atol=1e-8)


def test_saturated_fit_reproduces_weighted_cell_means():
    rng = np.random.default_rng(5)
    cell = rng.integers(0, 4, size=200)
    x = np.column_stack([np.ones(200)] + [(cell == k).astype(float) for k in (1, 2, 3)])
    w = rng.uniform(0.1, 5, size=200)
    y_bin = (rng.random(200) < 0.4).astype(float)
    y_cont = rng.normal(size=200)
    for fam, y in (("binomial", y_bin), ("gaussian", y_cont)):
        fit = fit_glm(x, y, w, fam)
        pred = predict_mean(fit, x)
        for k in range(4):
            m = cell == k
            np.testing.assert_allclose(pred[m], np.sum(w[m] * y[m]) / np.sum(w[m]), atol=1e-10)


def test_deterministic():
    rng = np.random.default_rng(8)
    x, y, w = _random_problem(rng, Family.BINOMIAL)
    a = fit_glm(x, y, w, "binomial")
    b = fit_glm(x, y, w, "binomial")
    np.testing.assert_array_equal(a.coefficients, b.coefficients)


def test_separation_names_column():
    x = np.column_stack([np.ones(20), np.linspace(-1, 1, 20)])
    y = (x[:, 1] > 0).astype(float)
    with pytest.raises(SeparationError) as err:
        fit_glm(x, y, family="binomial")
    assert err.value.column in (0, 1)
    assert "column" in str(err.value)


def test_rank_deficient_design():
    z = np.arange(10.0)
    x = np.column_stack([np.ones(10), z, 2 * z])
    with pytest.raises(RankDeficientError):
        fit_glm(x, z + 1.0)


def test_zero_weights_can_make_design_deficient():
    x = np.column_stack([np.ones(6), [0, 0, 0, 1, 1, 1]])
    w = np.array([1, 1, 1, 0, 0, 0.0])
    with pytest.raises(RankDeficientError):
        fit_glm(x, np.arange(6.0), w)


def test_nonconvergence_reports_iterations():
    rng = np.random.default_rng(1)
    x, y, _ = _random_problem(rng, Family.BINOMIAL)
    with pytest.raises(ConvergenceError) as err:
        fit_glm(x, y, family="binomial", max_iter=1)
    assert err.value.iterations == 1
    assert err.value.max_score > 0


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(design=np.ones((3, 1)), response=[0, 1, 2], family="binomial"),
        dict(design=np.ones((3, 1)), response=[0, 1], family="gaussian"),
        dict(design=np.ones((3, 1)), response=[0, 1, 1], weights=[0, 0, 0], family="binomial"),
        dict(design=np.ones((3, 1)), response=[0, 1, 1], weights=[1, -1, 1], family="binomial"),
        dict(design=np.array([[1.0], [np.nan], [1.0]]), response=[0, 1, 1], family="binomial"),
    ],
)
def test_invalid_inputs(kwargs):
    with pytest.raises(ValueError):
        fit_glm(**kwargs)


def test_family_aliases():
    assert Family.parse("logit") is Family.BINOMIAL
    assert Family.parse("gaussian_identity") is Family.GAUSSIAN
    with pytest.raises(ValueError):
        Family.parse("poisson")
