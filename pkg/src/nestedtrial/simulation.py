"""Simulated cohorts with a nested trial, design-constant calibration, and
bias/variance/MSE summaries over replicates.

Data generation:

    X ~ N(0, I_3)
    S | X ~ Bernoulli(expit(theta0 + X @ theta_rest))
    A | S=1 ~ Bernoulli(0.5)
    Y = tau*A + psi*X1*A + (1, X) @ zeta + eps            (continuous)
    Y ~ Bernoulli(expit(tau*A + psi*X1*A + (1, X) @ zeta))  (binary)

with A and Y observed only when S=1.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy import optimize
from scipy.special import expit, logit

from .data import CohortDataset, SchemaError
from .estimators import (
    ALL_ESTIMATORS,
    TABLE_LABELS,
    Analysis,
    EstimationError,
    contrast_value,
    estimate,
)
from .glm import GlmError

log = logging.getLogger(__name__)

COVARIATES = ("X1", "X2", "X3")
GH_NODES = 200
PARAM_TOL = 1e-10
MAX_SKIP_FRACTION = 0.01

_gh_x, _gh_w = np.polynomial.hermite_e.hermegauss(GH_NODES)
_gh_w = _gh_w / _gh_w.sum()


def expected_expit(mean: float, sd: float) -> float:
    """``E[expit(Z)]`` for ``Z ~ N(mean, sd^2)`` by Gauss-Hermite quadrature."""
    return float(np.dot(_gh_w, expit(mean + sd * _gh_x)))


class CalibrationError(RuntimeError):
    pass


def _solve_monotone(f, start: float = 0.0, step: float = 1.0, limit: float = 200.0) -> float:
    """Root of an increasing function, expanding a bracket from ``start``."""
    lo, hi = start - step, start + step
    while f(lo) > 0:
        lo -= 2 * (hi - lo)
        if lo < -limit:
            raise CalibrationError("could not bracket root from below")
    while f(hi) < 0:
        hi += 2 * (hi - lo)
        if hi > limit:
            raise CalibrationError("could not bracket root from above")
    if f(lo) == 0:
        return lo
    if f(hi) == 0:
        return hi
    return optimize.brentq(f, lo, hi, xtol=PARAM_TOL, rtol=4 * np.finfo(float).eps)


def calibrate_intercept(theta_rest: Sequence[float], n_total: int, target_n: float) -> float:
    """Intercept giving an expected participation fraction of target_n/N.

    ``X @ theta_rest`` is exactly normal with sd ``||theta_rest||``, so the
    expectation is one-dimensional.
    """
    q = target_n / n_total
    if not 0 < q < 1:
        raise CalibrationError(f"target fraction {q} outside (0, 1)")
    sd = float(np.linalg.norm(theta_rest))
    return _solve_monotone(lambda t: expected_expit(t, sd) - q, start=float(logit(q)))


def arm_risks(tau: float, psi: float, zeta: Sequence[float]) -> tuple[float, float]:
    """Marginal ``(E[Y^1], E[Y^0])`` under the binary outcome model."""
    z0, z1, z2, z3 = zeta
    sd1 = math.sqrt((psi + z1) ** 2 + z2**2 + z3**2)
    sd0 = math.sqrt(z1**2 + z2**2 + z3**2)
    return expected_expit(tau + z0, sd1), expected_expit(z0, sd0)


def _log_odds(p: float) -> float:
    return math.log(p) - math.log1p(-p)


def marginal_log_or(tau: float, psi: float, zeta: Sequence[float]) -> float:
    p1, p0 = arm_risks(tau, psi, zeta)
    return _log_odds(p1) - _log_odds(p0)


def calibrate_tau_binary(target_marginal_or: float, psi: float, zeta: Sequence[float] = (0, 1, 1, 1)) -> float:
    """Conditional main effect ``tau`` producing the requested marginal OR."""
    if target_marginal_or <= 0:
        raise CalibrationError("target odds ratio must be positive")
    target = math.log(target_marginal_or)
    return _solve_monotone(lambda t: marginal_log_or(t, psi, zeta) - target, start=target)


@dataclass(frozen=True)
class SimScenario:
    outcome_kind: str = "continuous"
    N: int = 100_000
    target_n: int = 5000
    tau: float = 0.0
    psi: float = 0.0
    theta_rest: tuple = (1.0, 1.0, 1.0)
    zeta: tuple | None = None
    noise_sd: float = 0.5
    replicates: int = 200
    seed: int | None = None
    contrast: str | None = None
    name: str = ""

    def __post_init__(self):
        if self.outcome_kind not in ("continuous", "binary"):
            raise ValueError(f"outcome_kind must be continuous or binary, got {self.outcome_kind!r}")
        if self.zeta is None:
            zeta = (-3.0, 1.0, 1.0, 1.0) if self.outcome_kind == "continuous" else (0.0, 1.0, 1.0, 1.0)
            object.__setattr__(self, "zeta", zeta)
        object.__setattr__(self, "zeta", tuple(float(v) for v in self.zeta))
        object.__setattr__(self, "theta_rest", tuple(float(v) for v in self.theta_rest))
        if len(self.zeta) != 4 or len(self.theta_rest) != 3:
            raise ValueError("zeta needs 4 entries and theta_rest 3")
        if not 0 < self.target_n < self.N:
            raise ValueError("need 0 < target_n < N")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.outcome_kind == "continuous" and self.noise_sd <= 0:
            raise ValueError("noise_sd must be positive")
        if self.contrast is None:
            object.__setattr__(
                self, "contrast", "difference" if self.outcome_kind == "continuous" else "odds_ratio"
            )


def generate_cohort(
    scenario: SimScenario,
    theta0: float,
    replicate_index: int,
    scenario_index: int = 0,
) -> CohortDataset:
    """One simulated cohort; the RNG stream depends only on
    (scenario seed, scenario index, replicate index)."""
    seed = 0 if scenario.seed is None else scenario.seed
    rng = np.random.default_rng([seed, scenario_index, replicate_index])
    n = scenario.N
    x = rng.standard_normal((n, 3))
    s = rng.random(n) < expit(theta0 + x @ np.asarray(scenario.theta_rest))
    a = np.where(s, (rng.random(n) < 0.5).astype(float), np.nan)
    a0 = np.where(s, a, 0.0)
    z = np.asarray(scenario.zeta)
    lin = scenario.tau * a0 + scenario.psi * x[:, 0] * a0 + z[0] + x @ z[1:]
    if scenario.outcome_kind == "continuous":
        y = lin + scenario.noise_sd * rng.standard_normal(n)
    else:
        y = (rng.random(n) < expit(lin)).astype(float)
    y = np.where(s, y, np.nan)
    return CohortDataset.from_arrays(s, x, a, y, covariate_names=COVARIATES, treatment_levels=(0, 1))


def true_effect(scenario: SimScenario, contrast: str | None = None) -> float:
    """Population effect of treatment 1 vs 0 on the requested scale."""
    kind = contrast or scenario.contrast
    if scenario.outcome_kind == "continuous":
        if kind != "difference":
            raise ValueError("continuous scenarios support only the difference contrast")
        return float(scenario.tau)
    p1, p0 = arm_risks(scenario.tau, scenario.psi, scenario.zeta)
    return contrast_value(p1, p0, kind)


def correct_analysis(scenario: SimScenario, **overrides) -> Analysis:
    """Working models matching the generating process.

    IPW is summarized in its weight-normalized form here; the N-divided form
    has several times the replicate variance under this design.
    """
    kw = dict(
        participation_covariates=COVARIATES,
        outcome_covariates=COVARIATES,
        treatment_prob_mode="estimated",
        treatment_covariates=(),
        family="gaussian" if scenario.outcome_kind == "continuous" else "binomial",
        normalized_ipw=True,
    )
    kw.update(overrides)
    return Analysis(**kw)


@dataclass(frozen=True)
class SimSummary:
    """Bias, variance and MSE of each estimator's effect estimate.

    ``per_arm`` keeps the raw arm means (replicates x estimators x 2,
    order: arm 1 then arm 0) so other contrast scales can be summarized
    from the same replicates.
    """

    scenario: SimScenario
    contrast: str
    true_effect: float
    bias: dict
    variance: dict
    mse: dict
    replicates_completed: int
    replicates_failed: int
    per_arm: np.ndarray = field(repr=False)
    estimators: tuple = ALL_ESTIMATORS

    @property
    def valid(self) -> bool:
        total = self.replicates_completed + self.replicates_failed
        return self.replicates_completed > 0 and self.replicates_failed <= MAX_SKIP_FRACTION * total

    def rescale(self, contrast: str) -> "SimSummary":
        return summarize(self.scenario, self.per_arm, contrast, self.replicates_failed, self.estimators)


def summarize(scenario, per_arm, contrast, failed=0, estimators=ALL_ESTIMATORS) -> SimSummary:
    truth = true_effect(scenario, contrast)
    per_arm = np.asarray(per_arm, dtype=float).reshape(-1, len(estimators), 2)
    eff = np.array(
        [[contrast_value(m1, m0, contrast) for m1, m0 in row] for row in per_arm]
    ).reshape(per_arm.shape[0], len(estimators))
    bias, var, mse = {}, {}, {}
    for j, est in enumerate(estimators):
        e = eff[:, j]
        bias[est] = float(np.mean(e) - truth)
        var[est] = float(np.var(e))
        mse[est] = float(np.mean((e - truth) ** 2))
    return SimSummary(scenario, contrast, truth, bias, var, mse, per_arm.shape[0], failed, per_arm, tuple(estimators))


def run_replicate(scenario, theta0, r, scenario_index=0, analysis=None) -> np.ndarray | None:
    """Arm means for one replicate, or None if a model failed to fit."""
    analysis = analysis or correct_analysis(scenario)
    try:
        data = generate_cohort(scenario, theta0, r, scenario_index)
        res = estimate(data, analysis, warn=False)
    except (GlmError, EstimationError, SchemaError) as exc:
        log.debug("replicate %d failed: %s", r, exc)
        return None
    return np.array([[res.estimates[e].per_arm[1], res.estimates[e].per_arm[0]] for e in analysis.estimators])


def run_scenario(
    scenario: SimScenario,
    *,
    scenario_index: int = 0,
    analysis: Analysis | None = None,
    n_jobs: int = 1,
) -> SimSummary:
    """Generate ``scenario.replicates`` cohorts, apply every estimator and
    summarize against the true population effect.

    ``analysis`` overrides the correctly specified working models, e.g. to
    drop a covariate from one nuisance model.
    """
    analysis = analysis or correct_analysis(scenario)
    theta0 = calibrate_intercept(scenario.theta_rest, scenario.N, scenario.target_n)
    reps = range(scenario.replicates)
    if n_jobs == 1:
        rows = [run_replicate(scenario, theta0, r, scenario_index, analysis) for r in reps]
    else:
        rows = Parallel(n_jobs=n_jobs)(
            delayed(run_replicate)(scenario, theta0, r, scenario_index, analysis) for r in reps
        )
    ok = [r for r in rows if r is not None]
    failed = len(rows) - len(ok)
    if failed:
        log.warning("%s: %d of %d replicates failed", scenario.name or "scenario", failed, len(rows))
    if not ok:
        raise EstimationError("every replicate failed")
    per_arm = np.stack(ok)
    # non-difference scales can be undefined for a replicate (arm mean of 0 or 1)
    return summarize(scenario, per_arm, scenario.contrast, failed, analysis.estimators)


@dataclass
class FactorialRow:
    index: int
    scenario: SimScenario
    summary: SimSummary | None
    error: str | None = None


def run_factorial(
    grid: Sequence[SimScenario],
    *,
    master_seed: int = 20240101,
    n_jobs: int = 1,
) -> list[FactorialRow]:
    """Run every scenario in order; a failing scenario is reported and the
    rest still run. Scenarios without an explicit seed get one derived from
    ``master_seed`` and their position in the grid."""
    if not grid:
        raise ValueError("empty scenario grid")
    rows = []
    for i, sc in enumerate(grid):
        if sc.seed is None:
            derived = int(np.random.SeedSequence([master_seed, i]).generate_state(1, np.uint64)[0])
            sc = replace(sc, seed=derived)
        try:
            rows.append(FactorialRow(i, sc, run_scenario(sc, n_jobs=n_jobs)))
        except Exception as exc:  # noqa: BLE001 - reported per scenario
            log.error("scenario %d failed: %s", i, exc)
            rows.append(FactorialRow(i, sc, None, str(exc)))
    return rows


def scenario_from_dict(d: dict, defaults: dict | None = None) -> SimScenario:
    merged = dict(defaults or {})
    merged.update(d)
    if "noise_variance" in merged:
        merged["noise_sd"] = math.sqrt(float(merged.pop("noise_variance")))
    if "marginal_or" in merged:
        target = float(merged.pop("marginal_or"))
        merged.setdefault("outcome_kind", "binary")
        zeta = merged.get("zeta") or (0.0, 1.0, 1.0, 1.0)
        merged["tau"] = calibrate_tau_binary(target, float(merged.get("psi", 0.0)), zeta)
    return SimScenario(**merged)


def expand_grid(config: dict) -> list[SimScenario]:
    """Scenario list from a config mapping.

    Either ``scenarios`` (explicit list) or ``grid`` (keys mapped to lists of
    values, expanded as a Cartesian product in key order) plus optional
    ``defaults``.
    """
    defaults = config.get("defaults", {})
    if "scenarios" in config:
        return [scenario_from_dict(d, defaults) for d in config["scenarios"]]
    grid = config.get("grid")
    if not grid:
        raise ValueError("config needs 'scenarios' or 'grid'")
    keys = list(grid)
    combos = [{}]
    for k in keys:
        vals = grid[k] if isinstance(grid[k], list) else [grid[k]]
        combos = [{**c, k: v} for c in combos for v in vals]
    return [scenario_from_dict(c, defaults) for c in combos]


CSV_COLUMNS = ["scenario", "outcome", "contrast", "N", "tau", "psi", "n", "metric",
               *(TABLE_LABELS[e] for e in ALL_ESTIMATORS), "true_effect", "replicates", "failed"]


def write_summary_csv(rows: Sequence[FactorialRow], path: str | Path) -> None:
    """One line per scenario, metric and contrast scale."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for row in rows:
            sc = row.scenario
            if row.summary is None:
                w.writerow([row.index + 1, sc.outcome_kind, sc.contrast, sc.N, sc.tau, sc.psi,
                            sc.target_n, "error", *([""] * len(ALL_ESTIMATORS)), "", 0, sc.replicates])
                continue
            scales = [sc.contrast]
            if sc.outcome_kind == "binary":
                scales += [c for c in ("odds_ratio", "difference", "ratio") if c != sc.contrast]
            for kind in scales:
                try:
                    summ = row.summary if kind == row.summary.contrast else row.summary.rescale(kind)
                except EstimationError:
                    continue
                for metric in ("bias", "variance", "mse"):
                    vals = getattr(summ, metric)
                    w.writerow([
                        row.index + 1, sc.outcome_kind, kind, sc.N, sc.tau, sc.psi, sc.target_n, metric,
                        *(f"{vals[e]:.6f}" if e in vals else "" for e in ALL_ESTIMATORS),
                        f"{summ.true_effect:.6f}", summ.replicates_completed, summ.replicates_failed,
                    ])


CASS_LIKE_COVARIATES = ("age", "angina", "prior_mi", "lad_obstruction", "lv_wall_score", "diseased_vessels", "ejection_fraction")


def cass_like_cohort(
    seed: int = 0,
    *,
    n_total: int = 1688,
    target_n: int = 733,
    log_or: float = 0.0,
) -> CohortDataset:
    """Synthetic binary-outcome cohort shaped like a registry with a nested
    two-arm trial (seven baseline covariates, roughly 40% randomized).

    ``log_or`` is the conditional treatment log odds ratio; 0 gives a null
    effect on every scale.
    """
    rng = np.random.default_rng([seed, 1688])
    age = rng.normal(51, 8, n_total)
    angina = rng.integers(0, 4, n_total).astype(float)
    prior_mi = (rng.random(n_total) < 0.6).astype(float)
    lad = np.clip(rng.normal(50, 30, n_total), 0, 100)
    lv = np.clip(rng.normal(8, 3, n_total), 5, 20)
    vessels = rng.integers(1, 4, n_total).astype(float)
    ef = np.clip(rng.normal(60, 12, n_total), 20, 85)
    x = np.column_stack([age, angina, prior_mi, lad, lv, vessels, ef])
    z = (x - x.mean(axis=0)) / x.std(axis=0)
    sel = z @ np.array([-0.3, -0.4, 0.0, -0.2, -0.3, 0.1, 0.3])
    sel0 = _solve_monotone(lambda t: float(np.mean(expit(t + sel))) - target_n / n_total)
    s = rng.random(n_total) < expit(sel0 + sel)
    a = np.where(s, (rng.random(n_total) < 0.5).astype(float), np.nan)
    risk = -1.6 + z @ np.array([0.4, 0.2, 0.2, 0.2, 0.5, 0.3, -0.5]) + log_or * np.nan_to_num(a)
    y = np.where(s, (rng.random(n_total) < expit(risk)).astype(float), np.nan)
    return CohortDataset.from_arrays(s, x, a, y, covariate_names=CASS_LIKE_COVARIATES, treatment_levels=(0, 1))
