"""Potential-outcome mean estimators for the population of trial-eligible
individuals, given a trial nested in a cohort.

All population estimators average over every cohort row (participants and
non-participants alike):

* ``om``   outcome-model standardization (g-formula),
* ``ipw``  inverse probability of participation-and-treatment weighting,
* ``dr1``  augmented IPW,
* ``dr2``  outcome regression weighted by the inverse probabilities.

``trial_only`` is the unadjusted arm mean among trial participants; it
targets the trial population rather than the cohort.
"""

from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass, field
from typing import Hashable, Mapping, NamedTuple, Sequence

import numpy as np

from .data import CohortDataset
from .glm import Family, FittedGlm, GlmError, fit_glm, predict_mean

log = logging.getLogger(__name__)


class Estimator(str, enum.Enum):
    TRIAL_ONLY = "trial_only"
    OM = "om"
    IPW = "ipw"
    DR1 = "dr1"
    DR2 = "dr2"


ALL_ESTIMATORS = tuple(Estimator)
POPULATION_ESTIMATORS = (Estimator.OM, Estimator.IPW, Estimator.DR1, Estimator.DR2)

TABLE_LABELS = {
    Estimator.TRIAL_ONLY: "Trial",
    Estimator.OM: "OM",
    Estimator.IPW: "IPW",
    Estimator.DR1: "DR1",
    Estimator.DR2: "DR2",
}


class NuisanceModelError(GlmError):
    """A participation, treatment or outcome model failed to fit."""

    def __init__(self, which: str, cause: Exception):
        super().__init__(f"{which} model failed: {cause}")
        self.which = which
        self.cause = cause


class EstimationError(RuntimeError):
    pass


class PositivityWarning(UserWarning):
    pass


@dataclass(frozen=True)
class WeightModel:
    """Source of ``w_a(X) = Pr[S=1 | X] * Pr[A=a | X, S=1]``.

    ``participation_model`` is None when every cohort row is in the trial,
    in which case the participation probability is identically 1.
    Treatment probabilities come either from ``treatment_models`` (one
    fitted logit per arm, normalized to sum to 1) or from
    ``known_probabilities``.
    """

    participation_model: FittedGlm | None
    participation_covariates: tuple
    treatment_levels: tuple
    treatment_models: Mapping[Hashable, FittedGlm] | None = None
    treatment_covariates: tuple = ()
    known_probabilities: Mapping[Hashable, float] | None = None
    truncation: float | None = None

    def participation_probability(self, data: CohortDataset) -> np.ndarray:
        if self.participation_model is None:
            return np.ones(data.n_total)
        return predict_mean(self.participation_model, data.design(self.participation_covariates))

    def treatment_probability(self, data: CohortDataset) -> dict:
        if self.known_probabilities is not None:
            return {
                lvl: np.full(data.n_total, float(self.known_probabilities[lvl]))
                for lvl in self.treatment_levels
            }
        x = data.design(self.treatment_covariates)
        levels = self.treatment_levels
        if len(levels) == 2:
            p1 = predict_mean(self.treatment_models[levels[1]], x)
            return {levels[0]: 1.0 - p1, levels[1]: p1}
        raw = {lvl: predict_mean(self.treatment_models[lvl], x) for lvl in levels}
        total = sum(raw.values())
        return {lvl: p / total for lvl, p in raw.items()}

    def weights(self, data: CohortDataset) -> tuple[dict, dict]:
        """Per-arm ``w_a`` for every cohort row and per-arm truncation counts."""
        ps = self.participation_probability(data)
        pa = self.treatment_probability(data)
        out, truncated = {}, {}
        for lvl in self.treatment_levels:
            w = ps * pa[lvl]
            if self.truncation is not None:
                low = w < self.truncation
                truncated[lvl] = int(np.sum(low & data.in_arm(lvl)))
                w = np.where(low, self.truncation, w)
            else:
                truncated[lvl] = 0
            out[lvl] = w
        return out, truncated


class NuisanceFit(NamedTuple):
    weight_model: WeightModel
    outcome_models: dict
    outcome_covariates: tuple
    family: Family


@dataclass(frozen=True)
class PotentialMeanEstimates:
    estimator: Estimator
    per_arm: dict
    n_used: int


@dataclass(frozen=True)
class EffectReport:
    estimator: Estimator
    contrast: str
    arms: tuple
    point: float
    ci_low: float | None = None
    ci_high: float | None = None


@dataclass(frozen=True)
class Diagnostics:
    n_total: int
    n_trial: int
    arm_counts: dict
    min_participation: float
    max_participation: float
    min_weight: dict
    truncated: dict
    dropped_incomplete: int = 0

    def as_dict(self) -> dict:
        return {
            "n_total": self.n_total,
            "n_trial": self.n_trial,
            "arm_counts": {str(k): v for k, v in self.arm_counts.items()},
            "min_participation_probability": self.min_participation,
            "max_participation_probability": self.max_participation,
            "min_weight": {str(k): v for k, v in self.min_weight.items()},
            "truncated_rows": {str(k): v for k, v in self.truncated.items()},
            "dropped_incomplete_rows": self.dropped_incomplete,
        }


def resolve_family(data: CohortDataset, family: Family | str | None) -> Family:
    if family is None or family == "auto":
        return Family.BINOMIAL if data.is_binary_outcome() else Family.GAUSSIAN
    return Family.parse(family)


def _fit(which: str, design, response, weights, family) -> FittedGlm:
    try:
        return fit_glm(design, response, weights, family)
    except GlmError as exc:
        raise NuisanceModelError(which, exc) from exc


def fit_nuisance_models(
    data: CohortDataset,
    participation_covariates: Sequence[str | int],
    outcome_covariates: Sequence[str | int],
    treatment_prob_mode: str = "estimated",
    *,
    treatment_covariates: Sequence[str | int] = (),
    known_probabilities: Mapping[Hashable, float] | None = None,
    family: Family | str | None = None,
    truncation: float | None = None,
) -> NuisanceFit:
    """Fit the participation, treatment and per-arm outcome models.

    The participation model is a logit of S on all cohort rows; the
    treatment model (when estimated) is a logit of arm membership on trial
    rows; each outcome model is fit on that arm's trial rows only.
    ``treatment_covariates`` defaults to an intercept-only model, which
    reproduces the observed allocation proportions.
    """
    family = resolve_family(data, family)
    s = data.participation
    levels = data.treatment_levels
    pcov, ocov, tcov = tuple(participation_covariates), tuple(outcome_covariates), tuple(treatment_covariates)

    if s.all():
        part = None
    else:
        part = _fit("participation", data.design(pcov), s.astype(float), None, Family.BINOMIAL)

    tmodels = None
    known = None
    if treatment_prob_mode == "known":
        known = dict(known_probabilities) if known_probabilities else {
            lvl: 1.0 / len(levels) for lvl in levels
        }
        if set(known) != set(levels):
            raise ValueError(f"known probabilities must cover exactly {levels}")
        if not all(0.0 < p < 1.0 for p in known.values()) or abs(sum(known.values()) - 1.0) > 1e-9:
            raise ValueError("known treatment probabilities must lie in (0,1) and sum to 1")
    elif treatment_prob_mode == "estimated":
        xt = data.design(tcov)[s]
        targets = levels[1:] if len(levels) == 2 else levels
        tmodels = {
            lvl: _fit(f"treatment[{lvl}]", xt, data.in_arm(lvl)[s].astype(float), None, Family.BINOMIAL)
            for lvl in targets
        }
    else:
        raise ValueError(f"treatment_prob_mode must be 'estimated' or 'known', got {treatment_prob_mode!r}")

    wm = WeightModel(part, pcov, levels, tmodels, tcov, known, truncation)

    xo = data.design(ocov)
    outcome_models = {}
    for lvl in levels:
        rows = data.in_arm(lvl)
        if rows.sum() < xo.shape[1]:
            raise NuisanceModelError(
                f"outcome[{lvl}]",
                EstimationError(f"{int(rows.sum())} trial rows for {xo.shape[1]} coefficients"),
            )
        outcome_models[lvl] = _fit(f"outcome[{lvl}]", xo[rows], data.outcome[rows], None, family)
    return NuisanceFit(wm, outcome_models, ocov, family)


def estimate_trial_only(data: CohortDataset, arm) -> float:
    rows = data.in_arm(arm)
    if not rows.any():
        raise EstimationError(f"arm {arm!r} has no trial rows")
    return float(np.mean(data.outcome[rows]))


def estimate_om(data: CohortDataset, outcome_models: Mapping, arm, outcome_covariates) -> float:
    g = predict_mean(outcome_models[arm], data.design(outcome_covariates))
    return float(np.mean(g))


def _arm_terms(data: CohortDataset, w: np.ndarray, arm) -> tuple[np.ndarray, np.ndarray]:
    ind = data.in_arm(arm)
    if np.any(w[ind] <= 0) or not np.all(np.isfinite(w[ind])):
        raise EstimationError(f"non-positive or non-finite weight among arm {arm!r} trial rows")
    y = np.where(ind, data.outcome, 0.0)
    return ind.astype(float), y


def _ipw(data, w, arm, normalized=False) -> float:
    ind, y = _arm_terms(data, w, arm)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(ind > 0, y / w, 0.0)
    if normalized:
        value = terms.sum() / np.where(ind > 0, 1.0 / w, 0.0).sum()
    else:
        value = terms.sum() / data.n_total
    if not np.isfinite(value):
        raise EstimationError("IPW estimate is not finite")
    return float(value)


def _dr1(data, w, g, arm) -> float:
    ind, y = _arm_terms(data, w, arm)
    if np.any(w <= 0):
        raise EstimationError("non-positive weight in cohort")
    value = np.mean(ind * y / w + (w - ind) / w * g)
    if not np.isfinite(value):
        raise EstimationError("DR1 estimate is not finite")
    return float(value)


def _dr2(data, w, x_out, arm, family) -> float:
    ind = data.in_arm(arm)
    if np.any(w[ind] <= 0):
        raise EstimationError(f"non-positive weight among arm {arm!r} trial rows")
    model = _fit(f"weighted outcome[{arm}]", x_out[ind], data.outcome[ind], 1.0 / w[ind], family)
    return float(np.mean(predict_mean(model, x_out)))


def estimate_ipw(data: CohortDataset, weights: WeightModel, arm, *, normalized: bool = False) -> float:
    """Inverse probability weighted arm mean.

    The default divides by the cohort size N. ``normalized=True`` divides by
    the sum of inverse weights instead (Hajek form).
    """
    w, _ = weights.weights(data)
    return _ipw(data, w[arm], arm, normalized)


def estimate_dr1(data: CohortDataset, weights: WeightModel, outcome_models: Mapping, arm, outcome_covariates) -> float:
    w, _ = weights.weights(data)
    g = predict_mean(outcome_models[arm], data.design(outcome_covariates))
    return _dr1(data, w[arm], g, arm)


def estimate_dr2(
    data: CohortDataset,
    weights: WeightModel,
    outcome_covariates,
    arm,
    family: Family | str | None = None,
) -> float:
    w, _ = weights.weights(data)
    return _dr2(data, w[arm], data.design(outcome_covariates), arm, resolve_family(data, family))


def contrast(mu: PotentialMeanEstimates, a, a_prime, kind: str = "difference") -> EffectReport:
    m1, m0 = mu.per_arm[a], mu.per_arm[a_prime]
    return EffectReport(mu.estimator, kind, (a, a_prime), contrast_value(m1, m0, kind))


def contrast_value(m1: float, m0: float, kind: str) -> float:
    if kind == "difference":
        return m1 - m0
    if kind == "ratio":
        if m0 == 0:
            raise EstimationError("risk ratio undefined: reference arm mean is 0")
        return m1 / m0
    if kind == "odds_ratio":
        if not (0 < m1 < 1 and 0 < m0 < 1):
            raise EstimationError("odds ratio requires both arm means in (0, 1)")
        return (m1 / (1 - m1)) / (m0 / (1 - m0))
    raise ValueError(f"unknown contrast {kind!r}")


@dataclass(frozen=True)
class Analysis:
    """Everything needed to go from a cohort to per-arm estimates.

    Re-running an Analysis on a bootstrap resample refits every nuisance
    model from scratch.
    """

    participation_covariates: tuple
    outcome_covariates: tuple
    treatment_prob_mode: str = "estimated"
    treatment_covariates: tuple = ()
    known_probabilities: Mapping | None = None
    family: str | None = None
    truncation: float | None = None
    normalized_ipw: bool = False
    estimators: tuple = ALL_ESTIMATORS
    positivity_threshold: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "participation_covariates", tuple(self.participation_covariates))
        object.__setattr__(self, "outcome_covariates", tuple(self.outcome_covariates))
        object.__setattr__(self, "treatment_covariates", tuple(self.treatment_covariates))
        object.__setattr__(self, "estimators", tuple(Estimator(e) for e in self.estimators))


@dataclass(frozen=True)
class EstimationResult:
    estimates: dict
    diagnostics: Diagnostics
    nuisance: NuisanceFit = field(repr=False)

    def effect(self, estimator, a, a_prime, kind="difference") -> EffectReport:
        return contrast(self.estimates[Estimator(estimator)], a, a_prime, kind)


def estimate(data: CohortDataset, analysis: Analysis, *, warn: bool = True) -> EstimationResult:
    """Fit nuisance models once and evaluate every requested estimator."""
    fam = resolve_family(data, analysis.family)
    nf = fit_nuisance_models(
        data,
        analysis.participation_covariates,
        analysis.outcome_covariates,
        analysis.treatment_prob_mode,
        treatment_covariates=analysis.treatment_covariates,
        known_probabilities=analysis.known_probabilities,
        family=fam,
        truncation=analysis.truncation,
    )
    wm = nf.weight_model
    w, truncated = wm.weights(data)
    ps = wm.participation_probability(data)
    levels = data.treatment_levels
    x_out = data.design(nf.outcome_covariates)
    g = {lvl: predict_mean(nf.outcome_models[lvl], x_out) for lvl in levels}

    diag = Diagnostics(
        n_total=data.n_total,
        n_trial=data.n_trial,
        arm_counts={lvl: int(data.in_arm(lvl).sum()) for lvl in levels},
        min_participation=float(ps.min()),
        max_participation=float(ps.max()),
        min_weight={lvl: float(w[lvl].min()) for lvl in levels},
        truncated=truncated,
        dropped_incomplete=data.dropped_incomplete,
    )
    if warn and diag.min_participation < analysis.positivity_threshold:
        warnings.warn(
            f"estimated participation probability as low as {diag.min_participation:.2g}; "
            "inverse weights may be unstable",
            PositivityWarning,
            stacklevel=2,
        )
    if any(truncated.values()):
        log.info("truncated weights: %s", truncated)

    out = {}
    for est in analysis.estimators:
        per_arm = {}
        for lvl in levels:
            if est is Estimator.TRIAL_ONLY:
                per_arm[lvl] = estimate_trial_only(data, lvl)
            elif est is Estimator.OM:
                per_arm[lvl] = float(np.mean(g[lvl]))
            elif est is Estimator.IPW:
                per_arm[lvl] = _ipw(data, w[lvl], lvl, analysis.normalized_ipw)
            elif est is Estimator.DR1:
                per_arm[lvl] = _dr1(data, w[lvl], g[lvl], lvl)
            else:
                per_arm[lvl] = _dr2(data, w[lvl], x_out, lvl, fam)
        n_used = data.n_trial if est is Estimator.TRIAL_ONLY else data.n_total
        out[est] = PotentialMeanEstimates(est, per_arm, n_used)
    return EstimationResult(out, diag, nf)
