"""Percentile bootstrap intervals over resampled cohorts.

Each replicate resamples whole cohort rows with replacement, refits every
nuisance model and recomputes all requested estimators. Replicate ``r`` uses
an RNG seeded from ``(seed, r)`` so results do not depend on how replicates
are distributed across workers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from .data import CohortDataset, SchemaError
from .estimators import (
    Analysis,
    EffectReport,
    EstimationError,
    EstimationResult,
    Estimator,
    contrast_value,
    estimate,
)
from .glm import GlmError

log = logging.getLogger(__name__)

DEFAULT_SEED = 20240101
MAX_SKIP_FRACTION = 0.01


class BootstrapError(RuntimeError):
    pass


@dataclass(frozen=True)
class BootstrapConfig:
    replicates: int = 1000
    seed: int = DEFAULT_SEED
    ci_level: float = 0.95
    failure_policy: str = "skip_and_count"
    n_jobs: int = 1

    def __post_init__(self):
        if self.replicates < 2:
            raise ValueError("need at least 2 bootstrap replicates")
        if not 0 < self.ci_level < 1:
            raise ValueError("ci_level must lie in (0, 1)")
        if self.failure_policy not in ("skip_and_count", "abort"):
            raise ValueError(f"unknown failure policy {self.failure_policy!r}")


@dataclass(frozen=True)
class BootstrapResult:
    point: EstimationResult
    reports: dict
    replicate_estimates: dict
    replicates: int
    skipped: int
    config: BootstrapConfig

    @property
    def valid(self) -> bool:
        return self.skipped <= MAX_SKIP_FRACTION * self.replicates


def resample_indices(n: int, seed: int, r: int) -> np.ndarray:
    rng = np.random.default_rng([seed, r])
    return rng.integers(0, n, size=n)


def percentile_interval(values, level: float = 0.95) -> tuple[float, float]:
    """Empirical quantiles with linear interpolation between order
    statistics (``numpy.quantile``'s default ``linear`` method)."""
    v = np.sort(np.asarray(values, dtype=float))
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(v, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def _replicate(data, analysis, seed, r, contrasts, policy):
    rows = resample_indices(data.n_total, seed, r)
    try:
        res = estimate(data.take(rows), analysis, warn=False)
        return [
            contrast_value(res.estimates[est].per_arm[a], res.estimates[est].per_arm[b], kind)
            for est, a, b, kind in contrasts
        ]
    except (GlmError, EstimationError, SchemaError) as exc:
        if policy == "abort":
            raise BootstrapError(f"bootstrap replicate {r} failed: {exc}") from exc
        log.debug("replicate %d skipped: %s", r, exc)
        return None


def bootstrap_ci(
    data: CohortDataset,
    analysis: Analysis,
    config: BootstrapConfig,
    *,
    arms: tuple | None = None,
    contrasts: tuple[str, ...] = ("difference",),
) -> BootstrapResult:
    """Point estimates on ``data`` plus percentile intervals for every
    (estimator, contrast) pair.

    ``arms`` is ``(a, a_ref)``; it defaults to the last and first treatment
    levels. Contrasts that are undefined at the point estimate (a ratio with
    a zero reference mean, say) are left out.
    """
    point = estimate(data, analysis)
    levels = data.treatment_levels
    a, b = arms if arms is not None else (levels[-1], levels[0])

    keys = []
    for est in analysis.estimators:
        for kind in contrasts:
            try:
                contrast_value(point.estimates[est].per_arm[a], point.estimates[est].per_arm[b], kind)
            except EstimationError as exc:
                log.warning("skipping %s %s: %s", est.value, kind, exc)
                continue
            keys.append((est, a, b, kind))

    seed = config.seed
    if config.n_jobs == 1:
        out = [_replicate(data, analysis, seed, r, keys, config.failure_policy) for r in range(config.replicates)]
    else:
        out = Parallel(n_jobs=config.n_jobs)(
            delayed(_replicate)(data, analysis, seed, r, keys, config.failure_policy)
            for r in range(config.replicates)
        )
    good = np.array([o for o in out if o is not None], dtype=float).reshape(-1, len(keys))
    skipped = config.replicates - good.shape[0]
    if skipped > MAX_SKIP_FRACTION * config.replicates:
        raise BootstrapError(
            f"{skipped} of {config.replicates} bootstrap replicates failed "
            f"(limit {MAX_SKIP_FRACTION:.0%})"
        )

    reports, draws = {}, {}
    for j, (est, a_, b_, kind) in enumerate(keys):
        col = good[:, j]
        lo, hi = percentile_interval(col, config.ci_level)
        pt = contrast_value(point.estimates[est].per_arm[a_], point.estimates[est].per_arm[b_], kind)
        reports[(est, kind)] = EffectReport(est, kind, (a_, b_), pt, lo, hi)
        draws[(est, kind)] = col
    return BootstrapResult(point, reports, draws, config.replicates, skipped, config)


def report_for(result: BootstrapResult, estimator, kind: str = "difference") -> EffectReport:
    return result.reports[(Estimator(estimator), kind)]
