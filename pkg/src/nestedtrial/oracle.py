"""Brute-force ground truth for small discrete cohorts.

With at most a handful of covariate patterns the identified mean
``E_X[E[Y | A=a, X, S=1]]`` can be computed by direct enumeration. Saturated
nuisance models should reproduce it exactly, which makes this a cheap check
on the estimator code paths.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

import numpy as np

from .data import CohortDataset

MAX_PATTERNS = 8


@dataclass(frozen=True)
class Cell:
    pattern: tuple
    count: int
    outcomes: Mapping[Hashable, Sequence[float]]

    @property
    def trial_count(self) -> int:
        return sum(len(v) for v in self.outcomes.values())


@dataclass(frozen=True)
class DiscreteCohortSpec:
    cells: tuple[Cell, ...]

    def __post_init__(self):
        cells = tuple(self.cells)
        object.__setattr__(self, "cells", cells)
        if not 1 <= len(cells) <= MAX_PATTERNS:
            raise ValueError(f"need 1..{MAX_PATTERNS} covariate patterns, got {len(cells)}")
        arms = set(cells[0].outcomes)
        for c in cells:
            if set(c.outcomes) != arms:
                raise ValueError("every cell must list the same treatment arms")
            if any(len(v) == 0 for v in c.outcomes.values()):
                raise ValueError(f"cell {c.pattern} lacks trial rows in some arm")
            if c.count < c.trial_count:
                raise ValueError(f"cell {c.pattern} has fewer rows than trial rows")

    @property
    def arms(self) -> tuple:
        return tuple(sorted(self.cells[0].outcomes))

    @property
    def n_total(self) -> int:
        return sum(c.count for c in self.cells)


def plugin_estimand(spec: DiscreteCohortSpec, arm) -> float:
    """``sum_x P(x) * mean(Y | A=arm, S=1, x)`` by enumeration."""
    n = spec.n_total
    return sum(c.count / n * (sum(c.outcomes[arm]) / len(c.outcomes[arm])) for c in spec.cells)


def analytic_true_effect_continuous(tau: float, psi: float) -> float:
    """Population effect for ``Y = tau*A + psi*X1*A + X*zeta + eps`` with
    ``E[X1] = 0``: the modification term averages out."""
    return float(tau)


def to_dataset(spec: DiscreteCohortSpec) -> tuple[CohortDataset, list[str]]:
    """Expand a spec into a cohort with one indicator column per
    non-reference cell, so intercept + indicators is a saturated design.

    Returns the dataset and the names of the indicator columns.
    """
    k = len(spec.cells)
    names = [f"cell{j}" for j in range(1, k)]
    s, x, t, y = [], [], [], []
    for j, c in enumerate(spec.cells):
        ind = np.zeros(k - 1)
        if j:
            ind[j - 1] = 1.0
        for arm, values in c.outcomes.items():
            for v in values:
                s.append(1)
                t.append(arm)
                y.append(float(v))
                x.append(ind)
        for _ in range(c.count - c.trial_count):
            s.append(0)
            t.append(None)
            y.append(np.nan)
            x.append(ind)
    xs = np.array(x, dtype=float).reshape(len(s), k - 1)
    ds = CohortDataset.from_arrays(
        np.array(s), xs, np.array(t, dtype=object), np.array(y),
        covariate_names=names, treatment_levels=spec.arms,
    )
    return ds, names


def random_spec(rng: np.random.Generator, *, max_patterns: int = MAX_PATTERNS, arms=(0, 1)) -> DiscreteCohortSpec:
    """Random spec with at least one trial row per arm and one
    non-participant in every cell, so saturated logits stay finite."""
    k = int(rng.integers(1, max_patterns + 1))
    cells = []
    for j in range(k):
        outcomes = {
            a: list(np.round(rng.normal(size=int(rng.integers(1, 6))) * 3, 3)) for a in arms
        }
        trial = sum(len(v) for v in outcomes.values())
        count = trial + int(rng.integers(1, 15))
        cells.append(Cell((j,), count, outcomes))
    return DiscreteCohortSpec(tuple(cells))


def spec_from_dataset(data: CohortDataset) -> DiscreteCohortSpec:
    """Group a cohort with few distinct covariate patterns into cells."""
    patterns, inverse = np.unique(data.covariates, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    if len(patterns) > MAX_PATTERNS:
        raise ValueError(
            f"{len(patterns)} distinct covariate patterns; the oracle handles at most {MAX_PATTERNS}"
        )
    cells = []
    for j, pat in enumerate(patterns):
        rows = inverse == j
        outcomes = {
            lvl: [float(v) for v in data.outcome[rows & data.in_arm(lvl)]]
            for lvl in data.treatment_levels
        }
        cells.append(Cell(tuple(float(v) for v in pat), int(rows.sum()), outcomes))
    return DiscreteCohortSpec(tuple(cells))
