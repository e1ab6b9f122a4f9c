"""Weighted GLM fitting by iteratively reweighted least squares.

Only the two canonical-link families needed by the estimators are supported:
Gaussian with identity link and binomial with logit link.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import expit, log_expit

SCORE_TOL = 1e-8
STEP_TOL = 1e-10
MAX_ITER = 100
COEF_CAP = 30.0


class Family(str, enum.Enum):
    GAUSSIAN = "gaussian_identity"
    BINOMIAL = "binomial_logit"

    @classmethod
    def parse(cls, value: "Family | str") -> "Family":
        if isinstance(value, cls):
            return value
        aliases = {
            "gaussian": cls.GAUSSIAN,
            "identity": cls.GAUSSIAN,
            "binomial": cls.BINOMIAL,
            "logit": cls.BINOMIAL,
            "logistic": cls.BINOMIAL,
        }
        try:
            return aliases.get(value) or cls(value)
        except ValueError:
            raise ValueError(f"unknown GLM family {value!r}") from None

    def mean(self, eta: np.ndarray) -> np.ndarray:
        return expit(eta) if self is Family.BINOMIAL else eta

    def variance(self, mu: np.ndarray) -> np.ndarray:
        return mu * (1.0 - mu) if self is Family.BINOMIAL else np.ones_like(mu)


class GlmError(RuntimeError):
    """Base class for model-fitting failures."""


class ConvergenceError(GlmError):
    def __init__(self, iterations: int, max_score: float):
        super().__init__(
            f"IRLS did not converge after {iterations} iterations "
            f"(max |score| = {max_score:.3g})"
        )
        self.iterations = iterations
        self.max_score = max_score


class SeparationError(GlmError):
    def __init__(self, column: int, value: float):
        super().__init__(
            f"coefficient for design column {column} reached {value:.3g}; "
            "likely perfect separation"
        )
        self.column = column
        self.value = value


class RankDeficientError(GlmError):
    def __init__(self, rank: int, columns: int, dependent: list[int]):
        super().__init__(
            f"design has rank {rank} < {columns} columns "
            f"(dependent columns: {dependent})"
        )
        self.rank = rank
        self.dependent = dependent


@dataclass(frozen=True)
class FittedGlm:
    family: Family
    coefficients: np.ndarray
    converged: bool
    iterations: int
    max_score: float

    def predict(self, design: np.ndarray) -> np.ndarray:
        return predict_mean(self, design)


def add_intercept(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return np.column_stack([np.ones(x.shape[0]), x])


def score(coef, design, response, weights, family) -> np.ndarray:
    """Weighted score divided by the total weight.

    Normalizing by the weight sum makes the convergence criterion invariant
    to rescaling the weights.
    """
    family = Family.parse(family)
    mu = family.mean(design @ coef)
    return design.T @ (weights * (response - mu)) / weights.sum()


def log_likelihood(coef, design, response, weights, family) -> float:
    """Weighted (quasi-)log-likelihood on the same scale as :func:`score`."""
    family = Family.parse(family)
    eta = design @ coef
    if family is Family.BINOMIAL:
        ll = response * log_expit(eta) + (1.0 - response) * log_expit(-eta)
    else:
        ll = -0.5 * (response - eta) ** 2
    return float(np.sum(weights * ll) / weights.sum())


def _check_rank(design: np.ndarray, weights: np.ndarray) -> None:
    active = design[weights > 0] * np.sqrt(weights[weights > 0])[:, None]
    p = design.shape[1]
    if active.shape[0] < p:
        raise RankDeficientError(active.shape[0], p, list(range(active.shape[0], p)))
    r, piv = linalg.qr(active, mode="r", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag[0] * max(active.shape) * np.finfo(float).eps * 1e3 if diag.size else 0.0
    rank = int(np.sum(diag > tol))
    if rank < p:
        raise RankDeficientError(rank, p, sorted(int(j) for j in piv[rank:]))


def fit_glm(
    design,
    response,
    weights=None,
    family: Family | str = Family.GAUSSIAN,
    *,
    tol: float = SCORE_TOL,
    max_iter: int = MAX_ITER,
) -> FittedGlm:
    """Solve the weighted score equations ``sum w x (y - mu(x'c)) = 0``.

    Raises :class:`RankDeficientError`, :class:`SeparationError` or
    :class:`ConvergenceError` instead of returning a degraded fit.
    """
    family = Family.parse(family)
    x = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    if x.ndim != 2:
        raise ValueError("design must be a 2-d array")
    n, p = x.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if y.shape != (n,) or w.shape != (n,):
        raise ValueError(
            f"length mismatch: design has {n} rows, response {y.shape}, weights {w.shape}"
        )
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.all(np.isfinite(w))):
        raise ValueError("non-finite values in design, response or weights")
    if np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be nonnegative with at least one positive")
    if family is Family.BINOMIAL and not np.all((y == 0) | (y == 1)):
        raise ValueError("binomial responses must be 0 or 1")
    _check_rank(x, w)

    w = w / w.sum()
    if family is Family.GAUSSIAN:
        sw = np.sqrt(w)
        coef = linalg.lstsq(x * sw[:, None], y * sw)[0]
    else:
        coef = np.zeros(p)

    ll = log_likelihood(coef, x, y, w, family)
    grad = score(coef, x, y, w, family)
    max_score = float(np.max(np.abs(grad)))
    for it in range(1, max_iter + 1):
        mu = family.mean(x @ coef)
        info = x.T @ (x * (w * family.variance(mu))[:, None])
        try:
            step = linalg.solve(info, grad, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            step = linalg.lstsq(info, grad)[0]
        new = coef + step
        new_ll = log_likelihood(new, x, y, w, family)
        halvings = 0
        while new_ll < ll - 1e-12 * abs(ll) and halvings < 30:
            step = step / 2
            new = coef + step
            new_ll = log_likelihood(new, x, y, w, family)
            halvings += 1
        coef, ll = new, new_ll
        big = np.flatnonzero(np.abs(coef) > COEF_CAP)
        if family is Family.BINOMIAL and big.size:
            raise SeparationError(int(big[0]), float(coef[big[0]]))
        grad = score(coef, x, y, w, family)
        max_score = float(np.max(np.abs(grad)))
        rel_step = float(np.max(np.abs(step) / np.maximum(np.abs(coef), 1.0)))
        if max_score <= tol and rel_step <= STEP_TOL:
            return FittedGlm(family, coef, True, it, max_score)
    raise ConvergenceError(max_iter, max_score)


def predict_mean(model: FittedGlm, design) -> np.ndarray:
    x = np.asarray(design, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != model.coefficients.shape[0]:
        raise ValueError(
            f"design has {x.shape[1]} columns, model has "
            f"{model.coefficients.shape[0]} coefficients"
        )
    return model.family.mean(x @ model.coefficients)
