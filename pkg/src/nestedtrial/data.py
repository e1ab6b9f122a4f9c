"""Cohort data container and CSV ingestion."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Sequence

import numpy as np

log = logging.getLogger(__name__)


class SchemaError(ValueError):
    """Input file or array does not match the cohort schema."""


@dataclass(frozen=True, eq=False)
class CohortDataset:
    """A randomized trial nested in a cohort of trial-eligible individuals.

    ``arm`` holds the index into ``treatment_levels`` for trial rows and -1
    for non-participants; ``outcome`` is NaN for non-participants.
    """

    participation: np.ndarray
    covariates: np.ndarray
    arm: np.ndarray
    outcome: np.ndarray
    treatment_levels: tuple
    covariate_names: tuple[str, ...]
    dropped_incomplete: int = field(default=0)

    def __post_init__(self):
        s = np.asarray(self.participation, dtype=bool)
        x = np.asarray(self.covariates, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        a = np.asarray(self.arm, dtype=np.int64)
        y = np.asarray(self.outcome, dtype=float)
        n = s.shape[0]
        if x.shape[0] != n or a.shape != (n,) or y.shape != (n,):
            raise SchemaError("participation, covariates, arm and outcome lengths differ")
        if len(self.covariate_names) != x.shape[1]:
            raise SchemaError("covariate_names does not match covariate columns")
        if not np.all(np.isfinite(x)):
            raise SchemaError("covariates contain non-finite values")
        if not s.any():
            raise SchemaError("no trial participants (S=1) in cohort")
        k = len(self.treatment_levels)
        if np.any(a[s] < 0) or np.any(a[s] >= k) or np.any(a[~s] != -1):
            raise SchemaError("treatment must be present exactly for trial participants")
        if not np.all(np.isfinite(y[s])) or not np.all(np.isnan(y[~s])):
            raise SchemaError("outcome must be present exactly for trial participants")
        counts = np.bincount(a[s], minlength=k)
        if np.any(counts == 0):
            empty = [self.treatment_levels[j] for j in np.flatnonzero(counts == 0)]
            raise SchemaError(f"treatment level(s) {empty} have no trial rows")
        for name, value in (("participation", s), ("covariates", x), ("arm", a), ("outcome", y)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "treatment_levels", tuple(self.treatment_levels))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))

    @classmethod
    def from_arrays(
        cls,
        participation,
        covariates,
        treatment,
        outcome,
        *,
        covariate_names: Sequence[str] | None = None,
        treatment_levels: Sequence[Hashable] | None = None,
    ) -> "CohortDataset":
        """Build a dataset from raw arrays.

        ``treatment`` and ``outcome`` may hold anything (NaN, None) on rows
        with participation 0; those entries are ignored.
        """
        s = np.asarray(participation).astype(bool)
        x = np.asarray(covariates, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        t = np.asarray(treatment, dtype=object)
        if treatment_levels is None:
            treatment_levels = sorted({_label(v) for v in t[s]})
        index = {lvl: j for j, lvl in enumerate(treatment_levels)}
        arm = np.full(s.shape[0], -1, dtype=np.int64)
        for i in np.flatnonzero(s):
            lab = _label(t[i])
            if lab not in index:
                raise SchemaError(f"row {i}: unknown treatment level {t[i]!r}")
            arm[i] = index[lab]
        y = np.full(s.shape[0], np.nan)
        y[s] = np.asarray(outcome, dtype=float)[s]
        if covariate_names is None:
            covariate_names = [f"x{j + 1}" for j in range(x.shape[1])]
        return cls(s, x, arm, y, tuple(treatment_levels), tuple(covariate_names))

    @property
    def n_total(self) -> int:
        return int(self.participation.shape[0])

    @property
    def n_trial(self) -> int:
        return int(self.participation.sum())

    def arm_index(self, level) -> int:
        try:
            return self.treatment_levels.index(level)
        except ValueError:
            raise KeyError(f"unknown treatment level {level!r}") from None

    def in_arm(self, level) -> np.ndarray:
        """Boolean mask of trial rows assigned to ``level``."""
        return self.arm == self.arm_index(level)

    def columns(self, selection: Sequence[str | int]) -> np.ndarray:
        idx = []
        for col in selection:
            if isinstance(col, str):
                if col not in self.covariate_names:
                    raise KeyError(f"unknown covariate {col!r}")
                idx.append(self.covariate_names.index(col))
            else:
                idx.append(int(col))
        return self.covariates[:, idx]

    def design(self, selection: Sequence[str | int]) -> np.ndarray:
        """Covariate columns with a leading intercept."""
        cols = self.columns(selection)
        return np.column_stack([np.ones(self.n_total), cols])

    def is_binary_outcome(self) -> bool:
        y = self.outcome[self.participation]
        return bool(np.all((y == 0) | (y == 1)))

    def take(self, rows: np.ndarray) -> "CohortDataset":
        """Row subset (rows may repeat, as in a bootstrap resample)."""
        return CohortDataset(
            self.participation[rows],
            self.covariates[rows],
            self.arm[rows],
            self.outcome[rows],
            self.treatment_levels,
            self.covariate_names,
        )

    def with_outcome(self, outcome) -> "CohortDataset":
        y = np.where(self.participation, np.asarray(outcome, dtype=float), np.nan)
        return CohortDataset(
            self.participation, self.covariates, self.arm, y,
            self.treatment_levels, self.covariate_names,
        )


def _label(value):
    # 1 and 1.0 read from CSV should be the same arm
    if isinstance(value, (float, np.floating)) and float(value).is_integer():
        return int(value)
    if isinstance(value, np.integer):
        return int(value)
    return value


def _parse_level(text: str):
    try:
        v = float(text)
    except ValueError:
        return text
    return int(v) if v.is_integer() else v


def read_csv(
    path: str | Path,
    *,
    participation: str,
    treatment: str,
    outcome: str,
    covariates: Sequence[str],
) -> CohortDataset:
    """Read a delimited cohort file.

    Treatment and outcome must be empty exactly when participation is 0.
    Rows with any missing covariate are dropped (complete-case analysis) and
    counted in ``dropped_incomplete``. Unused columns are ignored with a
    warning.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        sample = fh.read(4096)
        fh.seek(0)
        try:
            dialect = csv.Sniffer().sniff(sample, delimiters=",;\t")
        except csv.Error:
            dialect = csv.excel
        reader = csv.DictReader(fh, dialect=dialect)
        header = reader.fieldnames or []
        required = [participation, treatment, outcome, *covariates]
        missing = [c for c in required if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}")
        unused = [c for c in header if c not in required]
        if unused:
            log.warning("ignoring unused column(s): %s", ", ".join(unused))

        s_rows, x_rows, t_rows, y_rows = [], [], [], []
        dropped = 0
        for lineno, row in enumerate(reader, start=2):
            raw_s = (row[participation] or "").strip()
            if raw_s not in {"0", "1", "0.0", "1.0"}:
                raise SchemaError(f"{path}:{lineno}: participation must be 0 or 1, got {raw_s!r}")
            s = raw_s.startswith("1")
            raw_t = (row[treatment] or "").strip()
            raw_y = (row[outcome] or "").strip()
            if s and (not raw_t or not raw_y):
                raise SchemaError(f"{path}:{lineno}: trial row lacks treatment or outcome")
            if not s and (raw_t or raw_y):
                raise SchemaError(
                    f"{path}:{lineno}: non-participant row has treatment or outcome"
                )
            xs = []
            complete = True
            for c in covariates:
                v = (row[c] or "").strip()
                if v == "" or v.upper() in {"NA", "NAN"}:
                    complete = False
                    break
                try:
                    val = float(v)
                except ValueError:
                    raise SchemaError(f"{path}:{lineno}: covariate {c}={v!r} is not numeric") from None
                if not math.isfinite(val):
                    complete = False
                    break
                xs.append(val)
            if not complete:
                dropped += 1
                continue
            s_rows.append(s)
            x_rows.append(xs)
            t_rows.append(_parse_level(raw_t) if s else None)
            try:
                y_rows.append(float(raw_y) if s else math.nan)
            except ValueError:
                raise SchemaError(f"{path}:{lineno}: outcome {raw_y!r} is not numeric") from None

    if dropped:
        log.info("dropped %d row(s) with incomplete covariates", dropped)
    if not s_rows:
        raise SchemaError(f"{path}: no complete rows")
    x = np.array(x_rows, dtype=float).reshape(len(s_rows), len(covariates))
    ds = CohortDataset.from_arrays(
        np.array(s_rows), x, np.array(t_rows, dtype=object), np.array(y_rows),
        covariate_names=list(covariates),
    )
    object.__setattr__(ds, "dropped_incomplete", dropped)
    return ds


def write_csv(data: CohortDataset, path: str | Path) -> None:
    """Write a dataset in the layout accepted by :func:`read_csv`.

    Floats are written with ``repr`` so that a round trip is lossless.
    """
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["S", "A", "Y", *data.covariate_names])
        for i in range(data.n_total):
            s = bool(data.participation[i])
            a = data.treatment_levels[data.arm[i]] if s else ""
            y = repr(float(data.outcome[i])) if s else ""
            w.writerow([int(s), a, y, *(repr(float(v)) for v in data.covariates[i])])
