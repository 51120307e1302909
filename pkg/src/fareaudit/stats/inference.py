"""Hypothesis tests and prediction intervals used by the audits."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..exceptions import ContractError, DegenerateError
from .special import chi2_sf, normal_ppf, normal_sf, student_t_sf

ALTERNATIVES = ("two_sided", "greater", "less")
T_MODES = ("systematic", "independent")
CORRECTIONS = ("none", "holm", "bonferroni")
P_FLOOR = 1e-12


def format_p(p):
    """Render a p-value, never printing a false zero."""
    if p is None or (isinstance(p, float) and math.isnan(p)):
        return "nan"
    if p < P_FLOOR:
        return f"<{P_FLOOR:g}"
    return f"{p:.4g}"


def _check_alternative(alternative):
    if alternative not in ALTERNATIVES:
        raise ContractError(f"alternative must be one of {ALTERNATIVES}, got {alternative!r}")


@dataclass(frozen=True)
class TestResult:
    """Outcome of one hypothesis test."""

    __test__ = False  # keep pytest from collecting this class

    method: str
    statistic: float
    p_value: float
    alternative: str = "two_sided"
    df: Optional[float] = None
    n: tuple = ()
    notes: tuple = ()
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ContractError(f"p-value {self.p_value!r} outside [0, 1]")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "statistic": self.statistic,
            "df": self.df,
            "p_value": self.p_value,
            "p_display": format_p(self.p_value),
            "alternative": self.alternative,
            "n": list(self.n),
            "notes": list(self.notes),
            "extra": dict(self.extra),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TestResult":
        return cls(
            method=data["method"],
            statistic=data["statistic"],
            p_value=data["p_value"],
            alternative=data["alternative"],
            df=data["df"],
            n=tuple(data["n"]),
            notes=tuple(data["notes"]),
            extra=dict(data["extra"]),
        )


@dataclass(frozen=True)
class ContingencyTable:
    """Observed counts of groups (rows) against ordered wage bands (columns)."""

    row_labels: tuple
    col_labels: tuple
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape != (len(self.row_labels), len(self.col_labels)):
            raise ContractError("counts shape does not match the labels")
        if counts.shape[0] < 2 or counts.shape[1] < 2:
            raise DegenerateError(
                f"a contingency table needs at least 2 rows and 2 columns, got {counts.shape}"
            )
        if np.any(counts < 0) or not np.all(np.equal(np.mod(counts, 1), 0)):
            raise ContractError("counts must be nonnegative integers")
        if counts.sum() <= 0:
            raise DegenerateError("contingency table is empty")
        counts = counts.astype(np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, "row_labels", tuple(self.row_labels))
        object.__setattr__(self, "col_labels", tuple(self.col_labels))
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_pairs(cls, groups: Sequence, bands: Sequence, row_levels=None, col_levels=None):
        """Cross-tabulate parallel ``groups``/``bands`` sequences.

        Rows follow ``row_levels`` (default: sorted observed groups) and
        levels that never occur are left out.
        """
        if len(groups) != len(bands):
            raise ContractError("groups and bands differ in length")
        if col_levels is None:
            col_levels = sorted(set(bands))
        if row_levels is None:
            row_levels = sorted(set(groups))
        present = set(groups)
        rows = [g for g in row_levels if g in present]
        r_index = {g: i for i, g in enumerate(rows)}
        c_index = {b: j for j, b in enumerate(col_levels)}
        counts = np.zeros((len(rows), len(col_levels)), dtype=np.int64)
        for g, b in zip(groups, bands):
            counts[r_index[g], c_index[b]] += 1
        return cls(tuple(rows), tuple(col_levels), counts)

    def subtable(self, rows: Sequence[int]) -> "ContingencyTable":
        return ContingencyTable(
            tuple(self.row_labels[i] for i in rows), self.col_labels, self.counts[list(rows)]
        )

    def to_dict(self) -> dict:
        return {
            "row_labels": list(self.row_labels),
            "col_labels": list(self.col_labels),
            "counts": self.counts.tolist(),
        }


def chi_square_test(table: ContingencyTable, yates: bool = False) -> TestResult:
    """Pearson chi-square test of independence.

    ``yates`` applies the continuity correction, and only to 2x2 tables.
    """
    obs = table.counts.astype(float)
    row_tot = obs.sum(axis=1)
    col_tot = obs.sum(axis=0)
    empty_rows = [str(table.row_labels[i]) for i in np.flatnonzero(row_tot == 0)]
    empty_cols = [str(table.col_labels[j]) for j in np.flatnonzero(col_tot == 0)]
    if empty_rows or empty_cols:
        parts = []
        if empty_rows:
            parts.append("empty row(s): " + ", ".join(empty_rows))
        if empty_cols:
            parts.append("empty column(s): " + ", ".join(empty_cols))
        raise DegenerateError("degenerate contingency table; " + "; ".join(parts))
    total = obs.sum()
    expected = np.outer(row_tot, col_tot) / total
    r, c = obs.shape
    df = (r - 1) * (c - 1)
    dev = np.abs(obs - expected)
    notes = []
    if yates and df == 1:
        dev = np.maximum(dev - 0.5, 0.0)
        notes.append("Yates continuity correction applied")
    stat = float(np.sum(dev * dev / expected))
    small = int(np.sum(expected < 5))
    if small:
        notes.append(f"{small} of {r * c} cells have expected count < 5")
    return TestResult(
        method="chi_square",
        statistic=stat,
        df=float(df),
        p_value=chi2_sf(stat, df),
        n=(int(total),),
        notes=tuple(notes),
    )


def adjust_pvalues(pvalues: Sequence[float], method: str = "holm") -> list:
    """Family-wise error adjustment of raw p-values (input order preserved)."""
    if method not in CORRECTIONS:
        raise ContractError(f"correction must be one of {CORRECTIONS}, got {method!r}")
    p = [float(v) for v in pvalues]
    k = len(p)
    if method == "none" or k == 0:
        return p
    if method == "bonferroni":
        return [min(1.0, k * v) for v in p]
    order = sorted(range(k), key=lambda i: p[i])
    adjusted = [0.0] * k
    running = 0.0
    for rank, i in enumerate(order):
        running = max(running, min(1.0, (k - rank) * p[i]))
        adjusted[i] = running
    return adjusted


@dataclass(frozen=True)
class PairwiseResult:
    group_a: object
    group_b: object
    result: Optional[TestResult]
    p_adjusted: float
    error: Optional[str] = None

    @property
    def p_raw(self) -> float:
        return self.result.p_value if self.result is not None else math.nan

    def to_dict(self) -> dict:
        return {
            "group_a": self.group_a,
            "group_b": self.group_b,
            "result": None if self.result is None else self.result.to_dict(),
            "p_adjusted": None if math.isnan(self.p_adjusted) else self.p_adjusted,
            "error": self.error,
        }


def pairwise_chi_square(table: ContingencyTable, correction: str = "holm", yates: bool = False) -> list:
    """2 x c chi-square test for every unordered pair of groups.

    Bands empty in both groups of a pair are dropped from that pair's table.
    A pair that is still degenerate is reported with ``result=None`` rather
    than aborting the family. Output is sorted by raw p-value, failures last.
    """
    if correction not in CORRECTIONS:
        raise ContractError(f"correction must be one of {CORRECTIONS}, got {correction!r}")
    raw = []
    for i, j in itertools.combinations(range(len(table.row_labels)), 2):
        a, b = table.row_labels[i], table.row_labels[j]
        counts = table.counts[[i, j]]
        keep = counts.sum(axis=0) > 0
        try:
            sub = ContingencyTable(
                (a, b), tuple(np.array(table.col_labels, dtype=object)[keep]), counts[:, keep]
            )
            raw.append((a, b, chi_square_test(sub, yates=yates), None))
        except DegenerateError as exc:
            raw.append((a, b, None, str(exc)))
    ok = [item for item in raw if item[2] is not None]
    adjusted = adjust_pvalues([item[2].p_value for item in ok], correction)
    out = [PairwiseResult(a, b, res, padj) for (a, b, res, _), padj in zip(ok, adjusted)]
    out.sort(key=lambda pr: pr.p_raw)
    out.extend(PairwiseResult(a, b, None, math.nan, err) for a, b, res, err in raw if res is None)
    return out


def rankdata(values) -> np.ndarray:
    """Ranks starting at 1, ties receiving the mean of their positions."""
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    n = len(values)
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
    ends = np.r_[starts[1:], n]
    midranks = (starts + ends + 1) / 2.0
    ranks = np.empty(n)
    ranks[order] = np.repeat(midranks, ends - starts)
    return ranks


def _tie_sum(values) -> float:
    _, counts = np.unique(np.asarray(values, dtype=float), return_counts=True)
    counts = counts.astype(float)
    return float(np.sum(counts**3 - counts))


def mann_whitney_u(a, b, alternative: str = "two_sided", continuity: bool = True) -> TestResult:
    """Mann-Whitney U test with the tie-corrected normal approximation.

    ``statistic`` is U for ``a``: the number of pairs with a > b plus half the
    ties. ``greater`` tests whether ``a`` is stochastically larger.
    """
    _check_alternative(alternative)
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    n_a, n_b = len(a), len(b)
    if n_a < 1 or n_b < 1:
        raise ContractError("both samples need at least one observation")
    pooled = np.concatenate([a, b])
    n = n_a + n_b
    ranks = rankdata(pooled)
    u_a = float(ranks[:n_a].sum() - n_a * (n_a + 1) / 2.0)
    u_b = n_a * n_b - u_a
    mu = n_a * n_b / 2.0
    var = n_a * n_b / 12.0 * ((n + 1) - _tie_sum(pooled) / (n * (n - 1)))
    if not var > 0:
        raise DegenerateError("pooled sample is entirely tied; U has zero variance")
    sd = math.sqrt(var)
    cc = 0.5 if continuity else 0.0
    if alternative == "greater":
        z = (u_a - mu - cc) / sd
        p = normal_sf(z)
    elif alternative == "less":
        z = (u_a - mu + cc) / sd
        p = normal_sf(-z)
    else:
        z = (abs(u_a - mu) - cc) / sd
        p = min(1.0, 2.0 * normal_sf(z))
    notes = []
    if n < 20:
        notes.append("normal approximation used with fewer than 20 observations")
    return TestResult(
        method="mann_whitney",
        statistic=u_a,
        p_value=p,
        alternative=alternative,
        n=(n_a, n_b),
        notes=tuple(notes),
        extra={"u_b": u_b, "z": z, "continuity": continuity},
    )


def paired_t_effective(D, sigma_model: float = 0.0, mode: str = "systematic", alternative: str = "greater") -> TestResult:
    """One-sample t-test on paired differences with surrogate error folded in.

    ``systematic`` treats the surrogate error as shared across predictions,
    so it does not shrink with n: SE^2 = s^2/n + sigma^2. ``independent``
    treats it as per-prediction noise: SE^2 = (s^2 + sigma^2)/n. With
    ``sigma_model=0`` both reduce to the classical paired t-test.
    """
    _check_alternative(alternative)
    if mode not in T_MODES:
        raise ContractError(f"mode must be one of {T_MODES}, got {mode!r}")
    if not sigma_model >= 0:
        raise ContractError("sigma_model must be >= 0")
    D = np.asarray(D, dtype=float).ravel()
    n = len(D)
    if n < 2:
        raise ContractError("need at least two differences")
    mean = float(D.mean())
    var = float(D.var(ddof=1))
    if mode == "systematic":
        se = math.sqrt(var / n + sigma_model**2)
    else:
        se = math.sqrt((var + sigma_model**2) / n)
    df = n - 1
    notes = []
    if se == 0:
        if mean != 0:
            raise DegenerateError("standard error is zero with a nonzero mean difference")
        t = 0.0
        notes.append("zero standard error with zero mean; t set to 0")
    else:
        t = mean / se
    if alternative == "greater":
        p = student_t_sf(t, df)
    elif alternative == "less":
        p = student_t_sf(-t, df)
    else:
        p = min(1.0, 2.0 * student_t_sf(abs(t), df))
    return TestResult(
        method="t_effective",
        statistic=t,
        df=float(df),
        p_value=p,
        alternative=alternative,
        n=(n,),
        notes=tuple(notes),
        extra={"mean": mean, "sd": math.sqrt(var), "se": se, "sigma_model": sigma_model, "mode": mode},
    )


def z_multiplier(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise ContractError(f"level must lie in (0, 1), got {level!r}")
    return normal_ppf((1.0 + level) / 2.0)


def prediction_interval(pred, sigma_hat: float, level: float = 0.95):
    """Normal prediction interval ``pred +/- z * sigma_hat``; works on arrays too."""
    if not sigma_hat >= 0:
        raise ContractError("sigma_hat must be >= 0")
    half = z_multiplier(level) * sigma_hat
    if np.ndim(pred) == 0:
        return (float(pred) - half, float(pred) + half)
    pred = np.asarray(pred, dtype=float)
    return pred - half, pred + half


@dataclass(frozen=True)
class IntervalClassification:
    """Where each counterfactual interval sits relative to the observed fare.

    ``below``: the interval lies entirely under the actual fare (the
    counterfactual is cheaper); ``above``: entirely over it.
    """

    below: float
    above: float
    overlapping: float
    level: float
    counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "below": self.below,
            "above": self.above,
            "overlapping": self.overlapping,
            "level": self.level,
            "counts": dict(self.counts),
        }


def classify_intervals(preds, actuals, sigma_hat: float, level: float = 0.95) -> IntervalClassification:
    preds = np.asarray(preds, dtype=float).ravel()
    actuals = np.asarray(actuals, dtype=float).ravel()
    if len(preds) != len(actuals):
        raise ContractError(f"length mismatch: {len(preds)} predictions, {len(actuals)} actuals")
    n = len(preds)
    if n < 1:
        raise ContractError("need at least one prediction")
    lo, hi = prediction_interval(preds, sigma_hat, level)
    below = int(np.sum(hi < actuals))
    above = int(np.sum(lo > actuals))
    overlapping = n - below - above
    return IntervalClassification(
        below=below / n,
        above=above / n,
        overlapping=overlapping / n,
        level=level,
        counts={"below": below, "above": above, "overlapping": overlapping, "n": n},
    )
