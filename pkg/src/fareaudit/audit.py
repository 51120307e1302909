"""End-to-end fare and wage audits."""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import SURVEY_FEATURES, SurveySchema, filter_survey
from .exceptions import ConfigError, ContractError, DegenerateError, EncodingError, PipelineError
from .features import EncodingSpec, SurveyEncoder
from .regress import LinearModel, OLSRegressor, evaluate, split_indices
from .stats import (
    ALTERNATIVES,
    CORRECTIONS,
    T_MODES,
    ContingencyTable,
    IntervalClassification,
    TestResult,
    chi_square_test,
    classify_intervals,
    mann_whitney_u,
    paired_t_effective,
    pairwise_chi_square,
)

PAIRING_NOTE = (
    "Mann-Whitney compares predicted and actual fares of the same taxi trips "
    "as two independent samples; the samples are in fact paired."
)


def digest_records(records) -> str:
    """Order-sensitive SHA-256 over the canonical field tuples of ``records``."""
    h = hashlib.sha256()
    names = None
    for rec in records:
        if names is None:
            names = [f.name for f in fields(rec)]
        h.update(json.dumps([getattr(rec, n) for n in names], separators=(",", ":")).encode())
        h.update(b"\n")
    return h.hexdigest()


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class FareAuditConfig:
    """Settings for one fare audit.

    ``sigma_override`` replaces the holdout RMSE as the surrogate error fed
    to the tests and intervals. ``sample_cap`` bounds the taxi trips used.
    """

    encoding: EncodingSpec = field(default_factory=EncodingSpec)
    test_fraction: float = 0.2
    seed: int = 0
    mode: str = "systematic"
    alternative: str = "greater"
    level: float = 0.95
    alpha: float = 0.05
    sample_cap: Optional[int] = 1_000_000
    sigma_override: Optional[float] = None
    continuity: bool = True

    def __post_init__(self):
        if self.mode not in T_MODES:
            raise ConfigError(f"mode must be one of {T_MODES}")
        if self.alternative not in ALTERNATIVES:
            raise ConfigError(f"alternative must be one of {ALTERNATIVES}")
        if not 0.0 < self.level < 1.0:
            raise ConfigError("level must lie in (0, 1)")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in (0, 1)")
        if self.sample_cap is not None and self.sample_cap < 1:
            raise ConfigError("sample_cap must be >= 1")
        if self.sigma_override is not None and self.sigma_override < 0:
            raise ConfigError("sigma_override must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class AuditReport:
    """Everything a fare audit produces.

    ``point_fractions`` counts a prediction equal to the actual fare as
    below; ties are also reported separately. ``predictions`` and
    ``actuals`` are kept for plots and CSV export.
    """

    metrics: dict
    coefficients: list
    mwu: TestResult
    t_eff: dict
    mode: str
    intervals: IntervalClassification
    point_fractions: dict
    negative_predictions: int
    provenance: dict
    notes: tuple = ()
    predictions: np.ndarray = field(default=None, repr=False, compare=False)
    actuals: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def primary_test(self) -> TestResult:
        return self.t_eff[self.mode]

    def to_dict(self) -> dict:
        return {
            "metrics": dict(self.metrics),
            "coefficients": [{"feature": k, "effect_usd": v} for k, v in self.coefficients],
            "mann_whitney": self.mwu.to_dict(),
            "t_effective": {m: r.to_dict() for m, r in self.t_eff.items()},
            "primary_mode": self.mode,
            "intervals": self.intervals.to_dict(),
            "point_fractions": dict(self.point_fractions),
            "negative_predictions": self.negative_predictions,
            "provenance": dict(self.provenance),
            "notes": list(self.notes),
        }


class FareAuditor(BaseEstimator):
    """Replicate a rideshare pricing algorithm and audit it against taxi fares.

    ``fit`` learns the surrogate on rideshare trips (holding out a seeded
    fraction to estimate its error); ``predict`` returns counterfactual
    rideshare fares for any trips; ``audit`` runs the tests on taxi trips.
    """

    def __init__(self, config: Optional[FareAuditConfig] = None):
        self.config = config

    def _cfg(self) -> FareAuditConfig:
        return self.config if self.config is not None else FareAuditConfig()

    def fit(self, trips, y=None):
        cfg = self._cfg()
        trips = list(trips)
        if not trips:
            raise PipelineError("rideshare stream is empty after filtering")
        self.encoder_ = cfg.encoding.encoder().fit()
        X = self.encoder_.transform(trips)
        fares = np.array([t.fare for t in trips], dtype=float) if y is None else np.asarray(y, dtype=float)
        train, test = split_indices(len(trips), cfg.test_fraction, cfg.seed)
        reg = OLSRegressor().fit(X[train], fares[train])
        train_rmse = float(np.sqrt(np.mean((fares[train] - reg.predict(X[train])) ** 2)))
        holdout = evaluate(reg, X[test], fares[test])
        self.model_ = LinearModel(
            coefficients=reg.coef_,
            feature_names=tuple(self.encoder_.feature_names_out_),
            sigma_hat=holdout["rmse"],
            r2=holdout["r2"],
            train_rmse=train_rmse,
            n_train=len(train),
            n_test=len(test),
            seed=cfg.seed,
            regularized=reg.regularized_,
            encoding=asdict(cfg.encoding),
        )
        self.dataset_digest_ = digest_records(trips)
        return self

    def set_model(self, model: LinearModel):
        """Use a previously fitted model instead of calling ``fit``."""
        cfg = self._cfg()
        self.encoder_ = cfg.encoding.encoder().fit()
        if tuple(self.encoder_.feature_names_out_) != model.feature_names:
            raise EncodingError("model schema does not match the configured encoding")
        if model.sigma_hat is None:
            raise ContractError("model has no holdout sigma_hat")
        self.model_ = model
        self.dataset_digest_ = None
        return self

    def predict(self, trips):
        check_is_fitted(self, "model_")
        return self.model_.predict(self.encoder_.transform(trips))

    def audit(self, taxi) -> AuditReport:
        check_is_fitted(self, "model_")
        cfg = self._cfg()
        taxi = list(taxi)
        if not taxi:
            raise PipelineError("taxi stream is empty after filtering")
        n_available = len(taxi)
        if cfg.sample_cap is not None and n_available > cfg.sample_cap:
            rng = np.random.default_rng(cfg.seed)
            keep = np.sort(rng.choice(n_available, size=cfg.sample_cap, replace=False))
            taxi = [taxi[i] for i in keep]
        model = self.model_
        sigma = cfg.sigma_override if cfg.sigma_override is not None else model.sigma_hat
        preds = self.predict(taxi)
        actual = np.array([t.fare for t in taxi], dtype=float)
        D = preds - actual
        t_eff = {m: paired_t_effective(D, sigma, m, cfg.alternative) for m in T_MODES}
        n = len(taxi)
        below = int(np.sum(preds < actual))
        ties = int(np.sum(preds == actual))
        above = n - below - ties
        return AuditReport(
            metrics={
                "rmse": model.sigma_hat,
                "r2": model.r2,
                "train_rmse": model.train_rmse,
                "n_train": model.n_train,
                "n_test": model.n_test,
                "n_taxi": n,
                "n_taxi_available": n_available,
                "sigma_used": sigma,
                "mean_difference": float(D.mean()),
                "regularized": model.regularized,
            },
            coefficients=model.coefficient_table(),
            mwu=mann_whitney_u(preds, actual, "two_sided", continuity=cfg.continuity),
            t_eff=t_eff,
            mode=cfg.mode,
            intervals=classify_intervals(preds, actual, sigma, cfg.level),
            point_fractions={
                "pred_below": (below + ties) / n,
                "pred_above": above / n,
                "ties": ties,
            },
            negative_predictions=int(np.sum(preds < 0)),
            provenance={
                "tnp_digest": self.dataset_digest_,
                "taxi_digest": digest_records(taxi),
                "seed": cfg.seed,
                "config_hash": config_hash(cfg.to_dict()),
                "model_schema": model.schema,
            },
            notes=(PAIRING_NOTE,),
            predictions=preds,
            actuals=actual,
        )


def run_fare_audit(tnp, taxi, cfg: Optional[FareAuditConfig] = None, model: Optional[LinearModel] = None) -> AuditReport:
    """Fit (or reuse) the surrogate on rideshare trips and audit the taxi trips."""
    auditor = FareAuditor(cfg)
    if model is None:
        auditor.fit(tnp)
    else:
        auditor.set_model(model)
    return auditor.audit(taxi)


def ordinal_median(counts: Sequence[int]) -> int:
    """Index of the lower median category of a histogram."""
    total = sum(counts)
    if total <= 0:
        raise DegenerateError("median of an empty histogram")
    half = total / 2.0
    running = 0
    for i, c in enumerate(counts):
        running += c
        if running >= half:
            return i
    return len(counts) - 1


def rank_effects(model: LinearModel, features: Sequence[str]) -> list:
    """Rank features by the largest absolute coefficient within their dummy block.

    Coefficient names follow the ``feature=level`` convention of
    :class:`SurveyEncoder`. Ties are broken by feature name.
    """
    magnitude = {}
    for feature in features:
        prefix = f"{feature}="
        vals = [abs(c) for name, c in zip(model.feature_names, model.coefficients) if name.startswith(prefix)]
        magnitude[feature] = float(max(vals)) if vals else 0.0
    return sorted(magnitude.items(), key=lambda kv: (-kv[1], kv[0]))


@dataclass(frozen=True)
class FeatureAnalysis:
    feature: str
    n: int
    table: Optional[ContingencyTable]
    omnibus: Optional[TestResult]
    pairwise: list
    summaries: dict
    notes: tuple = ()

    def to_dict(self) -> dict:
        return {
            "feature": self.feature,
            "n": self.n,
            "table": None if self.table is None else self.table.to_dict(),
            "omnibus": None if self.omnibus is None else self.omnibus.to_dict(),
            "pairwise": [p.to_dict() for p in self.pairwise],
            "summaries": self.summaries,
            "notes": list(self.notes),
        }


@dataclass(frozen=True)
class WageAuditReport:
    features: tuple
    analyses: dict
    ranking: list
    regression: dict
    band_labels: tuple = ()
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "features": list(self.features),
            "band_labels": list(self.band_labels),
            "analyses": {f: a.to_dict() for f, a in self.analyses.items()},
            "ranking": [{"feature": f, "magnitude": m} for f, m in self.ranking],
            "regression": dict(self.regression),
            "provenance": dict(self.provenance),
        }


def _analyze_feature(responses, feature, schema: SurveySchema, correction, yates) -> FeatureAnalysis:
    cat = schema[feature]
    bands = schema.wage_bands
    rows = list(filter_survey(responses, [feature]))
    notes = []
    groups = [getattr(r, feature) for r in rows]
    band_idx = [bands.index(r.wage_band) for r in rows]
    present = set(groups)
    for level in cat.levels:
        if level not in present:
            notes.append(f"level {level!r} has no responses and is excluded")
    band_totals = Counter(band_idx)
    kept_cols = [j for j in range(len(bands)) if band_totals.get(j)]
    for j in range(len(bands)):
        if j not in band_totals:
            notes.append(f"wage band {bands.labels[j]!r} has no responses and is excluded")
    summaries = {}
    for level in cat.levels:
        hist = [0] * len(bands)
        for g, b in zip(groups, band_idx):
            if g == level:
                hist[b] += 1
        if sum(hist):
            mode = max(range(len(hist)), key=lambda j: (hist[j], -j))
            summaries[level] = {
                "n": sum(hist),
                "median_band": bands.labels[ordinal_median(hist)],
                "mode_band": bands.labels[mode],
                "distribution": hist,
            }
    table = omnibus = None
    pairwise = []
    try:
        table = ContingencyTable.from_pairs(
            groups,
            [bands.labels[b] for b in band_idx],
            row_levels=cat.levels,
            col_levels=[bands.labels[j] for j in kept_cols],
        )
        omnibus = chi_square_test(table, yates=yates)
        pairwise = pairwise_chi_square(table, correction, yates=yates)
    except DegenerateError as exc:
        notes.append(f"omnibus test not computed: {exc}")
    return FeatureAnalysis(feature, len(rows), table, omnibus, pairwise, summaries, tuple(notes))


def standardize_columns(X, skip=(0,)):
    """Scale columns to unit variance (population sd), leaving ``skip`` and constant columns alone."""
    X = np.array(X, dtype=float)
    scale = X.std(axis=0)
    scale[list(skip)] = 1.0
    scale[scale == 0] = 1.0
    return X / scale, scale


def run_wage_audit(
    survey,
    features: Sequence[str] = SURVEY_FEATURES,
    schema: Optional[SurveySchema] = None,
    correction: str = "holm",
    yates: bool = False,
) -> WageAuditReport:
    """Contingency analysis per feature plus a joint standardized wage regression.

    Each feature's tests use the responses complete for that feature; the
    regression uses responses complete for every requested feature.
    """
    schema = schema or SurveySchema.default()
    if correction not in CORRECTIONS:
        raise ConfigError(f"correction must be one of {CORRECTIONS}")
    features = tuple(features)
    for name in features:
        schema[name]  # raises ConfigError for an unknown feature
    responses = list(survey)
    analyses = {f: _analyze_feature(responses, f, schema, correction, yates) for f in features}

    complete = list(filter_survey(responses, features))
    encoder = SurveyEncoder(features, schema).fit()
    regression = {"n": len(complete)}
    ranking = [(f, 0.0) for f in sorted(features)]
    if len(complete) >= encoder.n_features_out_ and len(complete) > 1:
        X = encoder.transform(complete)
        y = encoder.targets(complete)
        Xs, scale = standardize_columns(X)
        reg = OLSRegressor().fit(Xs, y)
        model = LinearModel(reg.coef_, tuple(encoder.feature_names_out_), n_train=len(complete), regularized=reg.regularized_)
        ranking = rank_effects(model, features)
        resid = y - reg.predict(Xs)
        sst = float(np.sum((y - y.mean()) ** 2))
        regression.update(
            {
                "r2": None if sst == 0 else 1.0 - float(np.sum(resid**2)) / sst,
                "standardized_coefficients": {n: float(c) for n, c in model.coefficient_table()},
                "raw_coefficients": {n: float(c / s) for (n, c), s in zip(model.coefficient_table(), scale)},
                "regularized": reg.regularized_,
            }
        )
    else:
        regression["note"] = "too few complete responses for the joint regression"
    return WageAuditReport(features, analyses, ranking, regression, schema.wage_bands.labels)
