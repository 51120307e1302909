"""Least-squares surrogate for an opaque fare algorithm."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ContractError, DataError, SplitError, UndefinedR2Error, UnderdeterminedError
from .features import FeatureVector, schema_hash
from .validation import as_design, as_target, take

MODEL_FORMAT = "fareaudit-linear-model"
MODEL_VERSION = 1
RIDGE_LAMBDA = 1e-8


def split_indices(n: int, fraction: float, seed: int):
    """Seeded disjoint split of ``range(n)``; the test side has round(fraction * n) rows."""
    if not 0.0 < fraction < 1.0:
        raise SplitError(f"test fraction must lie in (0, 1), got {fraction!r}")
    if n < 2:
        raise SplitError(f"need at least 2 rows to split, got {n}")
    n_test = int(math.floor(fraction * n + 0.5))
    if n_test == 0 or n_test == n:
        raise SplitError(f"fraction {fraction} of {n} rows leaves one side empty")
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def train_test_split(*arrays, fraction: float = 0.2, seed: int = 0):
    """Split each array the same way; returns ``train_0, test_0, train_1, test_1, ...``.

    Rows keep their original relative order on each side.
    """
    if not arrays:
        raise ContractError("nothing to split")
    n = len(arrays[0])
    if any(len(a) != n for a in arrays):
        raise ContractError("arrays to split differ in length")
    train, test = split_indices(n, fraction, seed)
    out = []
    for a in arrays:
        out.extend((take(a, train), take(a, test)))
    return out


def _qr_solve(X, y, ridge):
    n, p = X.shape
    q, r = np.linalg.qr(X)
    diag = np.abs(np.diag(r))
    tol = max(n, p) * np.finfo(float).eps * (diag.max() if p else 0.0)
    if p and diag.min() > tol:
        return np.linalg.solve(r, q.T @ y), False
    aug_X = np.vstack([X, math.sqrt(ridge) * np.eye(p)])
    aug_y = np.concatenate([y, np.zeros(p)])
    q, r = np.linalg.qr(aug_X)
    return np.linalg.solve(r, q.T @ aug_y), True


def _normal_solve(xtx, xty, ridge):
    p = xtx.shape[0]
    q, r = np.linalg.qr(xtx)
    diag = np.abs(np.diag(r))
    tol = p * np.finfo(float).eps * diag.max()
    if diag.min() > tol:
        return np.linalg.solve(r, q.T @ xty), False
    return np.linalg.solve(xtx + ridge * np.eye(p), xty), True


class OLSRegressor(RegressorMixin, BaseEstimator):
    """Ordinary least squares on a design that already carries its intercept column.

    ``fit`` solves by QR factorization of X. ``partial_fit`` accumulates
    X'X and X'y chunk by chunk and factorizes the p x p system, so memory is
    independent of the row count. Rank-deficient designs are re-solved with
    a tiny ridge penalty and flagged in ``regularized_``.
    """

    def __init__(self, ridge=RIDGE_LAMBDA):
        self.ridge = ridge

    def fit(self, X, y):
        X = as_design(X)
        y = as_target(y, X.shape[0])
        n, p = X.shape
        if n < p:
            raise UnderdeterminedError(f"{n} rows cannot determine {p} coefficients")
        if p < 1:
            raise ContractError("design has no columns")
        self.coef_, self.regularized_ = _qr_solve(X, y, self.ridge)
        self.n_features_in_ = p
        self.n_samples_seen_ = n
        return self

    def partial_fit(self, X, y):
        X = as_design(X)
        y = as_target(y, X.shape[0])
        if not hasattr(self, "xtx_"):
            p = X.shape[1]
            self.xtx_ = np.zeros((p, p))
            self.xty_ = np.zeros(p)
            self.n_samples_seen_ = 0
            self.n_features_in_ = p
        elif X.shape[1] != self.n_features_in_:
            raise ContractError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        self.xtx_ += X.T @ X
        self.xty_ += X.T @ y
        self.n_samples_seen_ += X.shape[0]
        if self.n_samples_seen_ >= self.n_features_in_:
            self.coef_, self.regularized_ = _normal_solve(self.xtx_, self.xty_, self.ridge)
        return self

    def merge(self, other: "OLSRegressor") -> "OLSRegressor":
        """Combine the accumulators of two ``partial_fit`` runs over disjoint partitions."""
        out = OLSRegressor(self.ridge)
        out.xtx_ = self.xtx_ + other.xtx_
        out.xty_ = self.xty_ + other.xty_
        out.n_samples_seen_ = self.n_samples_seen_ + other.n_samples_seen_
        out.n_features_in_ = self.n_features_in_
        out.coef_, out.regularized_ = _normal_solve(out.xtx_, out.xty_, self.ridge)
        return out

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = as_design(X)
        if X.shape[1] != self.n_features_in_:
            raise ContractError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        return X @ self.coef_


@dataclass(frozen=True)
class LinearModel:
    """A fitted surrogate together with its holdout error.

    ``sigma_hat`` is the holdout RMSE, ``None`` until the model has been
    evaluated on held-out rows.
    """

    coefficients: np.ndarray
    feature_names: tuple
    sigma_hat: Optional[float] = None
    r2: Optional[float] = None
    train_rmse: Optional[float] = None
    n_train: int = 0
    n_test: int = 0
    seed: Optional[int] = None
    regularized: bool = False
    encoding: dict = field(default_factory=dict)

    def __post_init__(self):
        coef = np.asarray(self.coefficients, dtype=float)
        object.__setattr__(self, "coefficients", coef)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if len(coef) != len(self.feature_names):
            raise ContractError("coefficient length differs from the schema width")
        if self.sigma_hat is not None and self.sigma_hat < 0:
            raise ContractError("sigma_hat must be >= 0")
        if self.r2 is not None and self.r2 > 1 + 1e-12:
            raise ContractError("r2 cannot exceed 1")

    @property
    def schema(self) -> str:
        return schema_hash(self.feature_names)

    def predict(self, X):
        X = as_design(X)
        if X.shape[1] != len(self.coefficients):
            raise ContractError(f"expected {len(self.coefficients)} columns, got {X.shape[1]}")
        return X @ self.coefficients

    def with_holdout(self, rmse, r2, n_test) -> "LinearModel":
        return replace(self, sigma_hat=float(rmse), r2=None if r2 is None else float(r2), n_test=int(n_test))

    def coefficient_table(self) -> list:
        return [(name, float(c)) for name, c in zip(self.feature_names, self.coefficients)]

    def to_text(self) -> str:
        doc = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "schema_hash": self.schema,
            "feature_names": list(self.feature_names),
            "coefficients": [float(c) for c in self.coefficients],
            "sigma_hat": self.sigma_hat,
            "r2": self.r2,
            "train_rmse": self.train_rmse,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "seed": self.seed,
            "regularized": self.regularized,
            "encoding": self.encoding,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "LinearModel":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"model file is not valid JSON: {exc}") from None
        if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
            raise DataError("unsupported model file format or version")
        model = cls(
            coefficients=doc["coefficients"],
            feature_names=doc["feature_names"],
            sigma_hat=doc["sigma_hat"],
            r2=doc["r2"],
            train_rmse=doc["train_rmse"],
            n_train=doc["n_train"],
            n_test=doc["n_test"],
            seed=doc["seed"],
            regularized=doc["regularized"],
            encoding=doc["encoding"],
        )
        if model.schema != doc["schema_hash"]:
            raise DataError("model schema hash does not match its feature names")
        return model


def fit_ols(X, y, feature_names=None, seed=None) -> LinearModel:
    """Fit OLS and wrap the result as an (unevaluated) :class:`LinearModel`."""
    est = OLSRegressor().fit(X, y)
    X = np.asarray(X, dtype=float)
    resid = np.asarray(y, dtype=float) - X @ est.coef_
    if feature_names is None:
        feature_names = tuple(f"x{i}" for i in range(X.shape[1]))
    return LinearModel(
        coefficients=est.coef_,
        feature_names=feature_names,
        train_rmse=float(np.sqrt(np.mean(resid**2))),
        n_train=X.shape[0],
        seed=seed,
        regularized=est.regularized_,
    )


def predict(model: LinearModel, x: FeatureVector) -> float:
    """Dot product of one encoded trip with the model; no clamping."""
    if tuple(x.feature_names) != model.feature_names:
        raise ContractError("feature vector schema does not match the model schema")
    return float(np.dot(model.coefficients, x.values))


def evaluate(model, X_test, y_test) -> dict:
    """Holdout RMSE and R^2 (about the test-set mean)."""
    y_test = as_target(y_test)
    if len(y_test) == 0:
        raise ContractError("test set is empty")
    pred = model.predict(X_test)
    resid = y_test - pred
    sse = float(np.sum(resid**2))
    rmse = math.sqrt(sse / len(y_test))
    sst = float(np.sum((y_test - y_test.mean()) ** 2))
    if sst == 0:
        raise UndefinedR2Error("R^2 undefined: test targets have zero variance", rmse)
    return {"rmse": rmse, "r2": 1.0 - sse / sst}
