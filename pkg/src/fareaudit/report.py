"""Structured report documents, CSV tables and SVG plots.

A report is ``report.json`` (validated against :data:`REPORT_SCHEMA`) plus
flat CSV tables next to it. Output is byte-stable for a fixed config and
seed except for ``metadata.created_at``.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from . import __version__
from .exceptions import DataError
from .ingest import atomic_write

SCHEMA_VERSION = 1
KINDS = ("fare_audit", "wage_audit", "simulation", "study", "filter", "fit", "ingest")
SCATTER_CAP = 50_000

_num = {"type": ["number", "null"]}
_test = {
    "type": "object",
    "required": ["method", "statistic", "df", "p_value", "p_display", "alternative", "n", "notes", "extra"],
    "properties": {
        "method": {"enum": ["chi_square", "mann_whitney", "t_effective"]},
        "statistic": {"type": "number"},
        "df": _num,
        "p_value": {"type": "number", "minimum": 0, "maximum": 1},
        "p_display": {"type": "string"},
        "alternative": {"enum": ["two_sided", "greater", "less"]},
        "n": {"type": "array", "items": {"type": "integer"}},
        "notes": {"type": "array", "items": {"type": "string"}},
        "extra": {"type": "object"},
    },
}
_fraction = {"type": "number", "minimum": 0, "maximum": 1}

FARE_PAYLOAD = {
    "type": "object",
    "required": [
        "metrics",
        "coefficients",
        "mann_whitney",
        "t_effective",
        "primary_mode",
        "intervals",
        "point_fractions",
        "negative_predictions",
        "provenance",
        "notes",
    ],
    "properties": {
        "metrics": {
            "type": "object",
            "required": ["rmse", "r2", "n_train", "n_test", "n_taxi", "sigma_used", "mean_difference"],
        },
        "coefficients": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["feature", "effect_usd"],
                "properties": {"feature": {"type": "string"}, "effect_usd": {"type": "number"}},
            },
        },
        "mann_whitney": _test,
        "t_effective": {
            "type": "object",
            "required": ["systematic", "independent"],
            "properties": {"systematic": _test, "independent": _test},
        },
        "primary_mode": {"enum": ["systematic", "independent"]},
        "intervals": {
            "type": "object",
            "required": ["below", "above", "overlapping", "level", "counts"],
            "properties": {"below": _fraction, "above": _fraction, "overlapping": _fraction},
        },
        "point_fractions": {
            "type": "object",
            "required": ["pred_below", "pred_above", "ties"],
            "properties": {"pred_below": _fraction, "pred_above": _fraction, "ties": {"type": "integer"}},
        },
        "negative_predictions": {"type": "integer", "minimum": 0},
        "provenance": {
            "type": "object",
            "required": ["tnp_digest", "taxi_digest", "seed", "config_hash", "model_schema"],
        },
        "notes": {"type": "array", "items": {"type": "string"}},
    },
}

WAGE_PAYLOAD = {
    "type": "object",
    "required": ["features", "analyses", "ranking", "regression"],
    "properties": {
        "features": {"type": "array", "items": {"type": "string"}},
        "analyses": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["feature", "n", "table", "omnibus", "pairwise", "summaries", "notes"],
                "properties": {"omnibus": {"oneOf": [{"type": "null"}, _test]}},
            },
        },
        "ranking": {
            "type": "array",
            "items": {"type": "object", "required": ["feature", "magnitude"]},
        },
        "regression": {"type": "object", "required": ["n"]},
    },
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "fareaudit report",
    "type": "object",
    "required": ["schema_version", "kind", "metadata", "payload"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "kind": {"enum": list(KINDS)},
        "metadata": {
            "type": "object",
            "required": ["tool", "tool_version", "config_hash", "dataset_digests", "created_at"],
            "properties": {
                "tool": {"const": "fareaudit"},
                "tool_version": {"type": "string"},
                "config_hash": {"type": ["string", "null"]},
                "dataset_digests": {"type": "object"},
                "created_at": {"type": "string"},
            },
        },
        "payload": {"type": "object"},
    },
    "allOf": [
        {"if": {"properties": {"kind": {"const": "fare_audit"}}}, "then": {"properties": {"payload": FARE_PAYLOAD}}},
        {"if": {"properties": {"kind": {"const": "wage_audit"}}}, "then": {"properties": {"payload": WAGE_PAYLOAD}}},
    ],
}


def _clean(obj):
    """Make a payload JSON-safe: numpy scalars to Python, NaN/inf to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


@dataclass
class ReportDocument:
    """A versioned report plus optional in-memory arrays for plots and tables.

    ``arrays`` may hold ``predictions`` and ``actuals`` for a fare audit.
    """

    kind: str
    payload: dict
    config_hash: Optional[str] = None
    dataset_digests: dict = field(default_factory=dict)
    created_at: Optional[str] = None
    arrays: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        created = self.created_at or dt.datetime.now(dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "metadata": {
                "tool": "fareaudit",
                "tool_version": __version__,
                "config_hash": self.config_hash,
                "dataset_digests": dict(self.dataset_digests),
                "created_at": created,
            },
            "payload": _clean(self.payload),
        }

    def to_json(self) -> str:
        doc = self.to_dict()
        validate_report(doc)
        return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_fare_audit(cls, report, config_hash=None) -> "ReportDocument":
        prov = report.provenance
        return cls(
            "fare_audit",
            report.to_dict(),
            config_hash=config_hash,
            dataset_digests={"tnp": prov["tnp_digest"], "taxi": prov["taxi_digest"]},
            arrays={"predictions": report.predictions, "actuals": report.actuals},
        )

    @classmethod
    def from_wage_audit(cls, report, config_hash=None, digest=None) -> "ReportDocument":
        return cls("wage_audit", report.to_dict(), config_hash=config_hash, dataset_digests={"survey": digest})


def validate_report(doc: dict):
    try:
        jsonschema.validate(doc, REPORT_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise DataError(f"report does not match schema: {exc.message}") from None


def _csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for v in row])
    return buf.getvalue().encode("utf-8")


def _test_row(name, mode, t):
    return [name, mode, t["statistic"], t["df"], t["p_value"], t["alternative"]]


def _tables(doc: ReportDocument) -> dict:
    p = _clean(doc.payload)
    tables = {}
    test_header = ["test", "mode", "statistic", "df", "p_value", "alternative"]
    if doc.kind == "fare_audit":
        tables["coefficients.csv"] = (["feature", "effect_usd"], [[c["feature"], c["effect_usd"]] for c in p["coefficients"]])
        rows = [_test_row("mann_whitney", "", p["mann_whitney"])]
        rows += [_test_row("t_effective", m, t) for m, t in sorted(p["t_effective"].items())]
        tables["tests.csv"] = (test_header, rows)
        preds, actual = doc.arrays.get("predictions"), doc.arrays.get("actuals")
        if preds is not None and actual is not None:
            tables["predictions.csv"] = (["predicted", "actual"], [[float(a), float(b)] for a, b in zip(preds, actual)])
    elif doc.kind == "wage_audit":
        rows = []
        for feature, a in p["analyses"].items():
            if a["omnibus"] is not None:
                rows.append(_test_row("chi_square", feature, a["omnibus"]))
            if a["table"] is not None:
                t = a["table"]
                tables[f"contingency_{feature}.csv"] = (
                    ["group", *t["col_labels"]],
                    [[g, *counts] for g, counts in zip(t["row_labels"], t["counts"])],
                )
            pair_rows = [
                [pr["group_a"], pr["group_b"], None if pr["result"] is None else pr["result"]["statistic"],
                 None if pr["result"] is None else pr["result"]["p_value"], pr["p_adjusted"], pr["error"]]
                for pr in a["pairwise"]
            ]
            tables[f"pairwise_{feature}.csv"] = (
                ["group_a", "group_b", "statistic", "p_raw", "p_adjusted", "error"],
                pair_rows,
            )
        tables["tests.csv"] = (test_header, rows)
        tables["ranking.csv"] = (["feature", "magnitude"], [[r["feature"], r["magnitude"]] for r in p["ranking"]])
        coefs = p["regression"].get("standardized_coefficients")
        if coefs:
            tables["coefficients.csv"] = (["feature", "standardized_coefficient"], [[k, v] for k, v in coefs.items()])
    return tables


def emit_report(doc: ReportDocument, out_dir) -> list:
    """Write ``report.json`` and the CSV tables atomically; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    target = out / "report.json"
    atomic_write(target, doc.to_json().encode("utf-8"))
    paths.append(target)
    for name, (header, rows) in sorted(_tables(doc).items()):
        target = out / name
        atomic_write(target, _csv_bytes(header, rows))
        paths.append(target)
    return paths


def load_report(in_dir) -> ReportDocument:
    """Read a report directory back, including ``predictions.csv`` if present."""
    in_dir = Path(in_dir)
    try:
        data = json.loads((in_dir / "report.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read report in {in_dir}: {exc}") from None
    validate_report(data)
    arrays = {}
    pred_path = in_dir / "predictions.csv"
    if pred_path.exists():
        with open(pred_path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        arrays["predictions"] = np.array([float(r["predicted"]) for r in rows])
        arrays["actuals"] = np.array([float(r["actual"]) for r in rows])
    meta = data["metadata"]
    return ReportDocument(
        data["kind"], data["payload"], meta["config_hash"], meta["dataset_digests"], meta["created_at"], arrays
    )


def normalize_timestamp(text: str) -> str:
    """Blank out ``created_at`` so two report files can be compared byte for byte."""
    doc = json.loads(text)
    doc["metadata"]["created_at"] = ""
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# -- plots ---------------------------------------------------------------


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "fareaudit"
    plt.rcParams["svg.fonttype"] = "none"
    return plt


def subsample_points(n, cap=SCATTER_CAP, seed=0):
    """Sorted index subset of size ``min(n, cap)``; identical for identical seeds."""
    if n <= cap:
        return np.arange(n)
    return np.sort(np.random.default_rng(seed).choice(n, size=cap, replace=False))


def scatter_figure(actual, predicted, cap=SCATTER_CAP, seed=0):
    """Actual vs. predicted fares with the identity line, on equal square axes."""
    plt = _pyplot()
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    idx = subsample_points(len(actual), cap, seed)
    fig, ax = plt.subplots(figsize=(6, 6))
    lo = float(min(actual.min(), predicted.min(), 0.0))
    hi = float(max(actual.max(), predicted.max()))
    pad = 0.02 * (hi - lo or 1.0)
    lo, hi = lo - pad, hi + pad
    ax.scatter(actual[idx], predicted[idx], s=4, alpha=0.4, linewidths=0, gid="fares")
    ax.plot([lo, hi], [lo, hi], "r:", linewidth=1.5, gid="identity")
    ax.set_xlim(lo, hi)
    ax.set_ylim(lo, hi)
    ax.set_aspect("equal")
    ax.set_xlabel("Actual taxi fare (USD)")
    ax.set_ylabel("Predicted rideshare fare (USD)")
    ax.set_title("Actual vs. counterfactual fares")
    return fig


def stacked_bar_figure(feature, summaries, band_labels):
    """Per-group share of each wage band, stacked to 1."""
    plt = _pyplot()
    groups = list(summaries)
    shares = np.array([np.asarray(summaries[g]["distribution"], float) / summaries[g]["n"] for g in groups])
    fig, ax = plt.subplots(figsize=(8, 4.5))
    bottom = np.zeros(len(groups))
    for j, label in enumerate(band_labels):
        ax.bar(groups, shares[:, j], bottom=bottom, label=label)
        bottom += shares[:, j]
    ax.set_ylim(0, 1)
    ax.set_ylabel("Share of drivers")
    ax.set_xlabel(feature)
    ax.set_title(f"Hourly wage distribution by {feature}")
    ax.legend(title="Hourly wage", bbox_to_anchor=(1.02, 1), loc="upper left", fontsize="small")
    ax.tick_params(axis="x", labelrotation=30)
    fig.tight_layout()
    return fig, shares


def _save(fig, path):
    plt = _pyplot()
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    atomic_write(path, buf.getvalue())
    return Path(path)


def emit_plots(doc: ReportDocument, out_dir, seed=0) -> tuple[list, list]:
    """Write the SVG plots the payload supports; returns (paths, skip notes)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths, notes = [], []
    if doc.kind == "fare_audit":
        preds, actual = doc.arrays.get("predictions"), doc.arrays.get("actuals")
        if preds is None or actual is None or len(preds) == 0:
            notes.append("scatter skipped: no predictions in the payload")
        else:
            paths.append(_save(scatter_figure(actual, preds, seed=seed), out / "actual_vs_predicted.svg"))
    elif doc.kind == "wage_audit":
        for feature, analysis in doc.payload["analyses"].items():
            summaries = analysis.get("summaries")
            if not summaries:
                notes.append(f"stacked bars for {feature} skipped: no group summaries")
                continue
            bands = doc.payload.get("band_labels") or [str(i) for i in range(len(next(iter(summaries.values()))["distribution"]))]
            fig, _ = stacked_bar_figure(feature, summaries, bands)
            paths.append(_save(fig, out / f"wage_{feature}.svg"))
    else:
        notes.append(f"no plots defined for {doc.kind} reports")
    return paths, notes
