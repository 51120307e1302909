"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical or degenerate-statistic error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import __version__
from .audit import FareAuditor, digest_records, run_wage_audit
from .config import load_config
from .core import filter_trips
from .exceptions import ConfigError, DataError, NumericalError, PipelineError
from .ingest import PortalClient, ingest_csv, load_survey, load_trips, replay_cache, sync_dataset
from .regress import LinearModel
from .report import ReportDocument, emit_plots, emit_report, load_report
from .synth import (
    calibration_study,
    export_survey_csv,
    export_trips_csv,
    generate_market,
    generate_survey,
    power_study,
)

logger = logging.getLogger("fareaudit")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _kind_source(kind):
    return "rideshare" if kind == "tnp" else "taxi"


def _load_filtered(cfg, path, kind):
    source = cfg.source(kind)
    rows = ingest_csv(path, source.field_map, kind=_kind_source(kind))
    trips, stats = filter_trips(load_trips(rows, source.field_map, _kind_source(kind)), cfg.filter_spec(kind))
    if rows.errors:
        stats.dropped["malformed"] += rows.errors
        stats.input += rows.errors
    label = "rideshare" if kind == "tnp" else "taxi"
    if not trips:
        rule = stats.dominant_rule()
        if rule is None:
            raise PipelineError(f"{label} input {path} contains no trips")
        raise PipelineError(
            f"no {label} trips left after filtering {path}: filter rule '{rule}' dropped "
            f"{stats.dropped[rule]} of {stats.input} records"
        )
    logger.info("%s: kept %d of %d trips", label, stats.retained, stats.input)
    return trips, stats


def _audit_config(cfg, args):
    return cfg.audit(
        mode=args.mode,
        alternative=args.alternative,
        level=args.level,
        sample_cap=args.sample_cap,
        seed=args.seed,
        sigma_override=getattr(args, "sigma", None),
    )


def cmd_ingest(cfg, args):
    source = cfg.source(args.source)
    manifest = sync_dataset(source, args.out, PortalClient(source), max_pages=args.max_pages)
    summary = manifest.to_dict()
    if args.export:
        cols = list(source.field_map)
        with open(args.export, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\r\n")
            writer.writerow(cols)
            for row in replay_cache(args.out, source.dataset_id):
                writer.writerow(["" if row.get(c) is None else row.get(c) for c in cols])
    print(json.dumps({k: summary[k] for k in ("dataset_id", "row_count", "last_offset", "complete")}, indent=2))
    return EXIT_OK


def cmd_filter(cfg, args):
    trips, stats = _load_filtered(cfg, args.input, args.kind)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    source = cfg.source(args.kind)
    export_trips_csv(out / f"{args.kind}_filtered.csv", trips, source.field_map)
    doc = ReportDocument("filter", {"kind": args.kind, "stats": stats.to_dict()}, cfg.hash, {args.kind: digest_records(trips)})
    emit_report(doc, out)
    print(json.dumps(stats.to_dict(), indent=2))
    return EXIT_OK


def cmd_fit(cfg, args):
    trips, _ = _load_filtered(cfg, args.tnp, "tnp")
    auditor = FareAuditor(_audit_config(cfg, args)).fit(trips)
    model = auditor.model_
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "model.json").write_text(model.to_text(), encoding="utf-8")
    payload = {
        "rmse": model.sigma_hat,
        "r2": model.r2,
        "n_train": model.n_train,
        "n_test": model.n_test,
        "regularized": model.regularized,
        "coefficients": [{"feature": k, "effect_usd": v} for k, v in model.coefficient_table()],
    }
    emit_report(ReportDocument("fit", payload, cfg.hash, {"tnp": auditor.dataset_digest_}), out)
    print(f"holdout RMSE {model.sigma_hat:.4f}, R^2 {model.r2:.4f} ({model.n_test} rows)")
    return EXIT_OK


def cmd_audit_fares(cfg, args):
    audit_cfg = _audit_config(cfg, args)
    auditor = FareAuditor(audit_cfg)
    if args.model:
        try:
            text = Path(args.model).read_text(encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read model {args.model}: {exc}") from None
        auditor.set_model(LinearModel.from_text(text))
    else:
        if not args.tnp:
            raise UsageError("audit-fares needs --tnp or --model")
        tnp, _ = _load_filtered(cfg, args.tnp, "tnp")
        auditor.fit(tnp)
    taxi, _ = _load_filtered(cfg, args.taxi, "taxi")
    report = auditor.audit(taxi)
    doc = ReportDocument.from_fare_audit(report, cfg.hash)
    paths = emit_report(doc, args.out)
    if not args.no_plots:
        plot_paths, _ = emit_plots(doc, args.out, seed=audit_cfg.seed)
        paths += plot_paths
    t = report.primary_test
    print(
        f"{t.method} ({report.mode}): t = {t.statistic:.4f}, p = {t.p_value:.4g}; "
        f"intervals below {report.intervals.below:.4f}, above {report.intervals.above:.4f}"
    )
    return EXIT_OK


def cmd_audit_wages(cfg, args):
    schema = cfg.survey_schema()
    try:
        source = cfg.source("survey")
        field_map = source.field_map
    except ConfigError:
        field_map = None
    rows = ingest_csv(args.survey, field_map, kind="survey")
    responses, errors = load_survey(rows, field_map, schema)
    if not responses:
        raise PipelineError(f"no usable survey responses in {args.survey}")
    report = run_wage_audit(
        responses,
        cfg.survey_features(),
        schema,
        correction=cfg.get("survey", "correction", "holm"),
        yates=cfg.get("survey", "yates", False),
    )
    digest = digest_records(responses)
    doc = ReportDocument.from_wage_audit(report, cfg.hash, digest)
    doc.payload["rejected_rows"] = errors + rows.errors
    emit_report(doc, args.out)
    if not args.no_plots:
        emit_plots(doc, args.out)
    for feature, magnitude in report.ranking:
        print(f"{feature}: {magnitude:.4f}")
    return EXIT_OK


def cmd_simulate(cfg, args):
    seed = cfg.seed if args.seed is None else args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = cfg.market(seed=seed)
    if args.delta is not None:
        spec = replace(spec, delta=args.delta)
    if args.study:
        audit_cfg = _audit_config(cfg, args)
        replications = args.replications or cfg.get("study", "replications", 200)
        alpha = cfg.get("study", "alpha", audit_cfg.alpha)
        run = calibration_study if args.study == "calibration" else power_study
        result = run(spec, replications, alpha, audit_cfg, seed0=seed)
        emit_report(ReportDocument("study", {"study": args.study, **result.to_dict()}, cfg.hash), out)
        print(json.dumps(result.to_dict(), indent=2))
        return EXIT_OK
    market = generate_market(spec)
    export_trips_csv(out / "tnp.csv", market.tnp, cfg.source("tnp").field_map)
    export_trips_csv(out / "taxi.csv", market.taxi, cfg.source("taxi").field_map)
    survey = generate_survey(cfg.survey_spec(seed=seed))
    export_survey_csv(out / "survey.csv", survey)
    payload = {
        "seed": seed,
        "market": {k: v for k, v in asdict(spec).items() if k not in ("beta_rideshare", "beta_taxi", "area_probs", "hour_probs")},
        "floored": market.floored,
        "files": {"tnp": "tnp.csv", "taxi": "taxi.csv", "survey": "survey.csv"},
        "counts": {"tnp": len(market.tnp), "taxi": len(market.taxi), "survey": len(survey)},
    }
    digests = {"tnp": digest_records(market.tnp), "taxi": digest_records(market.taxi), "survey": digest_records(survey)}
    emit_report(ReportDocument("simulation", payload, cfg.hash, digests), out)
    print(f"wrote {len(market.tnp)} rideshare, {len(market.taxi)} taxi trips and {len(survey)} survey rows to {out}")
    return EXIT_OK


def cmd_report(cfg, args):
    doc = load_report(args.input)
    paths, notes = emit_plots(doc, args.out or args.input)
    for note in notes:
        print(note, file=sys.stderr)
    for path in paths:
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="configuration file (default: bundled fixture)")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("-v", "--verbose", action="store_true")

    audit_flags = _Parser(add_help=False)
    audit_flags.add_argument("--mode", choices=["systematic", "independent"])
    audit_flags.add_argument("--alternative", choices=["greater", "less", "two_sided"])
    audit_flags.add_argument("--level", type=float)
    audit_flags.add_argument("--sample-cap", type=int, dest="sample_cap")
    audit_flags.add_argument("--sigma", type=float, help="surrogate error to use instead of the holdout RMSE")

    parser = _Parser(prog="fareaudit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"fareaudit {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common], help="sync a portal dataset into the local cache")
    p.add_argument("--source", choices=["tnp", "taxi", "survey"], required=True)
    p.add_argument("--out", required=True, help="cache directory")
    p.add_argument("--max-pages", type=int, dest="max_pages")
    p.add_argument("--export", help="also write the cached rows to this CSV")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("filter", parents=[common], help="apply the dataset filters to a trip CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--kind", choices=["tnp", "taxi"], required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("fit", parents=[common, audit_flags], help="fit the fare surrogate on rideshare trips")
    p.add_argument("--tnp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("audit-fares", parents=[common, audit_flags], help="audit rideshare pricing against taxi fares")
    p.add_argument("--tnp", help="rideshare trips CSV (omit when --model is given)")
    p.add_argument("--taxi", required=True)
    p.add_argument("--model", help="model file written by `fit`")
    p.add_argument("--out", required=True)
    p.add_argument("--no-plots", action="store_true", dest="no_plots")
    p.set_defaults(func=cmd_audit_fares)

    p = sub.add_parser("audit-wages", parents=[common], help="audit driver wages across survey groups")
    p.add_argument("--survey", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-plots", action="store_true", dest="no_plots")
    p.set_defaults(func=cmd_audit_wages)

    p = sub.add_parser("simulate", parents=[common, audit_flags], help="generate a synthetic market or run a study")
    p.add_argument("--out", required=True)
    p.add_argument("--study", choices=["calibration", "power"])
    p.add_argument("--replications", type=int)
    p.add_argument("--delta", type=float, help="overcharge added to rideshare fares (USD)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", parents=[common], help="validate a report directory and render its plots")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", help="plot directory (default: the report directory)")
    p.set_defaults(func=cmd_report)
    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(cfg, args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
