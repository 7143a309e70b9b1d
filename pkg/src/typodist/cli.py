"""Command-line frontend binding the modules into batch workflows.

Exit codes: 0 success (a not-computable distance is a successful answer),
1 query error (unknown identifiers, undefined statistics), 2 input-format
error. All randomness flows from --seed; identical flags, data, and seed
produce byte-identical reports.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import storage
from .aggregate import AggregationMode, aggregate
from .confidence import QualityCache, confidence_report
from .distance import DistanceRequest, Metric, distance_matrix, language_distance
from .errors import FormatError, QueryError, TypodistError
from .evalkit import (
    case_study,
    coverage_report,
    knn_select_k,
    load_case_study,
    quality_test,
)
from .impute import ImputerSpec, run_imputer
from .ingest import (
    CanonicalNamer,
    apply_inference,
    build_batch,
    load_ingest_schema,
    load_resolution_table,
    load_rules,
    merge_batches,
    read_source_csv,
)
from .kb import Category, FeatureTensor, ResourceTier

EXIT_OK = 0
EXIT_QUERY = 1
EXIT_FORMAT = 2

DATA_DIR_ENV = "TYPODIST_DATA_DIR"


@dataclass
class CliConfig:
    data_dir: Optional[str] = None
    aggregation: str = "union"
    metric: str = "angular"
    imputer: str = "softimpute"
    seed: int = 0
    resolution_table: Optional[str] = None
    rules_file: Optional[str] = None


def load_config(path) -> CliConfig:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    config = CliConfig(
        data_dir=data.get("data_dir"),
        aggregation=data.get("aggregation", "union"),
        metric=data.get("metric", "angular"),
        imputer=data.get("imputer", "softimpute"),
        seed=int(data.get("seed", 0)),
        resolution_table=data.get("resolution_table"),
        rules_file=data.get("rules_file"),
    )
    if not 0 <= config.seed < 2**64:
        raise FormatError("seed must be an unsigned 64-bit integer")
    for key in ("data_dir", "resolution_table", "rules_file"):
        value = getattr(config, key)
        if value is not None and not Path(value).exists():
            raise FormatError(f"config {key} does not exist: {value}")
    return config


def _emit(payload: dict, fmt: str) -> None:
    if fmt == "json":
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        for line in _as_table(payload):
            print(line)


def _as_table(payload, prefix="") -> list[str]:
    lines = []
    if isinstance(payload, dict):
        for key in sorted(payload):
            value = payload[key]
            if isinstance(value, (dict, list)):
                lines.append(f"{prefix}{key}:")
                lines.extend(_as_table(value, prefix + "  "))
            else:
                lines.append(f"{prefix}{key}: {value}")
    elif isinstance(payload, list):
        for item in payload:
            if isinstance(item, (dict, list)):
                lines.extend(_as_table(item, prefix + "  "))
            else:
                lines.append(f"{prefix}- {item}")
    return lines


def _data_dir(args, config: CliConfig) -> Path:
    candidate = args.data or os.environ.get(DATA_DIR_ENV) or config.data_dir
    if not candidate:
        raise QueryError("no data directory: pass --data or set TYPODIST_DATA_DIR")
    return Path(candidate)


def _load_tensor(args, config: CliConfig) -> FeatureTensor:
    return storage.load_tensor(_data_dir(args, config))


def _parse_category(name: str) -> Category:
    try:
        return Category(name.lower())
    except ValueError:
        raise QueryError(f"unknown feature category: {name!r}") from None


def _feature_selector(args):
    if getattr(args, "category", None):
        return _parse_category(args.category)
    if getattr(args, "features", None):
        return [f.strip() for f in args.features.split(",") if f.strip()]
    return None


def _source_selector(args):
    if getattr(args, "source", None):
        return args.source
    if getattr(args, "sources", None):
        return [s.strip() for s in args.sources.split(",") if s.strip()]
    return None


def _imputer_spec(args, config: CliConfig, method: Optional[str] = None) -> ImputerSpec:
    method = method or getattr(args, "method", None) or config.imputer
    return ImputerSpec(
        method=method,
        k=getattr(args, "k", 9),
        lam=getattr(args, "lam", None),
        rank_cap=getattr(args, "rank_cap", None),
        seed=getattr(args, "seed", config.seed),
        external_path=getattr(args, "external_file", None),
    )


# --- subcommands ---------------------------------------------------------------

def cmd_ingest(args, config: CliConfig) -> int:
    schema = load_ingest_schema(args.schema)
    table = load_resolution_table(args.resolution_table or config.resolution_table)
    rules_path = args.rules or config.rules_file
    rules = load_rules(rules_path) if rules_path else []

    namer = CanonicalNamer()
    batches, reports = [], []
    for entry in args.source:
        name, _, path = entry.partition("=")
        if not path:
            raise QueryError(f"--source must look like NAME=PATH, got {entry!r}")
        records = read_source_csv(path, name)
        batch, report = build_batch(
            records, schema, table, namer=namer, source_name=name, source_path=path
        )
        batches.append(batch)
        reports.append(report)

    merged = merge_batches(batches)
    tensor = storage.load_tensor(args.data) if args.data else FeatureTensor()
    if rules:
        merged = apply_inference(rules, merged, tensor if args.data else None)

    # drop already-registered entries so re-registration cannot conflict,
    # and screen out cell conflicts: existing known values win
    merged.languages = [r for r in merged.languages if not tensor.has_language(r.glottocode)]
    conflicts = []
    kept = []
    for lang, feat, src, value in merged.cells:
        try:
            existing = tensor.get_cell(lang, feat, src)
        except TypodistError:
            existing = None
        if existing is not None and existing != value:
            conflicts.append({"cell": [lang, feat, src], "existing": existing, "incoming": value})
        else:
            kept.append((lang, feat, src, value))
    merged.cells = kept
    tensor.extend_with(merged)
    storage.save_tensor(tensor, args.out)

    payload = {
        "data_dir": str(args.out),
        "languages": len(tensor.languages),
        "features": len(tensor.features),
        "sources": tensor.sources,
        "cells": tensor.cell_count(),
        "conflicts": conflicts,
        "per_source": [r.to_json() for r in reports],
    }
    _emit(payload, args.format)
    return EXIT_OK


def cmd_aggregate(args, config: CliConfig) -> int:
    tensor = _load_tensor(args, config)
    mode = AggregationMode(args.mode or config.aggregation)
    matrix = aggregate(tensor, mode, _source_selector(args))
    storage.export_matrix_csv(matrix.languages, matrix.features, matrix.values, args.out)
    _emit(
        {
            "out": str(args.out),
            "mode": mode.value,
            "languages": len(matrix.languages),
            "features": len(matrix.features),
            "sources": list(matrix.provenance),
        },
        args.format,
    )
    return EXIT_OK


def cmd_impute(args, config: CliConfig) -> int:
    tensor = _load_tensor(args, config)
    mode = AggregationMode(args.mode or config.aggregation)
    matrix = aggregate(tensor, mode, _source_selector(args))
    spec = _imputer_spec(args, config)
    result = run_imputer(matrix, spec, registry=tensor, dialect_fill=args.dialect_fill)
    storage.export_matrix_csv(result.languages, result.features, result.values, args.out)
    mask_path = str(args.out) + ".mask.csv"
    storage.export_mask_csv(result.languages, result.features, result.imputed_mask, mask_path)
    _emit(
        {
            "out": str(args.out),
            "mask_out": mask_path,
            "mode": mode.value,
            "method": spec.key,
            "imputed_cells": int(result.imputed_mask.sum()),
            "converged": result.converged,
            "all_missing_columns": result.all_missing_columns,
        },
        args.format,
    )
    return EXIT_OK


def cmd_distance(args, config: CliConfig) -> int:
    tensor = _load_tensor(args, config)
    mode = AggregationMode(args.aggregation or config.aggregation)
    metric = Metric(args.metric or config.metric)
    imputer = _imputer_spec(args, config, method=args.impute) if args.impute else None
    template = DistanceRequest(
        lang_a="",
        lang_b="",
        metric=metric,
        aggregation=mode,
        features=_feature_selector(args),
        sources=_source_selector(args),
        use_imputed=imputer is not None,
        imputer=imputer,
    )
    matrix = aggregate(tensor, mode, _normalized_sources(template.sources))
    if imputer is not None:
        matrix = run_imputer(matrix, imputer, registry=tensor, dialect_fill=args.dialect_fill)

    langs = args.languages
    if len(langs) == 2:
        from dataclasses import replace

        result = language_distance(replace(template, lang_a=langs[0], lang_b=langs[1]), matrix)
        _emit(result.to_json(), args.format)
    else:
        grid = distance_matrix(langs, template, matrix)
        _emit(
            {
                "languages": langs,
                "metric": metric.value,
                "aggregation": mode.value,
                "results": [[cell.to_json() for cell in row] for row in grid],
            },
            args.format,
        )
    return EXIT_OK


def _normalized_sources(selector):
    if selector is None:
        return None
    if isinstance(selector, str):
        return [selector]
    return list(selector)


def cmd_confidence(args, config: CliConfig) -> int:
    tensor = _load_tensor(args, config)
    mode = AggregationMode(args.aggregation or config.aggregation)
    method = _imputer_spec(args, config, method=args.method) if args.method else None
    cache = QualityCache.load(args.quality_cache) if args.quality_cache else None
    report = confidence_report(
        args.lang_a,
        args.lang_b,
        tensor,
        scope=_feature_selector(args),
        method=method,
        mode=mode,
        cache=cache,
    )
    _emit(report.to_json(), args.format)
    return EXIT_OK


def cmd_eval_quality(args, config: CliConfig) -> int:
    tensor = _load_tensor(args, config)
    mode = AggregationMode(args.mode or config.aggregation)
    matrix = aggregate(tensor, mode, _source_selector(args))
    spec = _imputer_spec(args, config, method=args.imputer)
    report = quality_test(
        matrix,
        spec,
        seed=args.seed,
        registry=tensor,
        dialect_fill=not args.no_dialect_fill,
    )
    payload = report.to_json()
    if args.select_k:
        payload["selected_k"] = knn_select_k(
            matrix,
            seed=args.seed,
            registry=tensor,
            dialect_fill=not args.no_dialect_fill,
        )
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    if args.quality_cache:
        path = Path(args.quality_cache)
        cache = QualityCache.load(path) if path.exists() else QualityCache()
        cache.store(spec.key, mode, report.metrics)
        cache.save(path)
    _emit(payload, args.format)
    return EXIT_OK


def cmd_eval_casestudy(args, config: CliConfig) -> int:
    labels, a, b, ref = load_case_study(args.input)
    result = case_study(
        a, b, ref, iterations=args.iterations, seed=args.seed, pair_labels=labels
    )
    payload = result.to_json()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    _emit(payload, args.format)
    return EXIT_OK


def cmd_eval_coverage(args, config: CliConfig) -> int:
    tensor = _load_tensor(args, config)
    tiers = {}
    if args.tiers:
        import csv as _csv

        with open(args.tiers, encoding="utf-8", newline="") as fh:
            reader = _csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip().lower() for h in header] != ["glottocode", "tier"]:
                raise FormatError(f"{args.tiers}: expected header 'glottocode,tier'")
            for row_num, row in enumerate(reader, start=2):
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != 2:
                    raise FormatError(f"{args.tiers}: row {row_num}: expected 2 columns")
                try:
                    tiers[row[0].strip()] = ResourceTier(row[1].strip())
                except ValueError:
                    raise FormatError(
                        f"{args.tiers}: row {row_num}: unknown tier {row[1].strip()!r}"
                    ) from None
    report = coverage_report(tensor, tiers=tiers)
    _emit(report.to_json(), args.format)
    return EXIT_OK


# --- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="typodist",
        description="Typological knowledge base: ingest, aggregate, impute, "
        "measure language distances, and evaluate.",
    )
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--format", choices=("json", "table"), default="json")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="build or extend a tensor from source CSVs")
    p_ingest.add_argument("--schema", required=True)
    p_ingest.add_argument("--resolution-table")
    p_ingest.add_argument("--rules")
    p_ingest.add_argument(
        "--source", action="append", required=True, metavar="NAME=PATH",
        help="source name and CSV path; repeatable",
    )
    p_ingest.add_argument("--data", help="existing tensor directory to extend")
    p_ingest.add_argument("--out", required=True, help="tensor directory to write")
    p_ingest.set_defaults(func=cmd_ingest)

    p_agg = sub.add_parser("aggregate", help="export an aggregated matrix")
    _add_data_arg(p_agg)
    p_agg.add_argument("--mode", choices=("union", "average"))
    _add_source_args(p_agg)
    p_agg.add_argument("--out", required=True)
    p_agg.set_defaults(func=cmd_aggregate)

    p_imp = sub.add_parser("impute", help="impute an aggregated matrix")
    _add_data_arg(p_imp)
    p_imp.add_argument("--mode", choices=("union", "average"))
    _add_source_args(p_imp)
    _add_imputer_args(p_imp, with_method=True)
    p_imp.add_argument("--dialect-fill", action="store_true")
    p_imp.add_argument("--seed", type=int, default=0)
    p_imp.add_argument("--out", required=True)
    p_imp.set_defaults(func=cmd_impute)

    p_dist = sub.add_parser("distance", help="distance between languages")
    _add_data_arg(p_dist)
    p_dist.add_argument("languages", nargs="+", metavar="GLOTTOCODE")
    p_dist.add_argument("--metric", choices=("angular", "cosine"))
    p_dist.add_argument("--aggregation", choices=("union", "average"))
    p_dist.add_argument("--category")
    p_dist.add_argument("--features", help="comma-separated feature names")
    _add_source_args(p_dist)
    p_dist.add_argument("--impute", metavar="METHOD",
                        choices=("mean", "knn", "softimpute", "external"))
    _add_imputer_args(p_dist, with_method=False)
    p_dist.add_argument("--dialect-fill", action="store_true")
    p_dist.add_argument("--seed", type=int, default=0)
    p_dist.set_defaults(func=cmd_distance)

    p_conf = sub.add_parser("confidence", help="confidence components for a pair")
    _add_data_arg(p_conf)
    p_conf.add_argument("lang_a")
    p_conf.add_argument("lang_b")
    p_conf.add_argument("--category")
    p_conf.add_argument("--features")
    p_conf.add_argument("--aggregation", choices=("union", "average"))
    p_conf.add_argument("--method", choices=("mean", "knn", "softimpute", "external"))
    _add_imputer_args(p_conf, with_method=False)
    p_conf.add_argument("--quality-cache", help="JSON cache from 'eval quality'")
    p_conf.add_argument("--seed", type=int, default=0)
    p_conf.set_defaults(func=cmd_confidence)

    p_eval = sub.add_parser("eval", help="evaluation workflows")
    eval_sub = p_eval.add_subparsers(dest="eval_command", required=True)

    p_q = eval_sub.add_parser("quality", help="held-out imputation quality test")
    _add_data_arg(p_q)
    p_q.add_argument("--imputer", required=True,
                     choices=("mean", "knn", "softimpute", "external"))
    p_q.add_argument("--mode", choices=("union", "average"))
    _add_source_args(p_q)
    _add_imputer_args(p_q, with_method=False)
    p_q.add_argument("--seed", type=int, default=0)
    p_q.add_argument("--no-dialect-fill", action="store_true")
    p_q.add_argument("--select-k", action="store_true",
                     help="also run the cross-validated k search")
    p_q.add_argument("--out", help="write the report JSON here as well")
    p_q.add_argument("--quality-cache", help="update this cache file with the metrics")
    p_q.set_defaults(func=cmd_eval_quality)

    p_cs = eval_sub.add_parser("casestudy", help="rank correlations plus Perm-Both test")
    p_cs.add_argument("--input", required=True, help="CSV: pair,dist_a,dist_b,g_d")
    p_cs.add_argument("--iterations", type=int, default=10000)
    p_cs.add_argument("--seed", type=int, default=0)
    p_cs.add_argument("--out")
    p_cs.set_defaults(func=cmd_eval_casestudy)

    p_cov = eval_sub.add_parser("coverage", help="per-category / per-tier coverage")
    _add_data_arg(p_cov)
    p_cov.add_argument("--tiers", help="CSV: glottocode,tier")
    p_cov.set_defaults(func=cmd_eval_coverage)

    return parser


def _add_data_arg(p):
    p.add_argument("--data", help=f"tensor directory (default: ${DATA_DIR_ENV} or config)")


def _add_source_args(p):
    p.add_argument("--source", help="restrict to one source")
    p.add_argument("--sources", help="restrict to a comma-separated source subset")


def _add_imputer_args(p, with_method: bool):
    if with_method:
        p.add_argument("--method", default=None,
                       choices=("mean", "knn", "softimpute", "external"))
    p.add_argument("--k", type=int, default=9)
    p.add_argument("--lam", type=float, default=None)
    p.add_argument("--rank-cap", type=int, default=None, dest="rank_cap")
    p.add_argument("--external-file", default=None,
                   help="dense matrix CSV for the external imputer")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config) if args.config else CliConfig()
        return args.func(args, config)
    except FormatError as exc:
        _print_error(exc)
        return EXIT_FORMAT
    except QueryError as exc:
        _print_error(exc)
        return EXIT_QUERY
    except TypodistError as exc:
        _print_error(exc)
        return EXIT_QUERY
    except ValueError as exc:
        _print_error(exc)
        return EXIT_QUERY


def _print_error(exc: Exception) -> None:
    print(
        json.dumps({"error": type(exc).__name__, "message": str(exc)}, sort_keys=True),
        file=sys.stderr,
    )


if __name__ == "__main__":
    sys.exit(main())
