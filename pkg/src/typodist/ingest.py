"""Turn external database exports into tensor batches.

Covers the four preprocessing steps shared by all source databases:
binarizing nominal/ordinal variables, inferring values across redundant
features, canonical feature renaming, and resolving language identifiers
to glottocodes.
"""

from __future__ import annotations

import csv
import graphlib
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

from .errors import (
    CyclicRules,
    FormatError,
    LevelOutOfRange,
    NameCollision,
    UnknownCategory,
    UnknownFeature,
    UnresolvableId,
)
from .kb import (
    Category,
    FeatureDescriptor,
    FeatureOrigin,
    FeatureTensor,
    LanguageRecord,
    TensorBatch,
)

MISSING_MARKERS = {"", "--", "?", "NA", "N/A"}

MAX_NAME_LEN = 64

_GLOTTOCODE_RE = re.compile(r"^[a-z0-9]{4}[0-9]{4}$")


# --- canonical feature names -----------------------------------------------

def canonicalize_feature_name(raw: str, category: Category) -> str:
    """Prefix, uppercase, underscore, strip punctuation, cap at 64 chars."""
    if not raw or not raw.strip():
        raise FormatError("feature label must be non-empty")
    body = re.sub(r"\s+", "_", raw.strip().upper())
    body = re.sub(r"[^A-Z0-9_]", "", body)
    body = re.sub(r"_+", "_", body).strip("_")
    if not body:
        raise FormatError(f"feature label {raw!r} has no usable characters")
    return (category.prefix + body)[:MAX_NAME_LEN]


class CanonicalNamer:
    """Per-run canonical naming with collision detection.

    Two distinct raw labels mapping to one canonical name within one
    ingest run is an error rather than a silent merge.
    """

    def __init__(self):
        self._owner: dict[str, str] = {}

    def claim(self, canonical: str, raw: str) -> str:
        prior = self._owner.get(canonical)
        if prior is not None and prior != raw:
            raise NameCollision(canonical, prior, raw)
        self._owner[canonical] = raw
        return canonical

    def canonicalize(self, raw: str, category: Category) -> str:
        return self.claim(canonicalize_feature_name(raw, category), raw)


# --- binarization -----------------------------------------------------------

def _category_token(value: str) -> str:
    token = re.sub(r"\s+", "_", str(value).strip().upper())
    token = re.sub(r"[^A-Z0-9_]", "", token)
    if not token:
        raise FormatError(f"nominal category {value!r} has no usable characters")
    return token


def nominal_feature_names(feature_label: str, categories: Sequence[str], category: Category) -> list[str]:
    """One canonical name per nominal level, suffix kept intact under truncation."""
    names = []
    for cat_value in categories:
        suffix = _category_token(cat_value)
        budget = max(MAX_NAME_LEN - len(suffix) - 1, len(category.prefix) + 1)
        base = canonicalize_feature_name(feature_label, category)[:budget]
        names.append((base + "_" + suffix)[:MAX_NAME_LEN])
    return names


def binarize_nominal(
    feature_label: str,
    categories: Sequence[str],
    observed: str,
    category: Category,
) -> list[tuple[str, float]]:
    """One-hot encode a nominal observation; exactly one emitted value is 1."""
    cats = list(dict.fromkeys(categories))
    if len(cats) < 2:
        raise FormatError(
            f"nominal feature {feature_label!r} needs at least 2 categories, got {len(cats)}"
        )
    if observed not in cats:
        raise UnknownCategory(
            f"value {observed!r} not among declared categories for {feature_label!r}: {cats}"
        )
    names = nominal_feature_names(feature_label, cats, category)
    return [(name, 1.0 if cat == observed else 0.0) for name, cat in zip(names, cats)]


def binarize_ordinal(
    feature_label: str,
    max_level: int,
    observed: int,
    category: Category,
) -> tuple[str, float]:
    """Collapse an ordinal level to a presence flag (any level above 0)."""
    if not 0 <= observed <= max_level:
        raise LevelOutOfRange(
            f"level {observed} for {feature_label!r} outside [0, {max_level}]"
        )
    name = canonicalize_feature_name(feature_label, category)
    return name, 1.0 if observed > 0 else 0.0


# --- redundant-feature inference --------------------------------------------

class RuleDirection(Enum):
    IMPLIES = "implies"
    EQUIVALENT = "equivalent"


@dataclass(frozen=True)
class InferenceRule:
    """Fill to_feature from from_feature via the value mapping.

    For EQUIVALENT rules, from_feature is the redundant duplicate: after
    its values are propagated it is dropped from the batch entirely.
    """

    from_feature: str
    to_feature: str
    direction: RuleDirection
    mapping: tuple[tuple[float, float], ...]  # (from value, inferred to value) pairs

    def __post_init__(self):
        if self.from_feature == self.to_feature:
            raise FormatError(f"inference rule on {self.from_feature!r} maps to itself")
        if self.direction is RuleDirection.EQUIVALENT:
            targets = [t for _, t in self.mapping]
            if len(set(targets)) != len(targets):
                raise FormatError(
                    f"equivalent rule {self.from_feature!r} ~ {self.to_feature!r} "
                    "must map values one-to-one"
                )

    def mapped(self, value: float) -> Optional[float]:
        for src, dst in self.mapping:
            if src == value:
                return dst
        return None


def load_rules(path) -> list[InferenceRule]:
    """Rules CSV: from_feature,to_feature,direction,from_value,to_value.

    Several rows with the same feature pair and direction accumulate into
    one rule's value mapping.
    """
    grouped: dict[tuple[str, str, RuleDirection], list[tuple[float, float]]] = {}
    order: list[tuple[str, str, RuleDirection]] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != [
            "from_feature", "to_feature", "direction", "from_value", "to_value",
        ]:
            raise FormatError(f"{path}: bad rules header")
        for row_num, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 5:
                raise FormatError(f"{path}: row {row_num}: expected 5 columns")
            frm, to, direction_s, fv, tv = (c.strip() for c in row)
            try:
                direction = RuleDirection(direction_s.lower())
            except ValueError:
                raise FormatError(
                    f"{path}: row {row_num}: direction must be implies or equivalent"
                ) from None
            try:
                pair = (float(fv), float(tv))
            except ValueError:
                raise FormatError(f"{path}: row {row_num}: bad value mapping") from None
            key = (frm, to, direction)
            if key not in grouped:
                grouped[key] = []
                order.append(key)
            grouped[key].append(pair)
    return [
        InferenceRule(frm, to, direction, tuple(grouped[(frm, to, direction)]))
        for frm, to, direction in order
    ]


def check_rules_acyclic(rules: Iterable[InferenceRule]) -> None:
    """Reject cycles among IMPLIES edges (from_feature -> to_feature)."""
    graph: dict[str, set[str]] = {}
    for rule in rules:
        if rule.direction is RuleDirection.IMPLIES:
            graph.setdefault(rule.to_feature, set()).add(rule.from_feature)
    try:
        tuple(graphlib.TopologicalSorter(graph).static_order())
    except graphlib.CycleError as exc:
        raise CyclicRules(f"inference rules contain an implication cycle: {exc.args[1]}") from None


def apply_inference(
    rules: Sequence[InferenceRule],
    batch: TensorBatch,
    tensor: Optional[FeatureTensor] = None,
) -> TensorBatch:
    """Propagate values along rules, then drop equivalent-rule duplicates.

    A target cell already known (in the batch or in the tensor the batch
    will extend) is never overwritten. Rules are applied to a fixpoint so
    the operation is idempotent; chained implications resolve regardless
    of rule order.
    """
    check_rules_acyclic(rules)
    known_features = {f.name for f in batch.features}
    if tensor is not None:
        known_features.update(f.name for f in tensor.features)
    for rule in rules:
        for name in (rule.from_feature, rule.to_feature):
            if name not in known_features:
                raise UnknownFeature(name)

    # (lang, feature) -> first contributing source and its value
    cell_map: dict[tuple[str, str], tuple[str, float]] = {}
    for lang, feat, src, value in batch.cells:
        cell_map.setdefault((lang, feat), (src, value))
    known_in_tensor: set[tuple[str, str]] = set()
    if tensor is not None:
        for lang, feat, _src, _value in tensor.iter_cells():
            known_in_tensor.add((lang, feat))

    languages = {lang for lang, _feat in cell_map} | {
        rec.glottocode for rec in batch.languages
    }
    inferred: list[tuple[str, str, str, float]] = []
    changed = True
    while changed:
        changed = False
        for rule in rules:
            for lang in languages:
                src_cell = cell_map.get((lang, rule.from_feature))
                if src_cell is None:
                    continue
                if (lang, rule.to_feature) in cell_map or (lang, rule.to_feature) in known_in_tensor:
                    continue
                mapped = rule.mapped(src_cell[1])
                if mapped is None:
                    continue
                cell_map[(lang, rule.to_feature)] = (src_cell[0], mapped)
                inferred.append((lang, rule.to_feature, src_cell[0], mapped))
                changed = True

    dropped = {r.from_feature for r in rules if r.direction is RuleDirection.EQUIVALENT}
    cells = [c for c in batch.cells + inferred if c[1] not in dropped]
    features = [f for f in batch.features if f.name not in dropped]
    return TensorBatch(
        languages=list(batch.languages),
        features=features,
        sources=list(batch.sources),
        cells=cells,
    )


# --- language identifier resolution ------------------------------------------

@dataclass
class IdResolutionTable:
    """ISO 639-3 to glottocode mapping, with a side table for retired codes."""

    iso_to_glotto: dict[str, str] = field(default_factory=dict)
    retired_iso: dict[str, str] = field(default_factory=dict)


def load_resolution_table(path) -> IdResolutionTable:
    """Resolution CSV: external_id,glottocode,retired_flag."""
    table = IdResolutionTable()
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != [
            "external_id", "glottocode", "retired_flag",
        ]:
            raise FormatError(f"{path}: bad resolution-table header")
        for row_num, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise FormatError(f"{path}: row {row_num}: expected 3 columns")
            ext, glotto, flag = (c.strip() for c in row)
            if not _GLOTTOCODE_RE.match(glotto):
                raise FormatError(f"{path}: row {row_num}: {glotto!r} is not a glottocode")
            retired = flag.lower() in {"1", "true", "yes", "retired"}
            if retired:
                table.retired_iso[ext] = glotto
            else:
                table.iso_to_glotto[ext] = glotto
    return table


def resolve_language(external_id: str, table: IdResolutionTable) -> str:
    """Glottocodes pass through; ISO codes (current or retired) map via the table."""
    ext = external_id.strip()
    if _GLOTTOCODE_RE.match(ext):
        return ext
    if ext in table.iso_to_glotto:
        return table.iso_to_glotto[ext]
    if ext in table.retired_iso:
        return table.retired_iso[ext]
    raise UnresolvableId(external_id)


def is_retired(external_id: str, table: IdResolutionTable) -> bool:
    return external_id.strip() in table.retired_iso


# --- schema-driven source reading --------------------------------------------

class VariableKind(Enum):
    BINARY = "binary"
    NOMINAL = "nominal"
    ORDINAL = "ordinal"


@dataclass(frozen=True)
class FeatureSpec:
    label: str
    kind: VariableKind
    category: Category
    categories: tuple[str, ...] = ()
    max_level: int = 0


@dataclass
class IngestSchema:
    features: dict[str, FeatureSpec]

    def lookup(self, label: str) -> FeatureSpec:
        try:
            return self.features[label]
        except KeyError:
            raise FormatError(f"feature label {label!r} is not in the ingest schema") from None


def load_ingest_schema(path) -> IngestSchema:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    raw_features = data.get("features")
    if not isinstance(raw_features, dict) or not raw_features:
        raise FormatError(f"{path}: schema must define a non-empty 'features' object")
    features: dict[str, FeatureSpec] = {}
    for label, spec in raw_features.items():
        try:
            kind = VariableKind(spec["kind"])
            category = Category(spec["category"])
        except (KeyError, ValueError) as exc:
            raise FormatError(f"{path}: feature {label!r}: {exc}") from None
        categories = tuple(spec.get("categories", ()))
        max_level = int(spec.get("max_level", 0))
        if kind is VariableKind.NOMINAL and len(categories) < 2:
            raise FormatError(f"{path}: nominal feature {label!r} needs >= 2 categories")
        if kind is VariableKind.ORDINAL and max_level < 1:
            raise FormatError(f"{path}: ordinal feature {label!r} needs max_level >= 1")
        features[label] = FeatureSpec(label, kind, category, categories, max_level)
    return IngestSchema(features)


@dataclass(frozen=True)
class RawRecord:
    external_lang_id: str
    feature_label: str
    value: str
    source_name: str


@dataclass
class IngestReport:
    source: str
    rows_read: int = 0
    cells_written: int = 0
    rows_skipped_missing: int = 0
    resolved_retired: list[tuple[str, str]] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "source": self.source,
            "rows_read": self.rows_read,
            "cells_written": self.cells_written,
            "rows_skipped_missing": self.rows_skipped_missing,
            "resolved_retired": [list(pair) for pair in self.resolved_retired],
        }


def read_source_csv(path, source_name: str) -> list[RawRecord]:
    """Raw export CSV with header language,feature,value."""
    records = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["language", "feature", "value"]:
            raise FormatError(f"{path}: row 1: expected header 'language,feature,value'")
        for row_num, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise FormatError(f"{path}: row {row_num}: expected 3 columns, got {len(row)}")
            records.append(RawRecord(row[0].strip(), row[1].strip(), row[2].strip(), source_name))
    return records


def build_batch(
    records: Iterable[RawRecord],
    schema: IngestSchema,
    table: IdResolutionTable,
    namer: Optional[CanonicalNamer] = None,
    source_name: str = "",
    source_path=None,
) -> tuple[TensorBatch, IngestReport]:
    """Binarize, rename, and resolve one source's records into a batch."""
    namer = namer if namer is not None else CanonicalNamer()
    batch = TensorBatch()
    report = IngestReport(source=source_name)
    seen_langs: set[str] = set()
    seen_feats: set[str] = set()
    seen_sources: set[str] = set()

    def add_feature(name: str, category: Category, origin: FeatureOrigin):
        if name not in seen_feats:
            seen_feats.add(name)
            batch.features.append(FeatureDescriptor(name, category, origin))

    for i, rec in enumerate(records):
        if not report.source:
            report.source = rec.source_name
        report.rows_read += 1
        if rec.value in MISSING_MARKERS:
            report.rows_skipped_missing += 1
            continue

        glotto = resolve_language(rec.external_lang_id, table)
        if is_retired(rec.external_lang_id, table):
            pair = (rec.external_lang_id, glotto)
            if pair not in report.resolved_retired:
                report.resolved_retired.append(pair)
        if glotto not in seen_langs:
            seen_langs.add(glotto)
            iso = rec.external_lang_id if rec.external_lang_id != glotto else None
            batch.languages.append(LanguageRecord(glottocode=glotto, iso639_3=iso))
        if rec.source_name not in seen_sources:
            seen_sources.add(rec.source_name)
            batch.sources.append(rec.source_name)

        spec = schema.lookup(rec.feature_label)
        if spec.kind is VariableKind.BINARY:
            if rec.value not in {"0", "1", "0.0", "1.0"}:
                raise FormatError(
                    f"{source_path}: record {i + 1}: binary feature "
                    f"{rec.feature_label!r} has non-binary value {rec.value!r}"
                )
            name = namer.canonicalize(rec.feature_label, spec.category)
            add_feature(name, spec.category, FeatureOrigin.native())
            batch.cells.append((glotto, name, rec.source_name, float(rec.value)))
        elif spec.kind is VariableKind.NOMINAL:
            pairs = binarize_nominal(rec.feature_label, spec.categories, rec.value, spec.category)
            base = canonicalize_feature_name(rec.feature_label, spec.category)
            for (name, value), cat_value in zip(pairs, spec.categories):
                namer.claim(name, f"{rec.feature_label}={cat_value}")
                add_feature(name, spec.category, FeatureOrigin.nominal(base, str(cat_value)))
                batch.cells.append((glotto, name, rec.source_name, value))
        else:
            try:
                level = int(rec.value)
            except ValueError:
                raise FormatError(
                    f"{source_path}: record {i + 1}: ordinal feature "
                    f"{rec.feature_label!r} has non-integer level {rec.value!r}"
                ) from None
            name, value = binarize_ordinal(rec.feature_label, spec.max_level, level, spec.category)
            namer.claim(name, rec.feature_label)
            add_feature(name, spec.category, FeatureOrigin.ordinal(rec.feature_label))
            batch.cells.append((glotto, name, rec.source_name, value))

    report.cells_written = len(batch.cells)
    return batch, report


def merge_batches(batches: Sequence[TensorBatch]) -> TensorBatch:
    """Concatenate per-source batches, deduplicating registry entries."""
    merged = TensorBatch()
    seen_langs: dict[str, LanguageRecord] = {}
    seen_feats: dict[str, FeatureDescriptor] = {}
    seen_sources: set[str] = set()
    for batch in batches:
        for rec in batch.languages:
            prior = seen_langs.get(rec.glottocode)
            if prior is None:
                seen_langs[rec.glottocode] = rec
                merged.languages.append(rec)
            elif prior != rec:
                # keep the first record; identity is the glottocode
                continue
        for desc in batch.features:
            prior = seen_feats.get(desc.name)
            if prior is None:
                seen_feats[desc.name] = desc
                merged.features.append(desc)
            elif prior != desc:
                raise FormatError(
                    f"feature {desc.name!r} declared with conflicting metadata "
                    "across sources"
                )
        for src in batch.sources:
            if src not in seen_sources:
                seen_sources.add(src)
                merged.sources.append(src)
        merged.cells.extend(batch.cells)
    return merged
