"""On-disk formats: tensor directory, matrix CSV, imputation exchange files.

A tensor directory holds ``registries.json`` plus one ``<source>.csv``
per source with header ``language,feature,value``. Matrix exports are
CSV with language rows and feature columns; ``--`` marks a missing cell.
"""

from __future__ import annotations

import csv
import json
import re
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import FormatError
from .kb import (
    Category,
    FeatureDescriptor,
    FeatureOrigin,
    FeatureTensor,
    LanguageRecord,
    OriginKind,
    ResourceTier,
    TensorBatch,
)

MISSING_TOKEN = "--"
REGISTRY_FILE = "registries.json"

_SAFE_SOURCE_RE = re.compile(r"^[A-Za-z0-9._-]+$")


def format_value(v: float) -> str:
    """Render a cell value so that parsing it back is bit-exact."""
    v = float(v)
    if v == int(v):
        return str(int(v))
    return repr(v)


def parse_value(text: str, path, row_num: int) -> Optional[float]:
    text = text.strip()
    if text == MISSING_TOKEN:
        return None
    try:
        v = float(text)
    except ValueError:
        raise FormatError(f"{path}: row {row_num}: bad value {text!r}") from None
    if not 0.0 <= v <= 1.0:
        raise FormatError(f"{path}: row {row_num}: value {v} outside [0, 1]")
    return v


def _language_to_json(rec: LanguageRecord) -> dict:
    return {
        "glottocode": rec.glottocode,
        "iso639_3": rec.iso639_3,
        "name": rec.name,
        "parent": rec.parent,
        "tier": rec.tier.value,
    }


def _feature_to_json(desc: FeatureDescriptor) -> dict:
    return {
        "name": desc.name,
        "category": desc.category.value,
        "origin": {
            "kind": desc.origin.kind.value,
            "parent_feature": desc.origin.parent_feature,
            "level": desc.origin.level,
        },
    }


def _language_from_json(obj: dict) -> LanguageRecord:
    return LanguageRecord(
        glottocode=obj["glottocode"],
        iso639_3=obj.get("iso639_3"),
        name=obj.get("name", ""),
        parent=obj.get("parent"),
        tier=ResourceTier(obj.get("tier", "Unknown")),
    )


def _feature_from_json(obj: dict) -> FeatureDescriptor:
    origin = obj.get("origin") or {}
    return FeatureDescriptor(
        name=obj["name"],
        category=Category(obj["category"]),
        origin=FeatureOrigin(
            kind=OriginKind(origin.get("kind", "native")),
            parent_feature=origin.get("parent_feature"),
            level=origin.get("level"),
        ),
    )


def save_tensor(tensor: FeatureTensor, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for src in tensor.sources:
        if not _SAFE_SOURCE_RE.match(src):
            raise FormatError(f"source name {src!r} is not filesystem-safe")

    registries = {
        "languages": [_language_to_json(r) for r in tensor.languages],
        "features": [_feature_to_json(f) for f in tensor.features],
        "sources": tensor.sources,
    }
    with open(directory / REGISTRY_FILE, "w", encoding="utf-8") as fh:
        json.dump(registries, fh, indent=2, sort_keys=True)
        fh.write("\n")

    rows_by_source: dict[str, list[tuple[str, str, str]]] = {s: [] for s in tensor.sources}
    for lang, feat, src, value in tensor.iter_cells():
        rows_by_source[src].append((lang, feat, format_value(value)))
    for src, rows in rows_by_source.items():
        rows.sort()
        with open(directory / f"{src}.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["language", "feature", "value"])
            writer.writerows(rows)


def load_tensor(directory) -> FeatureTensor:
    directory = Path(directory)
    reg_path = directory / REGISTRY_FILE
    if not reg_path.exists():
        raise FormatError(f"no {REGISTRY_FILE} in {directory}")
    with open(reg_path, encoding="utf-8") as fh:
        registries = json.load(fh)

    tensor = FeatureTensor()
    # saved order preserves registration order, so parents precede dialects
    for obj in registries.get("languages", []):
        tensor.add_language(_language_from_json(obj))
    for obj in registries.get("features", []):
        tensor.add_feature(_feature_from_json(obj))
    for src in registries.get("sources", []):
        tensor.add_source(src)

    cells = []
    for src in registries.get("sources", []):
        path = directory / f"{src}.csv"
        if not path.exists():
            continue  # a source with no stored cells
        for row_num, row in _read_csv_rows(path, expected_header=["language", "feature", "value"]):
            if len(row) != 3:
                raise FormatError(f"{path}: row {row_num}: expected 3 columns, got {len(row)}")
            value = parse_value(row[2], path, row_num)
            if value is None:
                continue  # explicit-missing row
            cells.append((row[0].strip(), row[1].strip(), src, value))
    tensor.extend_with(TensorBatch(cells=cells))
    return tensor


def _read_csv_rows(path, expected_header: Sequence[str]):
    """Yield (1-based row number, row) after validating the header row."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        if [h.strip().lower() for h in header] != list(expected_header):
            raise FormatError(
                f"{path}: row 1: expected header {','.join(expected_header)!r}, "
                f"got {','.join(header)!r}"
            )
        for row_num, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            yield row_num, row


def export_matrix_csv(languages: Sequence[str], features, values: np.ndarray, path) -> None:
    """Write a language x feature matrix; NaN cells become the missing token."""
    names = [f.name if isinstance(f, FeatureDescriptor) else str(f) for f in features]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["language"] + names)
        for i, lang in enumerate(languages):
            row = [lang]
            for j in range(len(names)):
                v = values[i, j]
                row.append(MISSING_TOKEN if np.isnan(v) else format_value(v))
            writer.writerow(row)


def load_matrix_values(path, languages: Sequence[str], feature_names: Sequence[str]) -> np.ndarray:
    """Read a matrix CSV back, validating it covers exactly the given grid.

    Used for the external-imputer exchange file, which must be fully
    dense, and for reloading exported matrices (missing tokens allowed).
    """
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        if not header or header[0].strip().lower() != "language":
            raise FormatError(f"{path}: row 1: first column must be 'language'")
        cols = [h.strip() for h in header[1:]]
        if cols != list(feature_names):
            raise FormatError(f"{path}: feature columns do not match the expected registry")
        values = np.full((len(languages), len(cols)), np.nan)
        lang_index = {g: i for i, g in enumerate(languages)}
        seen = set()
        for row_num, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            lang = row[0].strip()
            if lang not in lang_index:
                raise FormatError(f"{path}: row {row_num}: unexpected language {lang!r}")
            if lang in seen:
                raise FormatError(f"{path}: row {row_num}: duplicate language {lang!r}")
            seen.add(lang)
            if len(row) != len(cols) + 1:
                raise FormatError(
                    f"{path}: row {row_num}: expected {len(cols) + 1} columns, got {len(row)}"
                )
            for j, cell in enumerate(row[1:]):
                v = parse_value(cell, path, row_num)
                if v is not None:
                    values[lang_index[lang], j] = v
        if seen != set(languages):
            missing = sorted(set(languages) - seen)
            raise FormatError(f"{path}: missing rows for languages {missing}")
    return values


def export_mask_csv(languages: Sequence[str], features, mask: np.ndarray, path) -> None:
    """Sibling 0/1 mask export for an imputed matrix (1 = value was filled)."""
    names = [f.name if isinstance(f, FeatureDescriptor) else str(f) for f in features]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["language"] + names)
        for i, lang in enumerate(languages):
            writer.writerow([lang] + ["1" if mask[i, j] else "0" for j in range(len(names))])
