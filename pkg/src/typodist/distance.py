"""Language-pair distances with per-query metric, features, and sources.

Distances are only defined over shared data: the features known for both
languages under the requested aggregation. An empty shared set or a
zero-norm masked vector yields an explicit not-computable result rather
than a fabricated value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np

from .aggregate import AggregatedMatrix, AggregationMode, aggregate
from .errors import UnknownFeature, UnknownLanguage
from .impute import ImputedMatrix, ImputerSpec, run_imputer
from .kb import Category, FeatureTensor

NO_SHARED_DATA = "no shared data"
ZERO_VECTOR = "zero vector"


class Metric(Enum):
    ANGULAR = "angular"
    COSINE = "cosine"


#: A feature scope: a whole category, an explicit name list, or None for all.
FeatureSelector = Union[Category, Sequence[str], None]

#: A source scope: one name, a subset of names, or None for all sources.
SourceSelector = Union[str, Sequence[str], None]


@dataclass(frozen=True)
class DistanceRequest:
    lang_a: str
    lang_b: str
    metric: Metric = Metric.ANGULAR
    aggregation: AggregationMode = AggregationMode.UNION
    features: FeatureSelector = None
    sources: SourceSelector = None
    use_imputed: bool = False
    imputer: Optional[ImputerSpec] = None


@dataclass(frozen=True)
class DistanceResult:
    pair: tuple[str, str]
    metric: Metric
    aggregation: AggregationMode
    distance: Optional[float] = None
    shared_features: int = 0
    reason: Optional[str] = None

    @property
    def computable(self) -> bool:
        return self.distance is not None

    @classmethod
    def of(cls, pair, metric, aggregation, distance, shared_features) -> "DistanceResult":
        return cls(tuple(pair), metric, aggregation, distance, shared_features)

    @classmethod
    def not_computable(cls, pair, metric, aggregation, reason) -> "DistanceResult":
        return cls(tuple(pair), metric, aggregation, None, 0, reason)

    def to_json(self) -> dict:
        if not self.computable:
            return {
                "pair": list(self.pair),
                "status": "not_computable",
                "reason": self.reason,
            }
        return {
            "pair": list(self.pair),
            "metric": self.metric.value,
            "aggregation": self.aggregation.value,
            "distance": self.distance,
            "shared_features": self.shared_features,
        }


def select_feature_indices(features, selector: FeatureSelector) -> np.ndarray:
    """Column indices for a selector, in matrix order regardless of list order."""
    if selector is None:
        return np.arange(len(features))
    if isinstance(selector, Category):
        return np.array(
            [j for j, f in enumerate(features) if f.category is selector], dtype=int
        )
    names = list(dict.fromkeys(selector))
    if not names:
        raise ValueError("explicit feature list must be non-empty")
    available = {f.name: j for j, f in enumerate(features)}
    for name in names:
        if name not in available:
            raise UnknownFeature(name)
    wanted = set(names)
    return np.array([j for j, f in enumerate(features) if f.name in wanted], dtype=int)


def _metric_distance(u: np.ndarray, v: np.ndarray, metric: Metric) -> Optional[float]:
    """Distance in [0, 1] for nonnegative vectors, or None on a zero norm."""
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return None
    sim = float(np.dot(u, v)) / (nu * nv)
    sim = min(1.0, max(-1.0, sim))
    if metric is Metric.COSINE:
        d = 1.0 - sim
    else:
        d = (2.0 / math.pi) * math.acos(sim)
    return min(1.0, max(0.0, d))


def language_distance(
    req: DistanceRequest, matrix: Union[AggregatedMatrix, ImputedMatrix]
) -> DistanceResult:
    """Distance between req's pair over the matrix, or why it is undefined."""
    if matrix.mode is not req.aggregation:
        raise ValueError(
            f"matrix aggregation {matrix.mode.value} does not match "
            f"request {req.aggregation.value}"
        )
    pair = (req.lang_a, req.lang_b)
    cols = select_feature_indices(matrix.features, req.features)
    ia = _row_index(matrix, req.lang_a)
    ib = _row_index(matrix, req.lang_b)

    row_a = np.asarray(matrix.values[ia, cols], dtype=float)
    row_b = np.asarray(matrix.values[ib, cols], dtype=float)
    shared = ~np.isnan(row_a) & ~np.isnan(row_b)
    n_shared = int(shared.sum())
    if n_shared == 0:
        return DistanceResult.not_computable(pair, req.metric, req.aggregation, NO_SHARED_DATA)
    u = row_a[shared]
    v = row_b[shared]
    if ia == ib:
        # same row: zero distance by identity, norm permitting
        if float(np.linalg.norm(u)) == 0.0:
            return DistanceResult.not_computable(pair, req.metric, req.aggregation, ZERO_VECTOR)
        return DistanceResult.of(pair, req.metric, req.aggregation, 0.0, n_shared)
    d = _metric_distance(u, v, req.metric)
    if d is None:
        return DistanceResult.not_computable(pair, req.metric, req.aggregation, ZERO_VECTOR)
    return DistanceResult.of(pair, req.metric, req.aggregation, d, n_shared)


def _row_index(matrix, glottocode: str) -> int:
    if isinstance(matrix, AggregatedMatrix):
        return matrix.language_index(glottocode)
    try:
        return matrix.languages.index(glottocode)
    except ValueError:
        raise UnknownLanguage(glottocode) from None


def distance_matrix(
    languages: Sequence[str],
    template: DistanceRequest,
    matrix: Union[AggregatedMatrix, ImputedMatrix],
) -> list[list[DistanceResult]]:
    """Symmetric all-pairs distances; per-pair failures land in cells."""
    langs = list(languages)
    if len(langs) < 2:
        raise ValueError("distance matrix needs at least 2 languages")
    n = len(langs)
    out: list[list[Optional[DistanceResult]]] = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(i, n):
            req = replace(template, lang_a=langs[i], lang_b=langs[j])
            res = language_distance(req, matrix)
            out[i][j] = res
            if i != j:
                out[j][i] = DistanceResult(
                    pair=(langs[j], langs[i]),
                    metric=res.metric,
                    aggregation=res.aggregation,
                    distance=res.distance,
                    shared_features=res.shared_features,
                    reason=res.reason,
                )
    return out  # type: ignore[return-value]


def genetic_distance(
    lang_a: str,
    lang_b: str,
    matrix: Union[AggregatedMatrix, ImputedMatrix],
    metric: Metric = Metric.ANGULAR,
) -> DistanceResult:
    """Distance over family-membership (genetic) features only."""
    req = DistanceRequest(
        lang_a=lang_a,
        lang_b=lang_b,
        metric=metric,
        aggregation=matrix.mode,
        features=Category.GENETIC,
    )
    return language_distance(req, matrix)


def distance_from_tensor(
    tensor: FeatureTensor,
    req: DistanceRequest,
    dialect_fill: bool = False,
) -> DistanceResult:
    """Aggregate (and optionally impute) fresh from the tensor, then measure.

    Aggregation is recomputed whenever the tensor version changed, so
    results always reflect the current store.
    """
    sources = _normalize_sources(req.sources)
    matrix = aggregate(tensor, req.aggregation, sources)
    if req.use_imputed:
        spec = req.imputer or ImputerSpec("softimpute")
        matrix = run_imputer(matrix, spec, registry=tensor, dialect_fill=dialect_fill)
    return language_distance(req, matrix)


def _normalize_sources(selector: SourceSelector) -> Optional[list[str]]:
    if selector is None:
        return None
    if isinstance(selector, str):
        return [selector]
    return list(selector)
