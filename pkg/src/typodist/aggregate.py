"""Collapse the source dimension into a 2-D language x feature matrix.

Union aggregation takes the max over known source values, average
aggregation the unweighted mean; a cell is missing only when every
contributing source is missing. Results are cached per (mode, source
subset) and invalidated whenever the tensor version changes, so queries
always reflect the current store.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .errors import EmptySourceSubset, UnknownFeature, UnknownLanguage
from .kb import FeatureDescriptor, FeatureTensor


class AggregationMode(Enum):
    UNION = "union"
    AVERAGE = "average"


@dataclass
class AggregatedMatrix:
    """Dense language x feature matrix; NaN marks missing cells."""

    mode: AggregationMode
    languages: list[str]
    features: list[FeatureDescriptor]
    values: np.ndarray
    provenance: tuple[str, ...]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.languages), len(self.features)):
            raise ValueError(
                f"value shape {self.values.shape} does not match "
                f"{len(self.languages)} languages x {len(self.features)} features"
            )
        self._lang_index = {g: i for i, g in enumerate(self.languages)}
        self._feat_index = {f.name: i for i, f in enumerate(self.features)}

    def language_index(self, glottocode: str) -> int:
        try:
            return self._lang_index[glottocode]
        except KeyError:
            raise UnknownLanguage(glottocode) from None

    def feature_index(self, name: str) -> int:
        try:
            return self._feat_index[name]
        except KeyError:
            raise UnknownFeature(name) from None

    @property
    def known_mask(self) -> np.ndarray:
        return ~np.isnan(self.values)

    def copy(self) -> "AggregatedMatrix":
        return AggregatedMatrix(
            mode=self.mode,
            languages=list(self.languages),
            features=list(self.features),
            values=self.values.copy(),
            provenance=self.provenance,
        )


_cache: "weakref.WeakKeyDictionary[FeatureTensor, dict]" = weakref.WeakKeyDictionary()


def aggregate(
    tensor: FeatureTensor,
    mode: AggregationMode,
    sources: Optional[Sequence[str]] = None,
) -> AggregatedMatrix:
    """Aggregate a tensor over all sources or a non-empty subset of them.

    The returned matrix is shared via a cache and marked read-only; copy
    before mutating.
    """
    if sources is None:
        provenance = tuple(tensor.sources)
    else:
        provenance = tuple(dict.fromkeys(sources))  # dedupe, keep order
        if not provenance:
            raise EmptySourceSubset("source subset must be non-empty")
    key = (mode, provenance, tensor.version)
    per_tensor = _cache.setdefault(tensor, {})
    hit = per_tensor.get(key)
    if hit is not None:
        return hit

    src_indices = {tensor.source_index(s) for s in provenance}
    n_lang = len(tensor.languages)
    n_feat = len(tensor.features)
    total = np.zeros((n_lang, n_feat))
    count = np.zeros((n_lang, n_feat))
    peak = np.full((n_lang, n_feat), -np.inf)
    for (li, fi, si), v in tensor.iter_indexed_cells():
        if si not in src_indices:
            continue
        total[li, fi] += v
        count[li, fi] += 1
        if v > peak[li, fi]:
            peak[li, fi] = v

    values = np.full((n_lang, n_feat), np.nan)
    known = count > 0
    if mode is AggregationMode.UNION:
        values[known] = peak[known]
    else:
        values[known] = total[known] / count[known]
    values.flags.writeable = False

    result = AggregatedMatrix(
        mode=mode,
        languages=[rec.glottocode for rec in tensor.languages],
        features=tensor.features,
        values=values,
        provenance=provenance,
    )
    # entries for older tensor versions can never be requested again
    for stale in [k for k in per_tensor if k[2] != tensor.version]:
        del per_tensor[stale]
    per_tensor[key] = result
    return result
