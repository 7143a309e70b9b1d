from pathlib import Path

import numpy as np
import pytest

from typodist.aggregate import AggregatedMatrix, AggregationMode
from typodist.kb import (
    Category,
    FeatureDescriptor,
    FeatureTensor,
    LanguageRecord,
    ResourceTier,
    TensorBatch,
)

DATA_DIR = Path(__file__).parent / "data"

CATEGORY_BY_PREFIX = {
    "S_": Category.SYNTACTIC,
    "P_": Category.PHONOLOGICAL,
    "INV_": Category.INVENTORY,
    "M_": Category.MORPHOLOGICAL,
    "GEO_": Category.GEOGRAPHIC,
    "GEN_": Category.GENETIC,
}


def category_of(name: str) -> Category:
    for prefix, cat in sorted(CATEGORY_BY_PREFIX.items(), key=lambda kv: -len(kv[0])):
        if name.startswith(prefix):
            return cat
    raise ValueError(f"no category prefix on {name!r}")


def make_tensor(languages, features, cells, sources=None) -> FeatureTensor:
    """languages: records or glottocodes; features: descriptors or names;
    cells: (glottocode, feature, source, value)."""
    tensor = FeatureTensor()
    for lang in languages:
        if isinstance(lang, str):
            lang = LanguageRecord(glottocode=lang)
        tensor.add_language(lang)
    for feat in features:
        if isinstance(feat, str):
            feat = FeatureDescriptor(feat, category_of(feat))
        tensor.add_feature(feat)
    for src in sources or []:
        tensor.add_source(src)
    tensor.extend_with(TensorBatch(cells=list(cells),
                                   sources=sorted({c[2] for c in cells})))
    return tensor


def make_matrix(mode, languages, feature_names, values) -> AggregatedMatrix:
    feats = [FeatureDescriptor(n, category_of(n)) for n in feature_names]
    return AggregatedMatrix(
        mode=mode,
        languages=list(languages),
        features=feats,
        values=np.asarray(values, dtype=float),
        provenance=("test",),
    )


def random_matrix(rng, n_lang, n_feat, mode, missing_frac=0.4, binary=None):
    if binary is None:
        binary = mode is AggregationMode.UNION
    if binary:
        values = rng.integers(0, 2, (n_lang, n_feat)).astype(float)
    else:
        values = rng.random((n_lang, n_feat))
    holes = rng.random((n_lang, n_feat)) < missing_frac
    values[holes] = np.nan
    langs = [f"l{i:03d}1234" for i in range(n_lang)]
    names = [f"S_F{j:03d}" for j in range(n_feat)]
    return make_matrix(mode, langs, names, values)


@pytest.fixture
def tiny_tensor() -> FeatureTensor:
    """3 languages (one a dialect), 2 sources, features in 3 categories."""
    tensor = FeatureTensor()
    tensor.add_language(LanguageRecord("pare1234", name="Parent", tier=ResourceTier.HRL))
    tensor.add_language(
        LanguageRecord("dial1234", name="Dialect", parent="pare1234", tier=ResourceTier.LRL)
    )
    tensor.add_language(LanguageRecord("othe1234", iso639_3="oth", name="Other"))
    for name in ("S_F1", "S_F2", "P_F1", "GEN_FAM1"):
        tensor.add_feature(FeatureDescriptor(name, category_of(name)))
    tensor.add_source("SRC_A")
    tensor.add_source("SRC_B")
    tensor.extend_with(
        TensorBatch(
            cells=[
                ("pare1234", "S_F1", "SRC_A", 1.0),
                ("pare1234", "S_F1", "SRC_B", 1.0),
                ("pare1234", "S_F2", "SRC_A", 0.0),
                ("pare1234", "P_F1", "SRC_A", 1.0),
                ("pare1234", "GEN_FAM1", "SRC_A", 1.0),
                ("dial1234", "S_F1", "SRC_B", 1.0),
                ("dial1234", "GEN_FAM1", "SRC_A", 1.0),
                ("othe1234", "S_F1", "SRC_A", 0.0),
                ("othe1234", "S_F2", "SRC_A", 1.0),
                ("othe1234", "S_F2", "SRC_B", 0.0),
            ]
        )
    )
    return tensor


@pytest.fixture
def table5():
    """(labels, dist_a, dist_b, reference) for the 20 case-study pairs."""
    from typodist.evalkit import load_case_study

    return load_case_study(DATA_DIR / "table5.csv")
