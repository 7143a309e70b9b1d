"""Evaluation kit: held-out imputation quality, k selection, rank
correlation, permutation significance, and coverage reporting.

The quality test masks a fifth of the observed cells, re-imputes them,
and scores the predictions: classification metrics for union matrices,
RMSE/MAE for average ones. All randomness flows from explicit seeds so
reports are bit-reproducible.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .aggregate import AggregatedMatrix, AggregationMode
from .errors import DegenerateInput, FormatError, TooFewObserved
from .impute import ImputerSpec, run_imputer
from .kb import TYPOLOGICAL_CATEGORIES, FeatureTensor, ResourceTier


# --- held-out quality test ---------------------------------------------------

MASK_FRACTION = 0.2


@dataclass
class QualityReport:
    mode: AggregationMode
    method_key: str
    masked_count: int
    seed: int
    metrics: dict[str, float]
    per_category: dict[str, dict[str, float]]
    undefined_guards: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "mode": self.mode.value,
            "method": self.method_key,
            "masked_count": self.masked_count,
            "seed": self.seed,
            "metrics": dict(self.metrics),
            "per_category": {k: dict(v) for k, v in self.per_category.items()},
            "undefined_guards": list(self.undefined_guards),
        }


def _union_metrics(truth: np.ndarray, pred: np.ndarray) -> tuple[dict[str, float], list[str]]:
    """Accuracy/precision/recall/F1 with value 1 as the positive class.

    Predictions at exactly 0.5 count as positive, matching the union
    rounding rule. Undefined ratios are reported as 0 and flagged.
    """
    pred_bin = np.where(pred >= 0.5, 1.0, 0.0)
    pos_truth = truth == 1.0
    pos_pred = pred_bin == 1.0
    tp = int(np.sum(pos_truth & pos_pred))
    fp = int(np.sum(~pos_truth & pos_pred))
    fn = int(np.sum(pos_truth & ~pos_pred))
    guards = []
    accuracy = float(np.mean(pred_bin == truth)) if truth.size else 0.0
    if tp + fp == 0:
        precision, flag_p = 0.0, True
    else:
        precision, flag_p = tp / (tp + fp), False
    if tp + fn == 0:
        recall, flag_r = 0.0, True
    else:
        recall, flag_r = tp / (tp + fn), False
    if flag_p:
        guards.append("precision")
    if flag_r:
        guards.append("recall")
    if precision + recall == 0.0:
        f1 = 0.0
        guards.append("f1")
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return (
        {"accuracy": accuracy, "precision": precision, "recall": recall, "f1": f1},
        guards,
    )


def _average_metrics(truth: np.ndarray, pred: np.ndarray) -> dict[str, float]:
    err = pred - truth
    return {
        "rmse": float(np.sqrt(np.mean(err**2))),
        "mae": float(np.mean(np.abs(err))),
    }


def _score(mode: AggregationMode, truth, pred) -> tuple[dict[str, float], list[str]]:
    if mode is AggregationMode.UNION:
        return _union_metrics(truth, pred)
    return _average_metrics(truth, pred), []


def draw_mask(matrix: AggregatedMatrix, seed: int) -> np.ndarray:
    """Uniformly sampled 20% of the observed cells, as an (n, 2) index array."""
    observed = np.argwhere(~np.isnan(matrix.values))
    n_observed = len(observed)
    if n_observed < 5:
        raise TooFewObserved(f"need at least 5 observed cells, have {n_observed}")
    masked_count = int(math.floor(MASK_FRACTION * n_observed))
    rng = np.random.default_rng(seed)
    picked = rng.choice(n_observed, size=masked_count, replace=False)
    return observed[np.sort(picked)]


def _mask_cells(matrix: AggregatedMatrix, cells: np.ndarray) -> AggregatedMatrix:
    values = matrix.values.copy()
    values[cells[:, 0], cells[:, 1]] = np.nan
    return AggregatedMatrix(
        mode=matrix.mode,
        languages=list(matrix.languages),
        features=list(matrix.features),
        values=values,
        provenance=matrix.provenance,
    )


def quality_test(
    matrix: AggregatedMatrix,
    spec: ImputerSpec,
    seed: int = 0,
    registry=None,
    dialect_fill: bool = True,
) -> QualityReport:
    """Mask, impute, and score; dialect fill runs on the masked copy only.

    Masking happens before dialect fill so the imputer never sees the
    held-out truth, though a masked dialect cell may legitimately be
    recovered from its parent language.
    """
    cells = draw_mask(matrix, seed)
    test_matrix = _mask_cells(matrix, cells)
    result = run_imputer(
        test_matrix, spec, registry=registry, dialect_fill=dialect_fill and registry is not None
    )
    truth = matrix.values[cells[:, 0], cells[:, 1]]
    pred = result.values[cells[:, 0], cells[:, 1]]
    metrics, guards = _score(matrix.mode, truth, pred)

    per_category: dict[str, dict[str, float]] = {}
    cats = np.array([f.category.value for f in matrix.features])
    for cat in dict.fromkeys(cats[cells[:, 1]]):
        in_cat = cats[cells[:, 1]] == cat
        cat_metrics, cat_guards = _score(matrix.mode, truth[in_cat], pred[in_cat])
        cat_metrics["masked_count"] = int(in_cat.sum())
        per_category[cat] = cat_metrics
        guards.extend(f"{cat}:{g}" for g in cat_guards)

    return QualityReport(
        mode=matrix.mode,
        method_key=spec.key,
        masked_count=len(cells),
        seed=seed,
        metrics=metrics,
        per_category=per_category,
        undefined_guards=guards,
    )


def knn_select_k(
    matrix: AggregatedMatrix,
    candidate_ks: Sequence[int] = (3, 6, 9, 12, 15),
    folds: int = 5,
    seed: int = 0,
    registry=None,
    dialect_fill: bool = True,
) -> int:
    """Cross-validated k: the masked-cell pool is split into folds, each
    fold held out in turn, and the mode's objective (F1 up / RMSE down)
    averaged across folds. Ties go to the smaller k.
    """
    pool = draw_mask(matrix, seed)
    if len(pool) < folds:
        raise TooFewObserved(
            f"masked pool of {len(pool)} cells cannot fill {folds} folds"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pool))
    fold_indices = np.array_split(order, folds)

    maximize = matrix.mode is AggregationMode.UNION
    objective_key = "f1" if maximize else "rmse"
    best_k, best_score = None, None
    for k in sorted(candidate_ks):
        scores = []
        for fold in fold_indices:
            cells = pool[fold]
            test_matrix = _mask_cells(matrix, cells)
            result = run_imputer(
                test_matrix,
                ImputerSpec("knn", k=k),
                registry=registry,
                dialect_fill=dialect_fill and registry is not None,
            )
            truth = matrix.values[cells[:, 0], cells[:, 1]]
            pred = result.values[cells[:, 0], cells[:, 1]]
            metrics, _ = _score(matrix.mode, truth, pred)
            scores.append(metrics[objective_key])
        mean_score = float(np.mean(scores))
        better = (
            best_score is None
            or (maximize and mean_score > best_score)
            or (not maximize and mean_score < best_score)
        )
        if better:
            best_k, best_score = k, mean_score
    return best_k


# --- rank correlation ---------------------------------------------------------

@dataclass(frozen=True)
class CorrelationResult:
    tau: float
    n_pairs: int


def kendall_tau(x: Sequence[float], y: Sequence[float]) -> CorrelationResult:
    """Tie-corrected (tau-b) Kendall rank correlation.

    Constant input makes the correlation undefined and raises rather than
    silently returning 0.
    """
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if xa.shape != ya.shape or xa.ndim != 1:
        raise ValueError("inputs must be equal-length 1-D sequences")
    n = xa.size
    if n < 2:
        raise ValueError("need at least 2 observations")
    tau = _tau_b(xa, ya)
    if tau is None:
        raise DegenerateInput("rank correlation undefined for constant input")
    return CorrelationResult(tau=tau, n_pairs=n)


def _tau_b(x: np.ndarray, y: np.ndarray) -> Optional[float]:
    """tau-b via pair counting: (C - D) / sqrt((n0 - Tx) (n0 - Ty))."""
    n = x.size
    dx = np.sign(x[:, None] - x[None, :])
    dy = np.sign(y[:, None] - y[None, :])
    iu = np.triu_indices(n, k=1)
    prod = dx[iu] * dy[iu]
    concordant = int(np.sum(prod > 0))
    discordant = int(np.sum(prod < 0))
    n0 = n * (n - 1) // 2
    ties_x = int(np.sum(dx[iu] == 0))
    ties_y = int(np.sum(dy[iu] == 0))
    denom = math.sqrt((n0 - ties_x) * (n0 - ties_y))
    if denom == 0.0:
        return None
    return (concordant - discordant) / denom


# --- permutation significance --------------------------------------------------

@dataclass(frozen=True)
class PermTestResult:
    observed_delta: float
    p_value: float
    iterations: int
    seed: int


def perm_both_test(
    scores_a: Sequence[float],
    scores_b: Sequence[float],
    reference: Sequence[float],
    iterations: int = 10000,
    seed: int = 0,
) -> PermTestResult:
    """Paired-swap permutation test on the gap between two rank correlations.

    The observed statistic is |tau(a, ref) - tau(b, ref)|. Each iteration
    swaps a_i and b_i independently with probability 1/2 and recomputes
    the statistic; the p-value uses the add-one estimator
    (1 + #{delta* >= observed}) / (1 + iterations). Iterations whose
    permuted vectors make the correlation undefined are skipped from both
    counts (only possible on tiny degenerate inputs).
    """
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    ref = np.asarray(reference, dtype=float)
    if not (a.shape == b.shape == ref.shape) or a.ndim != 1 or a.size < 2:
        raise ValueError("need three equal-length 1-D sequences of length >= 2")
    if iterations < 100:
        raise ValueError("need at least 100 iterations")
    observed = _delta(a, b, ref)
    if observed is None:
        raise DegenerateInput("rank correlation undefined for constant input")

    rng = np.random.default_rng(seed)
    at_least, valid = 0, 0
    for _ in range(iterations):
        swap = rng.random(a.size) < 0.5
        delta = _delta(np.where(swap, b, a), np.where(swap, a, b), ref)
        if delta is None:
            continue
        valid += 1
        if delta >= observed:
            at_least += 1
    p = (1 + at_least) / (1 + valid) if valid else 1.0
    return PermTestResult(
        observed_delta=observed, p_value=p, iterations=iterations, seed=seed
    )


def _delta(a: np.ndarray, b: np.ndarray, ref: np.ndarray) -> Optional[float]:
    ta = _tau_b(a, ref)
    tb = _tau_b(b, ref)
    if ta is None or tb is None:
        return None
    return abs(ta - tb)


def perm_both_exhaustive(
    scores_a: Sequence[float], scores_b: Sequence[float], reference: Sequence[float]
) -> float:
    """Exact swap-pattern enumeration; only viable for short inputs."""
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    ref = np.asarray(reference, dtype=float)
    n = a.size
    if n > 16:
        raise ValueError("exhaustive enumeration limited to 16 pairs")
    observed = _delta(a, b, ref)
    if observed is None:
        raise DegenerateInput("rank correlation undefined for constant input")
    at_least, valid = 0, 0
    for pattern in range(2**n):
        swap = np.array([(pattern >> i) & 1 for i in range(n)], dtype=bool)
        delta = _delta(np.where(swap, b, a), np.where(swap, a, b), ref)
        if delta is None:
            continue
        valid += 1
        if delta >= observed:
            at_least += 1
    return at_least / valid


# --- case study ---------------------------------------------------------------

@dataclass
class CaseStudyResult:
    tau_a: float
    tau_b: float
    n_pairs: int
    perm: PermTestResult
    pair_labels: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "n_pairs": self.n_pairs,
            "tau_a": self.tau_a,
            "tau_b": self.tau_b,
            "perm_both": {
                "observed_delta": self.perm.observed_delta,
                "p_value": self.perm.p_value,
                "iterations": self.perm.iterations,
                "seed": self.perm.seed,
            },
        }


def load_case_study(path) -> tuple[list[str], list[float], list[float], list[float]]:
    """Case-study CSV: pair,dist_a,dist_b,g_d."""
    labels, a, b, ref = [], [], [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != [
            "pair", "dist_a", "dist_b", "g_d",
        ]:
            raise FormatError(f"{path}: expected header 'pair,dist_a,dist_b,g_d'")
        for row_num, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise FormatError(f"{path}: row {row_num}: expected 4 columns")
            labels.append(row[0].strip())
            try:
                a.append(float(row[1]))
                b.append(float(row[2]))
                ref.append(float(row[3]))
            except ValueError:
                raise FormatError(f"{path}: row {row_num}: bad number") from None
    return labels, a, b, ref


def case_study(
    scores_a: Sequence[float],
    scores_b: Sequence[float],
    reference: Sequence[float],
    iterations: int = 10000,
    seed: int = 0,
    pair_labels: Optional[list[str]] = None,
) -> CaseStudyResult:
    """Both correlations against the reference plus their Perm-Both p-value."""
    ra = kendall_tau(scores_a, reference)
    rb = kendall_tau(scores_b, reference)
    perm = perm_both_test(scores_a, scores_b, reference, iterations=iterations, seed=seed)
    return CaseStudyResult(
        tau_a=ra.tau,
        tau_b=rb.tau,
        n_pairs=ra.n_pairs,
        perm=perm,
        pair_labels=pair_labels or [],
    )


# --- coverage -------------------------------------------------------------------

@dataclass
class CoverageReport:
    categories: dict[str, dict]
    typological_total: dict
    language_count: int

    def to_json(self) -> dict:
        return {
            "language_count": self.language_count,
            "categories": self.categories,
            "typological_total": self.typological_total,
        }


def coverage_report(tensor: FeatureTensor, tiers=None) -> CoverageReport:
    """Languages with any known data, per feature category and resource tier.

    tiers optionally overrides the registry's tier per glottocode. Also
    reports languages eligible for typological distance: those with at
    least one known typological cell.
    """
    tiers = tiers or {}
    records = tensor.languages
    features = tensor.features
    lang_cats: dict[int, set] = {}
    for (li, fi, _si), _v in tensor.iter_indexed_cells():
        lang_cats.setdefault(li, set()).add(features[fi].category)

    def tier_of(idx: int) -> str:
        rec = records[idx]
        tier = tiers.get(rec.glottocode, rec.tier)
        return tier.value if isinstance(tier, ResourceTier) else str(tier)

    all_tiers = [t.value for t in ResourceTier]
    categories: dict[str, dict] = {}
    seen_categories = {f.category for f in features}
    for cat in sorted(seen_categories, key=lambda c: c.value):
        by_tier = {t: 0 for t in all_tiers}
        total = 0
        for li, cats in lang_cats.items():
            if cat in cats:
                total += 1
                by_tier[tier_of(li)] += 1
        categories[cat.value] = {"total": total, "by_tier": by_tier}

    typo_by_tier = {t: 0 for t in all_tiers}
    typo_total = 0
    for li, cats in lang_cats.items():
        if cats & TYPOLOGICAL_CATEGORIES:
            typo_total += 1
            typo_by_tier[tier_of(li)] += 1

    return CoverageReport(
        categories=categories,
        typological_total={"total": typo_total, "by_tier": typo_by_tier},
        language_count=len(records),
    )
