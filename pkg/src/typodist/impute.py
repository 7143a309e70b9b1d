"""Missing-value imputation over aggregated matrices.

Three built-in imputers (column mean, masked-distance k-NN, iterative
soft-thresholded SVD) plus dialect fill from parent languages and a slot
for externally imputed matrices. Every imputer restores originally
observed cells bit-exactly and binarizes imputed values for union-mode
matrices (threshold 0.5, ties round up).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .aggregate import AggregatedMatrix, AggregationMode
from .errors import FormatError
from .kb import FeatureTensor, LanguageRecord
from . import storage

LAMBDA_GRID_SCALES = (0.1, 0.5, 1.0, 2.0, 5.0)


@dataclass(frozen=True)
class ImputerSpec:
    """Which imputer to run and with what parameters.

    lam=None and rank_cap=None mean "pick at run time": a small grid on a
    held-out validation mask for lam, min(dims, 100) for rank_cap.
    """

    method: str  # mean | knn | softimpute | external
    k: int = 9
    lam: Optional[float] = None
    rank_cap: Optional[int] = None
    tol: float = 1e-4
    max_iter: int = 200
    seed: int = 0
    external_path: Optional[str] = None

    def __post_init__(self):
        if self.method not in {"mean", "knn", "softimpute", "external"}:
            raise ValueError(f"unknown imputation method {self.method!r}")
        if self.method == "knn" and self.k < 1:
            raise ValueError("k must be >= 1")
        if self.method == "external" and not self.external_path:
            raise ValueError("external imputer needs external_path")

    @property
    def key(self) -> str:
        """Stable label used to match cached quality-test runs."""
        if self.method == "external":
            return f"external:{self.external_path}"
        return self.method


@dataclass
class ImputedMatrix:
    """A fully known matrix plus the mask of cells that were filled."""

    mode: AggregationMode
    languages: list[str]
    features: list
    values: np.ndarray
    imputed_mask: np.ndarray
    method: ImputerSpec
    converged: bool = True
    objective_history: list[float] = field(default_factory=list)
    all_missing_columns: list[str] = field(default_factory=list)

    def language_index(self, glottocode: str) -> int:
        return self.languages.index(glottocode)


def _language_records(registry) -> Mapping[str, LanguageRecord]:
    if isinstance(registry, FeatureTensor):
        return registry.language_map
    return registry


def fill_dialects(matrix: AggregatedMatrix, registry) -> AggregatedMatrix:
    """Copy each language's missing cells from the nearest ancestor that has them.

    registry is a FeatureTensor or a glottocode -> LanguageRecord mapping;
    ancestors outside the matrix rows are skipped. Observed cells are
    never touched.
    """
    records = _language_records(registry)
    original = matrix.values
    values = original.copy()
    row_of = {g: i for i, g in enumerate(matrix.languages)}
    for i, glottocode in enumerate(matrix.languages):
        rec = records.get(glottocode)
        if rec is None or rec.parent is None:
            continue
        chain = []
        seen = {glottocode}
        while rec is not None and rec.parent is not None and rec.parent not in seen:
            seen.add(rec.parent)
            chain.append(rec.parent)
            rec = records.get(rec.parent)
        for ancestor in chain:
            a = row_of.get(ancestor)
            if a is None:
                continue
            fillable = np.isnan(values[i]) & ~np.isnan(original[a])
            if fillable.any():
                values[i, fillable] = original[a, fillable]
            if not np.isnan(values[i]).any():
                break
    return AggregatedMatrix(
        mode=matrix.mode,
        languages=list(matrix.languages),
        features=list(matrix.features),
        values=values,
        provenance=matrix.provenance,
    )


def _column_fill_values(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column means over known cells; all-missing columns get the global mean."""
    known = ~np.isnan(values)
    if not known.any():
        raise FormatError("matrix has no observed cells to impute from")
    col_known = known.sum(axis=0)
    sums = np.where(known, values, 0.0).sum(axis=0)
    fill = np.full(values.shape[1], np.nan)
    has = col_known > 0
    fill[has] = sums[has] / col_known[has]
    global_mean = values[known].mean()
    fill[~has] = global_mean
    return fill, ~has


def _finalize(
    original: AggregatedMatrix,
    filled: np.ndarray,
    spec: ImputerSpec,
    converged: bool = True,
    objective_history: Optional[list[float]] = None,
    all_missing_columns: Optional[list[str]] = None,
) -> ImputedMatrix:
    mask = np.isnan(original.values)
    values = filled.copy()
    values[~mask] = original.values[~mask]
    values[mask] = np.clip(values[mask], 0.0, 1.0)
    if original.mode is AggregationMode.UNION:
        values[mask] = np.where(values[mask] >= 0.5, 1.0, 0.0)
    if np.isnan(values).any():
        raise FormatError("imputer left missing cells behind")
    return ImputedMatrix(
        mode=original.mode,
        languages=list(original.languages),
        features=list(original.features),
        values=values,
        imputed_mask=mask,
        method=spec,
        converged=converged,
        objective_history=objective_history or [],
        all_missing_columns=all_missing_columns or [],
    )


def impute_mean(matrix: AggregatedMatrix, spec: Optional[ImputerSpec] = None) -> ImputedMatrix:
    """Column-mean baseline."""
    spec = spec or ImputerSpec("mean")
    values = matrix.values.copy()
    fill, all_missing = _column_fill_values(values)
    missing = np.isnan(values)
    values[missing] = np.broadcast_to(fill, values.shape)[missing]
    names = [matrix.features[j].name for j in np.flatnonzero(all_missing)]
    return _finalize(matrix, values, spec, all_missing_columns=names)


def _masked_l1_distances(values: np.ndarray, known: np.ndarray) -> np.ndarray:
    """Pairwise mean absolute difference over mutually known features.

    Entries with no shared feature are NaN; the diagonal is NaN so a
    language never neighbors itself.
    """
    n = values.shape[0]
    filled = np.where(known, values, 0.0)
    dist = np.full((n, n), np.nan)
    for i in range(n):
        shared = known & known[i]
        counts = shared.sum(axis=1)
        diffs = np.abs(filled - filled[i])
        diffs[~shared] = 0.0
        with np.errstate(invalid="ignore"):
            row = diffs.sum(axis=1) / counts
        row[counts == 0] = np.nan
        dist[i] = row
    np.fill_diagonal(dist, np.nan)
    return dist


def impute_knn(matrix: AggregatedMatrix, k: int = 9, spec: Optional[ImputerSpec] = None) -> ImputedMatrix:
    """k nearest neighbors under the masked mean-absolute-difference metric.

    Neighbors for cell (l, f) are languages with f known and at least one
    feature shared with l; fewer than k candidates means all of them are
    used, and no candidate at all falls back to the column mean.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    spec = spec or ImputerSpec("knn", k=k)
    values = matrix.values.copy()
    known = ~np.isnan(values)
    col_fill, all_missing = _column_fill_values(values)
    dist = _masked_l1_distances(values, known)

    out = values.copy()
    for f in range(values.shape[1]):
        holders = np.flatnonzero(known[:, f])
        targets = np.flatnonzero(~known[:, f])
        for l in targets:
            cand = holders[~np.isnan(dist[l, holders])]
            if cand.size == 0:
                out[l, f] = col_fill[f]
                continue
            order = np.argsort(dist[l, cand], kind="stable")
            chosen = cand[order[: min(k, cand.size)]]
            out[l, f] = values[chosen, f].mean()
    names = [matrix.features[j].name for j in np.flatnonzero(all_missing)]
    return _finalize(matrix, out, spec, all_missing_columns=names)


def _soft_svd(filled: np.ndarray, lam: float, rank_cap: int) -> tuple[np.ndarray, float]:
    """Rank-capped SVD with singular values soft-thresholded by lam."""
    u, s, vt = np.linalg.svd(filled, full_matrices=False)
    s = s[:rank_cap]
    s_thr = np.maximum(s - lam, 0.0)
    recon = (u[:, :rank_cap] * s_thr) @ vt[:rank_cap]
    return recon, float(s_thr.sum())


def impute_softimpute(
    matrix: AggregatedMatrix,
    lam: Optional[float] = None,
    rank_cap: Optional[int] = None,
    tol: float = 1e-4,
    max_iter: int = 200,
    seed: int = 0,
    spec: Optional[ImputerSpec] = None,
) -> ImputedMatrix:
    """Iterative soft-thresholded SVD completion.

    Starting from column-mean fill, alternate between a rank-capped SVD of
    the current matrix (observed entries always restored), shrinking the
    singular values by lam, and writing the reconstruction back into the
    missing positions only. Stops when the relative change of the filled
    matrix drops below tol; hitting max_iter flags non-convergence but
    still returns the result. The tracked objective is the squared error
    on observed entries plus lam times the nuclear norm.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if rank_cap is not None and rank_cap < 1:
        raise ValueError("rank_cap must be >= 1")
    values = matrix.values
    missing = np.isnan(values)
    spec = spec or ImputerSpec(
        "softimpute", lam=lam, rank_cap=rank_cap, tol=tol, max_iter=max_iter, seed=seed
    )
    if not missing.any():
        return _finalize(matrix, values.copy(), spec)

    if rank_cap is None:
        rank_cap = min(min(values.shape), 100)
    if lam is None:
        lam = select_softimpute_lambda(matrix, rank_cap=rank_cap, tol=tol,
                                       max_iter=max_iter, seed=seed)
    if lam < 0:
        raise ValueError("lam must be non-negative")

    col_fill, _ = _column_fill_values(values)
    fill = values.copy()
    fill[missing] = np.broadcast_to(col_fill, values.shape)[missing]

    observed = ~missing
    history: list[float] = []
    converged = False
    for _ in range(max_iter):
        recon, nuclear = _soft_svd(fill, lam, rank_cap)
        history.append(
            0.5 * float(((values[observed] - recon[observed]) ** 2).sum()) + lam * nuclear
        )
        new_fill = fill.copy()
        new_fill[missing] = recon[missing]
        denom = max(float(np.linalg.norm(fill)), 1e-12)
        delta = float(np.linalg.norm(new_fill - fill)) / denom
        fill = new_fill
        if delta < tol:
            converged = True
            break
    return _finalize(matrix, fill, spec, converged=converged, objective_history=history)


def select_softimpute_lambda(
    matrix: AggregatedMatrix,
    rank_cap: int,
    tol: float = 1e-4,
    max_iter: int = 200,
    seed: int = 0,
) -> float:
    """Pick lam from a small grid scaled by the top singular value.

    A tenth of the observed cells are held out as a validation mask; the
    grid value with the lowest validation RMSE (before any binarization)
    wins, ties going to the smaller lam.
    """
    values = matrix.values
    observed = np.argwhere(~np.isnan(values))
    if len(observed) < 2:
        raise FormatError("too few observed cells to select lambda")
    rng = np.random.default_rng(seed)
    n_val = max(1, len(observed) // 10)
    picked = observed[rng.choice(len(observed), size=n_val, replace=False)]

    masked = values.copy()
    truth = values[picked[:, 0], picked[:, 1]]
    masked[picked[:, 0], picked[:, 1]] = np.nan
    work = AggregatedMatrix(
        mode=AggregationMode.AVERAGE,  # keep predictions continuous for RMSE
        languages=list(matrix.languages),
        features=list(matrix.features),
        values=masked,
        provenance=matrix.provenance,
    )
    col_fill, _ = _column_fill_values(masked)
    probe = masked.copy()
    probe[np.isnan(masked)] = np.broadcast_to(col_fill, masked.shape)[np.isnan(masked)]
    sigma1 = float(np.linalg.svd(probe, compute_uv=False)[0])

    best_lam, best_rmse = None, np.inf
    for scale in LAMBDA_GRID_SCALES:
        lam = scale * sigma1 / 100.0
        result = impute_softimpute(
            work, lam=lam, rank_cap=rank_cap, tol=tol, max_iter=max_iter, seed=seed
        )
        pred = result.values[picked[:, 0], picked[:, 1]]
        rmse = float(np.sqrt(np.mean((pred - truth) ** 2)))
        if rmse < best_rmse:
            best_lam, best_rmse = lam, rmse
    return best_lam


def impute_external(matrix: AggregatedMatrix, path, spec: Optional[ImputerSpec] = None) -> ImputedMatrix:
    """Adopt a pre-imputed dense matrix produced by an external tool.

    The exchange file must cover the exact language/feature grid with no
    missing cells; observed entries still come from the source matrix.
    """
    spec = spec or ImputerSpec("external", external_path=str(path))
    names = [f.name for f in matrix.features]
    dense = storage.load_matrix_values(path, matrix.languages, names)
    if np.isnan(dense).any():
        raise FormatError(f"{path}: external imputation file must be fully dense")
    return _finalize(matrix, dense, spec)


def run_imputer(
    matrix: AggregatedMatrix,
    spec: ImputerSpec,
    registry=None,
    dialect_fill: bool = False,
) -> ImputedMatrix:
    """Optional dialect fill, then the requested imputer.

    The imputed mask is always relative to the matrix passed in, so
    dialect-filled cells count as imputed, not observed.
    """
    source = matrix
    if dialect_fill:
        if registry is None:
            raise ValueError("dialect_fill requires a registry of language records")
        matrix = fill_dialects(matrix, registry)

    if spec.method == "mean":
        result = impute_mean(matrix, spec=spec)
    elif spec.method == "knn":
        result = impute_knn(matrix, k=spec.k, spec=spec)
    elif spec.method == "softimpute":
        result = impute_softimpute(
            matrix,
            lam=spec.lam,
            rank_cap=spec.rank_cap,
            tol=spec.tol,
            max_iter=spec.max_iter,
            seed=spec.seed,
            spec=spec,
        )
    else:
        result = impute_external(matrix, spec.external_path, spec=spec)

    if dialect_fill:
        mask = np.isnan(source.values)
        result = ImputedMatrix(
            mode=result.mode,
            languages=result.languages,
            features=result.features,
            values=result.values,
            imputed_mask=mask,
            method=spec,
            converged=result.converged,
            objective_history=result.objective_history,
            all_missing_columns=result.all_missing_columns,
        )
    return result
