"""Stratified cross-validation, out-of-fold predictions, and stacking.

Fold assignment shuffles each class with one seeded generator and deals
the shuffled rows round-robin, the negatives continuing from the fold
position where the positives stopped — so both the fold sizes and the
per-fold class counts are balanced to within one row.

Out-of-fold (OOF) predictions become `meta_<k>` columns for a
second-stage model; because every OOF value was produced by a model
that never saw that row, training the meta model on all rows adds no
leakage.  At test time the k fold models vote by plain averaging.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    FoldTrainingError,
    LengthMismatchError,
    NoMetaColumnsError,
    TooFewPerClassError,
)
from .features import FeatureMatrix
from .gbdt import BoostedModel, TrainConfig, predict, train
from .serialize import ensure_parent

log = logging.getLogger(__name__)


@dataclass
class FoldPlan:
    """Per-row fold indices in 0..k-1 from one seeded stratified deal."""

    k: int
    assignment: np.ndarray
    seed: int | None = None

    @property
    def n_rows(self) -> int:
        return int(self.assignment.size)

    def rows_in(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def rows_not_in(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)


@dataclass
class OofVector:
    """Out-of-fold probability per row plus the fold that produced it."""

    prediction: np.ndarray
    fold: np.ndarray


@dataclass
class OofResult:
    """Everything train_oof learned: the OOF vector, the k fold models,
    and each model's training row indices (kept for leakage audits)."""

    oof: OofVector
    models: list
    train_indices: list


def make_folds(labels, k: int, seed) -> FoldPlan:
    """Deal rows into k stratified folds, deterministically per seed."""
    y = np.asarray(labels, dtype=np.int64).ravel()
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    if not np.isin(y, (0, 1)).all():
        raise DataError("fold labels must be 0 or 1")
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y == 0)
    for name, idx in (("positive", pos), ("negative", neg)):
        if idx.size < k:
            raise TooFewPerClassError(
                f"{name} class has {idx.size} rows, need at least {k} for {k} folds"
            )

    rng = np.random.default_rng(seed)
    assignment = np.empty(y.size, dtype=np.int32)
    pointer = 0
    for idx in (pos, neg):  # positives dealt first, negatives continue the cycle
        shuffled = rng.permutation(idx)
        assignment[shuffled] = (pointer + np.arange(shuffled.size)) % k
        pointer = (pointer + shuffled.size) % k
    return FoldPlan(k=k, assignment=assignment, seed=seed if isinstance(seed, int) else None)


def _check_plan(plan: FoldPlan, n_rows: int) -> None:
    if plan.n_rows != n_rows:
        raise LengthMismatchError(
            f"fold plan covers {plan.n_rows} rows, matrix has {n_rows}"
        )
    if plan.assignment.min() < 0 or plan.assignment.max() >= plan.k:
        raise DataError("fold assignment outside 0..k-1")


def _submatrix(matrix: FeatureMatrix, rows: np.ndarray) -> FeatureMatrix:
    return FeatureMatrix(
        matrix.customer_ids[rows], matrix.column_names, matrix.values[rows]
    )


def train_oof(matrix: FeatureMatrix, labels, plan: FoldPlan, config: TrainConfig) -> OofResult:
    """Train one model per fold complement and predict the held-out fold.

    Row i's OOF prediction always comes from the model whose training
    rows exclude fold(i).  Failures surface as FoldTrainingError naming
    the fold.
    """
    y = np.asarray(labels, dtype=np.int64).ravel()
    _check_plan(plan, matrix.n_rows)
    if y.size != matrix.n_rows:
        raise LengthMismatchError(f"{y.size} labels for {matrix.n_rows} rows")

    oof_pred = np.empty(matrix.n_rows, dtype=np.float64)
    models: list[BoostedModel] = []
    train_indices: list[np.ndarray] = []
    for f in range(plan.k):
        held = plan.rows_in(f)
        used = plan.rows_not_in(f)
        try:
            model = train(_submatrix(matrix, used), y[used], config)
            oof_pred[held] = predict(model, _submatrix(matrix, held))
        except Exception as exc:  # noqa: BLE001 - re-raised with fold context
            raise FoldTrainingError(f, exc) from exc
        models.append(model)
        train_indices.append(used)
        log.debug("fold %d: trained on %d rows, predicted %d", f, used.size, held.size)
    return OofResult(OofVector(oof_pred, plan.assignment.copy()), models, train_indices)


def predict_with_fold_models(models, matrix: FeatureMatrix) -> np.ndarray:
    """Mean probability over the k fold models, row by row."""
    if not models:
        raise ConfigError("no fold models to predict with")
    total = np.zeros(matrix.n_rows, dtype=np.float64)
    for model in models:
        total += predict(model, matrix)
    return total / len(models)


def append_meta(matrix: FeatureMatrix, oof_columns) -> FeatureMatrix:
    """Append OOF vectors as `meta_<k>` columns (numbered past any present)."""
    start = sum(1 for name in matrix.column_names if name.startswith("meta_"))
    names = list(matrix.column_names)
    blocks = [matrix.values]
    for j, column in enumerate(oof_columns):
        pred = column.prediction if isinstance(column, OofVector) else np.asarray(column)
        pred = np.asarray(pred, dtype=np.float64).ravel()
        if pred.size != matrix.n_rows:
            raise LengthMismatchError(
                f"meta column {j} has {pred.size} rows, matrix has {matrix.n_rows}"
            )
        names.append(f"meta_{start + j}")
        blocks.append(pred.astype(np.float32).reshape(-1, 1))
    return FeatureMatrix(matrix.customer_ids, names, np.concatenate(blocks, axis=1))


def train_meta(matrix: FeatureMatrix, labels, plan: FoldPlan, config: TrainConfig) -> BoostedModel:
    """Train the second-stage model on features plus meta columns.

    The matrix must already carry at least one `meta_` column; the fold
    plan is the one that produced those columns (checked for coverage,
    since the OOF guarantee is what keeps this training leak-free).
    """
    if not any(name.startswith("meta_") for name in matrix.column_names):
        raise NoMetaColumnsError("matrix has no meta_ columns; append OOF predictions first")
    _check_plan(plan, matrix.n_rows)
    return train(matrix, labels, config)


# ---------------------------------------------------------------------------
# fold plan persistence


def save_plan(plan: FoldPlan, path) -> None:
    with open(ensure_parent(path), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["row_index", "fold"])
        for i, f in enumerate(plan.assignment):
            writer.writerow([i, int(f)])


def load_plan(path) -> FoldPlan:
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["row_index", "fold"]:
                raise DataError(f"{path}: not a fold plan file")
            pairs = [(int(r[0]), int(r[1])) for r in reader if r]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"{path}: malformed fold plan: {exc}") from exc
    if not pairs:
        raise DataError(f"{path}: empty fold plan")
    pairs.sort()
    if [i for i, _ in pairs] != list(range(len(pairs))):
        raise DataError(f"{path}: fold plan rows are not exactly 0..{len(pairs) - 1}")
    assignment = np.array([f for _, f in pairs], dtype=np.int32)
    return FoldPlan(k=int(assignment.max()) + 1, assignment=assignment)
