"""Convex blending of member predictions and blend-weight search.

The ensemble prediction is a weighted sum of member probability
vectors with non-negative weights summing to one.  Because the target
score is a pure rank statistic (piecewise constant in the weights),
the weight search is derivative-free: the simplex is scanned on a
fixed lattice — exhaustively for up to three members, by steepest
single-step ascent from the best vertex beyond that.  Ties keep the
first candidate in scan order, so two identical members resolve to
weight (1, 0).
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    InvalidWeightsError,
    LengthMismatchError,
    SingleMemberError,
)
from .metric import composite_metric
from .serialize import dumps as _json_dumps, ensure_parent, format_float

log = logging.getLogger(__name__)

_WEIGHT_SUM_TOL = 1e-12


@dataclass(frozen=True)
class EnsembleSpec:
    """Named members and their convex blend weights."""

    member_names: tuple
    weights: tuple

    def __post_init__(self):
        if len(self.member_names) != len(self.weights):
            raise InvalidWeightsError(
                f"{len(self.member_names)} members but {len(self.weights)} weights"
            )
        if len(set(self.member_names)) != len(self.member_names):
            raise InvalidWeightsError("member names must be unique")
        if any(w < 0 for w in self.weights):
            raise InvalidWeightsError(f"weights must be non-negative: {self.weights}")
        if abs(sum(self.weights) - 1.0) > _WEIGHT_SUM_TOL:
            raise InvalidWeightsError(f"weights must sum to 1: {self.weights}")


def _stacked(predictions) -> np.ndarray:
    vectors = [np.asarray(p, dtype=np.float64).ravel() for p in predictions]
    if not vectors:
        raise DataError("no member predictions given")
    n = vectors[0].size
    for i, v in enumerate(vectors):
        if v.size != n:
            raise LengthMismatchError(
                f"member {i} has {v.size} predictions, member 0 has {n}"
            )
    return np.vstack(vectors)


def blend(predictions, weights, constrained: bool = True) -> np.ndarray:
    """Weighted sum of member prediction vectors.

    With ``constrained`` (the default) the weights must form a convex
    combination, which keeps every output between the member minimum
    and maximum; pass False to allow arbitrary real weights for
    rank-only use.
    """
    stacked = _stacked(predictions)
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.size != stacked.shape[0]:
        raise InvalidWeightsError(
            f"{w.size} weights for {stacked.shape[0]} members"
        )
    if constrained:
        if (w < 0).any():
            raise InvalidWeightsError(f"weights must be non-negative: {w.tolist()}")
        if abs(float(w.sum()) - 1.0) > _WEIGHT_SUM_TOL:
            raise InvalidWeightsError(f"weights must sum to 1: {w.tolist()}")
    return w @ stacked


def _lattice(total: int, parts: int):
    """Integer compositions of ``total`` into ``parts``, first part largest
    first — the scan order that makes weight ties resolve toward the
    leading members."""
    if parts == 1:
        yield (total,)
        return
    for head in range(total, -1, -1):
        for tail in _lattice(total - head, parts - 1):
            yield (head,) + tail


def optimize_weights(predictions, labels, step: float = 0.01, member_names=None):
    """Search the weight simplex for the best composite metric M.

    Scans the full lattice at the given resolution for two or three
    members; with more members, starts at the best single-member vertex
    and repeatedly applies the best mass move of one step between any
    pair of members until no move improves M.  Returns (EnsembleSpec,
    best M); only strict improvements replace the incumbent, so the
    earliest candidate wins all ties.
    """
    stacked = _stacked(predictions)
    m = stacked.shape[0]
    if m < 2:
        raise SingleMemberError("weight search needs at least two members")
    if not 0 < step <= 1:
        raise ConfigError(f"step must be in (0, 1], got {step}")
    ticks = round(1.0 / step)
    if ticks < 1 or abs(ticks * step - 1.0) > 1e-9:
        raise ConfigError(f"1/step must be a whole number of lattice ticks, got {step}")
    y = np.asarray(labels, dtype=np.float64).ravel()

    def score(int_weights) -> float:
        w = np.asarray(int_weights, dtype=np.float64) / ticks
        return composite_metric(y, w @ stacked).M

    if m <= 3:
        best_w, best_m = None, -np.inf
        for candidate in _lattice(ticks, m):
            value = score(candidate)
            if value > best_m:
                best_w, best_m = candidate, value
    else:
        best_w, best_m = None, -np.inf
        for i in range(m):  # vertices, leading member first
            vertex = tuple(ticks if j == i else 0 for j in range(m))
            value = score(vertex)
            if value > best_m:
                best_w, best_m = vertex, value
        improved = True
        while improved:
            improved = False
            move_best_w, move_best_m = None, best_m
            for i in range(m):
                if best_w[i] == 0:
                    continue
                for j in range(m):
                    if j == i:
                        continue
                    trial = list(best_w)
                    trial[i] -= 1
                    trial[j] += 1
                    value = score(trial)
                    if value > move_best_m:
                        move_best_w, move_best_m = tuple(trial), value
            if move_best_w is not None:
                best_w, best_m, improved = move_best_w, move_best_m, True

    names = tuple(member_names) if member_names else tuple(f"member_{i}" for i in range(m))
    if len(names) != m:
        raise ConfigError(f"{len(names)} member names for {m} members")
    spec = EnsembleSpec(names, tuple(w / ticks for w in best_w))
    log.info("blend weights %s -> M %.6f", dict(zip(names, spec.weights)), best_m)
    return spec, float(best_m)


# ---------------------------------------------------------------------------
# persistence


def save_ensemble(spec: EnsembleSpec, path) -> None:
    ensure_parent(path).write_text(
        _json_dumps({"members": list(spec.member_names), "weights": list(spec.weights)}),
        encoding="utf-8",
    )


def load_ensemble(path) -> EnsembleSpec:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read ensemble spec {path}: {exc}") from exc
    try:
        return EnsembleSpec(tuple(doc["members"]), tuple(float(w) for w in doc["weights"]))
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed ensemble spec {path}: {exc}") from exc


def write_predictions(customer_ids, probabilities, path) -> None:
    """Write the (customer_id, probability) exchange CSV, full precision."""
    probs = np.asarray(probabilities, dtype=np.float64).ravel()
    if len(customer_ids) != probs.size:
        raise LengthMismatchError(
            f"{len(customer_ids)} ids for {probs.size} probabilities"
        )
    with open(ensure_parent(path), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["customer_id", "probability"])
        for cid, p in zip(customer_ids, probs):
            writer.writerow([cid, format_float(float(p))])


def read_predictions(path):
    """Read a (customer_id, probability) CSV; returns (ids, float vector)."""
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or len(header) < 2:
                raise DataError(f"{path}: expected a customer_id,probability header")
            ids, probs = [], []
            for i, rec in enumerate(reader):
                if len(rec) < 2:
                    raise DataError(f"{path}: row {i + 2} is incomplete")
                ids.append(rec[0])
                try:
                    probs.append(float(rec[1]))
                except ValueError:
                    raise DataError(
                        f"{path}: row {i + 2}: {rec[1]!r} is not a number"
                    ) from None
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not ids:
        raise DataError(f"{path}: no prediction rows")
    return ids, np.asarray(probs, dtype=np.float64)
