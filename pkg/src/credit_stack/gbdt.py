"""Histogram-binned gradient-boosted trees for binary classification.

Features are quantile-discretized once into at most 255 bins (one extra
bin holds missing values), then each boosting round fits one best-first
tree on second-order logistic-loss statistics, optionally on a
gradient-based one-side sample of the rows.  Split quality is the
standard second-order gain

    1/2 * [ GL^2/(HL+lam) + GR^2/(HR+lam) - (GL+GR)^2/(HL+HR+lam) ]

with the missing-value direction chosen per split by whichever side
scores higher.  Trees store raw value thresholds, so scoring needs no
binning and works on any matrix that carries the trained columns.

Everything is deterministic: one seeded generator drives sampling, bin
edges come from fixed quantiles, histogram sums accumulate in ascending
row order, and ties in split search resolve to the first candidate.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    DegenerateSamplingError,
    EmptyMatrixError,
    MissingFeatureColumnError,
    SingleClassError,
    TrainError,
)
from .features import FeatureMatrix
from .metric import composite_metric
from .serialize import dumps as _json_dumps, ensure_parent

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Learner hyper-parameters; defaults suit small tabular problems."""

    rounds: int = 100
    learning_rate: float = 0.1
    max_leaves: int = 31
    min_child_weight: float = 1.0
    l2_lambda: float = 1.0
    goss_a: float = 1.0
    goss_b: float = 0.0
    max_bins: int = 255
    seed: int = 0
    early_stop_rounds: int | None = None

    def __post_init__(self):
        if self.rounds < 0:
            raise ConfigError(f"rounds must be >= 0, got {self.rounds}")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ConfigError(f"learning_rate must be in (0, 1], got {self.learning_rate}")
        if self.max_leaves < 2:
            raise ConfigError(f"max_leaves must be >= 2, got {self.max_leaves}")
        if self.min_child_weight < 0:
            raise ConfigError("min_child_weight must be >= 0")
        if self.l2_lambda < 0:
            raise ConfigError("l2_lambda must be >= 0")
        if not (0.0 <= self.goss_a <= 1.0 and 0.0 <= self.goss_b <= 1.0):
            raise ConfigError("goss_a and goss_b must lie in [0, 1]")
        if self.goss_a + self.goss_b > 1.0 + 1e-12:
            raise ConfigError("goss_a + goss_b must not exceed 1")
        if self.goss_a < 1.0 and self.goss_b == 0.0:
            raise DegenerateSamplingError(
                "goss_a < 1 with goss_b = 0 keeps no small-gradient rows"
            )
        if not 2 <= self.max_bins <= 255:
            raise ConfigError(f"max_bins must be in 2..255, got {self.max_bins}")
        if self.early_stop_rounds is not None and self.early_stop_rounds < 1:
            raise ConfigError("early_stop_rounds must be >= 1 when set")

    @property
    def goss_enabled(self) -> bool:
        return self.goss_a < 1.0


def config_from_json(source) -> TrainConfig:
    """Load a TrainConfig from a JSON file path or a parsed dict."""
    if isinstance(source, (str, Path)):
        try:
            doc = json.loads(Path(source).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read train config {source}: {exc}") from exc
    else:
        doc = source
    if not isinstance(doc, dict):
        raise ConfigError("train config must be a JSON object")
    allowed = set(TrainConfig.__dataclass_fields__)
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
    return TrainConfig(**doc)


# ---------------------------------------------------------------------------
# binning


@dataclass
class BinMapper:
    """Per-column quantile bin edges plus a reserved missing bin.

    A value lands in the first bin whose upper edge is >= the value;
    values above every edge take the overflow bin.  Column c therefore
    has len(edges[c]) + 1 real bins, and missing cells map to the slot
    right after them.
    """

    column_names: list
    edges: list  # per column, ascending float64 interior edges

    def n_real_bins(self, col: int) -> int:
        return len(self.edges[col]) + 1

    def missing_bin(self, col: int) -> int:
        return len(self.edges[col]) + 1

    def transform(self, values: np.ndarray) -> np.ndarray:
        """Bin a (rows x columns) float array into uint8 indices."""
        if values.shape[1] != len(self.edges):
            raise DataError(
                f"matrix has {values.shape[1]} columns, mapper expects {len(self.edges)}"
            )
        binned = np.empty(values.shape, dtype=np.uint8)
        for c, edge in enumerate(self.edges):
            x = values[:, c]
            b = np.searchsorted(edge, x, side="left")
            b[np.isnan(x)] = self.missing_bin(c)
            binned[:, c] = b
        return binned


def build_bins(matrix: FeatureMatrix, max_bins: int = 255) -> BinMapper:
    """Quantile-bin every column of the training matrix.

    Edges are the deduplicated i/max_bins quantiles of the non-missing
    values; edges at or above the column maximum are dropped so the
    overflow bin is never dead weight.  A constant (or all-missing)
    column collapses to a single bin.
    """
    if matrix.n_rows == 0 or matrix.n_cols == 0:
        raise EmptyMatrixError("cannot bin an empty matrix")
    if not 2 <= max_bins <= 255:
        raise ConfigError(f"max_bins must be in 2..255, got {max_bins}")
    qs = np.arange(1, max_bins) / max_bins
    edges = []
    for c in range(matrix.n_cols):
        x = matrix.values[:, c].astype(np.float64)
        x = x[~np.isnan(x)]
        if x.size == 0 or x.min() == x.max():
            edges.append(np.empty(0, dtype=np.float64))
            continue
        e = np.unique(np.quantile(x, qs))
        edges.append(e[e < x.max()])
    return BinMapper(list(matrix.column_names), edges)


# ---------------------------------------------------------------------------
# gradients and sampling


def logistic_grad_hess(labels, scores):
    """First and second logistic-loss derivatives per row: (p - y, p(1-p))."""
    y = np.asarray(labels, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape:
        raise DataError("labels and scores differ in length")
    p = _sigmoid(s)
    return p - y, p * (1.0 - p)


def _sigmoid(s: np.ndarray) -> np.ndarray:
    out = np.empty_like(s, dtype=np.float64)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    ez = np.exp(s[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def goss_sample(grads, a: float, b: float, seed):
    """One-side sample: keep the big-gradient rows, thin the rest.

    The ceil(a*n) rows with largest |gradient| survive with multiplier
    1; ceil(b*n) rows drawn uniformly without replacement from the
    remainder survive with multiplier (1-a)/b, which keeps the sampled
    small-gradient mass unbiased in expectation.  Returns ascending row
    indices and their aligned multipliers.  ``seed`` may be an integer
    or an existing numpy Generator.
    """
    g = np.asarray(grads, dtype=np.float64)
    n = g.size
    if not (0.0 <= a <= 1.0 and 0.0 <= b <= 1.0 and a + b <= 1.0 + 1e-12):
        raise ConfigError(f"invalid sampling fractions a={a}, b={b}")
    if a >= 1.0:
        return np.arange(n, dtype=np.int64), np.ones(n, dtype=np.float64)
    if b == 0.0:
        raise DegenerateSamplingError("a < 1 with b = 0 discards all small-gradient rows")

    n_top = math.ceil(a * n)
    by_magnitude = np.argsort(-np.abs(g), kind="stable")
    top = by_magnitude[:n_top]
    rest = np.sort(by_magnitude[n_top:])
    n_rest = min(math.ceil(b * n), rest.size)

    rng = np.random.default_rng(seed)
    sampled = rng.choice(rest, size=n_rest, replace=False) if n_rest else rest[:0]

    index = np.concatenate((top, sampled))
    mult = np.concatenate(
        (np.ones(top.size), np.full(sampled.size, (1.0 - a) / b))
    )
    order = np.argsort(index, kind="stable")
    return index[order].astype(np.int64), mult[order]


# ---------------------------------------------------------------------------
# trees


@dataclass
class Node:
    """One tree node; leaves carry ``value``, internals carry the split."""

    is_leaf: bool
    value: float = 0.0
    feature: str = ""
    threshold: float = 0.0
    missing_left: bool = True
    left: int = -1
    right: int = -1
    # training-only routing fields, not serialized
    feature_idx: int = -1
    split_bin: int = -1


@dataclass
class BoostedModel:
    """An additive stack of trees over a base log-odds score."""

    base_score: float
    learning_rate: float
    trees: list  # list[list[Node]]
    split_records: list  # list[(feature name, gain)] in split order

    @property
    def n_trees(self) -> int:
        return len(self.trees)


@dataclass
class _LeafCandidate:
    node_id: int
    rows: np.ndarray
    gain: float
    feature_idx: int
    split_bin: int
    missing_left: bool


class _TreeGrower:
    """Grows one best-first tree on binned rows with weighted gradients."""

    def __init__(self, binned, mapper: BinMapper, g, h, config: TrainConfig):
        self.binned = binned
        self.mapper = mapper
        self.g = g
        self.h = h
        self.cfg = config
        self.nodes: list[Node] = []
        self.records: list = []
        self._tick = 0  # heap tie-break: creation order

    def grow(self, rows: np.ndarray) -> list[Node]:
        heap: list = []
        self._push(heap, self._new_leaf(rows))
        n_leaves = 1
        while heap and n_leaves < self.cfg.max_leaves:
            _, _, cand = heapq.heappop(heap)
            left_rows, right_rows = self._partition(cand)
            node = self.nodes[cand.node_id]
            node.is_leaf = False
            node.feature_idx = cand.feature_idx
            node.feature = self.mapper.column_names[cand.feature_idx]
            node.split_bin = cand.split_bin
            node.threshold = float(self.mapper.edges[cand.feature_idx][cand.split_bin])
            node.missing_left = cand.missing_left
            self.records.append((node.feature, cand.gain))
            node.left = self._push(heap, self._new_leaf(left_rows))
            node.right = self._push(heap, self._new_leaf(right_rows))
            n_leaves += 1
        return self.nodes

    # -- internals --------------------------------------------------------

    def _push(self, heap, pair) -> int:
        node_id, cand = pair
        if cand is not None:
            self._tick += 1
            heapq.heappush(heap, (-cand.gain, self._tick, cand))
        return node_id

    def _new_leaf(self, rows: np.ndarray):
        g_sum = float(self.g[rows].sum())
        h_sum = float(self.h[rows].sum())
        value = -g_sum / (h_sum + self.cfg.l2_lambda) * self.cfg.learning_rate
        node_id = len(self.nodes)
        self.nodes.append(Node(is_leaf=True, value=value))
        return node_id, self._best_split(node_id, rows, g_sum, h_sum)

    def _best_split(self, node_id, rows, g_total, h_total):
        cfg = self.cfg
        best_gain = 0.0
        best = None
        parent = g_total * g_total / (h_total + cfg.l2_lambda)
        for c in range(len(self.mapper.edges)):
            r = self.mapper.n_real_bins(c)
            if r < 2:
                continue
            bins = self.binned[rows, c]
            hg = np.bincount(bins, weights=self.g[rows], minlength=r + 1)
            hh = np.bincount(bins, weights=self.h[rows], minlength=r + 1)
            miss_g, miss_h = hg[r], hh[r]
            gl = np.cumsum(hg[:r])[: r - 1]
            hl = np.cumsum(hh[:r])[: r - 1]
            for missing_left in (True, False):
                if missing_left:
                    GL, HL = gl + miss_g, hl + miss_h
                else:
                    GL, HL = gl, hl
                GR, HR = g_total - GL, h_total - HL
                with np.errstate(invalid="ignore"):
                    gain = 0.5 * (
                        GL * GL / (HL + cfg.l2_lambda)
                        + GR * GR / (HR + cfg.l2_lambda)
                        - parent
                    )
                ok = (HL >= cfg.min_child_weight) & (HR >= cfg.min_child_weight)
                gain = np.where(ok, gain, -np.inf)
                b = int(np.argmax(gain))
                if gain[b] > best_gain:
                    best_gain = float(gain[b])
                    best = _LeafCandidate(node_id, rows, best_gain, c, b, missing_left)
                if miss_h == 0.0:
                    break  # no missing rows here: both directions identical
        return best

    def _partition(self, cand: _LeafCandidate):
        bins = self.binned[cand.rows, cand.feature_idx]
        miss = self.mapper.missing_bin(cand.feature_idx)
        go_left = bins <= cand.split_bin
        if cand.missing_left:
            go_left |= bins == miss
        return cand.rows[go_left], cand.rows[~go_left]


def _route_binned(nodes, binned, mapper: BinMapper) -> np.ndarray:
    """Raw leaf values for every row of an already-binned matrix."""
    out = np.zeros(binned.shape[0], dtype=np.float64)
    stack = [(0, np.arange(binned.shape[0], dtype=np.int64))]
    while stack:
        nid, rows = stack.pop()
        if rows.size == 0:
            continue
        node = nodes[nid]
        if node.is_leaf:
            out[rows] = node.value
            continue
        bins = binned[rows, node.feature_idx]
        go_left = bins <= node.split_bin
        if node.missing_left:
            go_left |= bins == mapper.missing_bin(node.feature_idx)
        stack.append((node.left, rows[go_left]))
        stack.append((node.right, rows[~go_left]))
    return out


def _route_raw(nodes, values: np.ndarray, col_of: dict) -> np.ndarray:
    """Raw leaf values straight from feature values via stored thresholds."""
    out = np.zeros(values.shape[0], dtype=np.float64)
    stack = [(0, np.arange(values.shape[0], dtype=np.int64))]
    while stack:
        nid, rows = stack.pop()
        if rows.size == 0:
            continue
        node = nodes[nid]
        if node.is_leaf:
            out[rows] = node.value
            continue
        x = values[rows, col_of[node.feature]]
        missing = np.isnan(x)
        with np.errstate(invalid="ignore"):
            go_left = x <= node.threshold
        go_left = np.where(missing, node.missing_left, go_left)
        stack.append((node.left, rows[go_left]))
        stack.append((node.right, rows[~go_left]))
    return out


# ---------------------------------------------------------------------------
# training / scoring


def train(matrix: FeatureMatrix, labels, config: TrainConfig, valid=None) -> BoostedModel:
    """Boost ``config.rounds`` trees on the matrix; optionally early-stop.

    ``valid`` is an optional (matrix, labels) holdout: when provided
    together with ``config.early_stop_rounds``, training stops once the
    holdout composite metric fails to improve for that many rounds and
    the model is truncated to its best round.
    """
    if matrix.n_rows < 2 or matrix.n_cols == 0:
        raise EmptyMatrixError(
            f"training needs >= 2 rows and >= 1 column, got {matrix.n_rows}x{matrix.n_cols}"
        )
    y = np.asarray(labels, dtype=np.float64).ravel()
    if y.size != matrix.n_rows:
        raise DataError(f"{y.size} labels for {matrix.n_rows} rows")
    pos = float(np.count_nonzero(y == 1.0))
    if pos == 0.0 or pos == y.size:
        raise SingleClassError("training labels contain a single class")

    mapper = build_bins(matrix, config.max_bins)
    binned = mapper.transform(matrix.values)
    p_bar = pos / y.size
    base = math.log(p_bar / (1.0 - p_bar))
    scores = np.full(y.size, base, dtype=np.float64)

    valid_binned = valid_labels = valid_scores = None
    if valid is not None:
        v_matrix, v_labels = valid
        valid_binned = mapper.transform(
            _aligned_values(v_matrix, mapper.column_names)
        )
        valid_labels = np.asarray(v_labels, dtype=np.float64).ravel()
        valid_scores = np.full(valid_labels.size, base, dtype=np.float64)

    rng = np.random.default_rng(config.seed)
    trees: list[list[Node]] = []
    records_per_tree: list[list] = []
    best_round = 0
    best_metric = -math.inf
    since_best = 0

    for round_no in range(config.rounds):
        g, h = logistic_grad_hess(y, scores)
        if config.goss_enabled:
            rows, mult = goss_sample(g, config.goss_a, config.goss_b, rng)
            gw, hw = g * 0.0, h * 0.0  # weighted copies, zero off-sample
            gw[rows] = g[rows] * mult
            hw[rows] = h[rows] * mult
        else:
            rows = np.arange(y.size, dtype=np.int64)
            gw, hw = g, h

        grower = _TreeGrower(binned, mapper, gw, hw, config)
        nodes = grower.grow(rows)
        trees.append(nodes)
        records_per_tree.append(grower.records)
        scores += _route_binned(nodes, binned, mapper)

        if valid_binned is not None and config.early_stop_rounds is not None:
            valid_scores += _route_binned(nodes, valid_binned, mapper)
            m = composite_metric(valid_labels, _sigmoid(valid_scores)).M
            if m > best_metric:
                best_metric, best_round, since_best = m, round_no + 1, 0
            else:
                since_best += 1
                if since_best >= config.early_stop_rounds:
                    log.info(
                        "early stop after round %d (best M %.6f at round %d)",
                        round_no + 1, best_metric, best_round,
                    )
                    break

    if valid_binned is not None and config.early_stop_rounds is not None:
        trees = trees[:best_round]
        records_per_tree = records_per_tree[:best_round]

    flat_records = [rec for tree_recs in records_per_tree for rec in tree_recs]
    return BoostedModel(base, config.learning_rate, trees, flat_records)


def _aligned_values(matrix: FeatureMatrix, wanted) -> np.ndarray:
    cols = []
    for name in wanted:
        try:
            cols.append(matrix.column_names.index(name))
        except ValueError:
            raise MissingFeatureColumnError(
                f"matrix lacks required feature column {name!r}"
            ) from None
    return matrix.values[:, cols]


def predict_raw(model: BoostedModel, matrix: FeatureMatrix) -> np.ndarray:
    """Log-odds scores: base plus every tree's routed leaf value."""
    col_of = {}
    needed = {n.feature for nodes in model.trees for n in nodes if not n.is_leaf}
    for name in needed:
        try:
            col_of[name] = matrix.column_names.index(name)
        except ValueError:
            raise MissingFeatureColumnError(
                f"matrix lacks feature column {name!r} required by the model"
            ) from None
    scores = np.full(matrix.n_rows, model.base_score, dtype=np.float64)
    values = matrix.values
    for nodes in model.trees:
        scores += _route_raw(nodes, values, col_of)
    return scores


def predict(model: BoostedModel, matrix: FeatureMatrix) -> np.ndarray:
    """Default probabilities in (0,1) for every matrix row."""
    return _sigmoid(predict_raw(model, matrix))


def importance(model: BoostedModel, kind: str = "average_gain", normalized: bool = False) -> dict:
    """Per-column split-gain importance; unused columns are absent.

    ``total_gain`` sums a column's recorded gains, ``average_gain``
    divides by its split count.  ``normalized`` rescales the mapping to
    sum to 1 (no-op on an empty model).
    """
    if kind not in ("average_gain", "total_gain"):
        raise ConfigError(f"importance kind must be average_gain or total_gain, got {kind!r}")
    grouped: dict = {}
    for feature, gain in model.split_records:
        grouped.setdefault(feature, []).append(gain)
    # fsum keeps each column total correctly rounded, so regrouping the
    # records never drifts the accounting by accumulation order.
    totals = {f: math.fsum(gains) for f, gains in grouped.items()}
    counts = {f: len(gains) for f, gains in grouped.items()}
    if kind == "average_gain":
        result = {f: totals[f] / counts[f] for f in totals}
    else:
        result = dict(totals)
    if normalized:
        grand = sum(result.values())
        if grand > 0:
            result = {f: v / grand for f, v in result.items()}
    return result


# ---------------------------------------------------------------------------
# persistence


def model_to_dict(model: BoostedModel) -> dict:
    trees = []
    for nodes in model.trees:
        out_nodes = []
        for node in nodes:
            if node.is_leaf:
                out_nodes.append({"value": node.value})
            else:
                out_nodes.append(
                    {
                        "feature": node.feature,
                        "threshold": node.threshold,
                        "missing_left": node.missing_left,
                        "left": node.left,
                        "right": node.right,
                    }
                )
        trees.append({"nodes": out_nodes})
    return {
        "base_score": model.base_score,
        "learning_rate": model.learning_rate,
        "trees": trees,
        "split_records": [[feature, gain] for feature, gain in model.split_records],
    }


def save_model(model: BoostedModel, path) -> None:
    """Write the model as stable JSON (17-significant-digit reals)."""
    ensure_parent(path).write_text(_json_dumps(model_to_dict(model)), encoding="utf-8")


def load_model(path) -> BoostedModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read model {path}: {exc}") from exc
    try:
        trees = []
        for tree in doc["trees"]:
            nodes = []
            for raw in tree["nodes"]:
                if "value" in raw:
                    nodes.append(Node(is_leaf=True, value=float(raw["value"])))
                else:
                    nodes.append(
                        Node(
                            is_leaf=False,
                            feature=raw["feature"],
                            threshold=float(raw["threshold"]),
                            missing_left=bool(raw["missing_left"]),
                            left=int(raw["left"]),
                            right=int(raw["right"]),
                        )
                    )
            trees.append(nodes)
        return BoostedModel(
            base_score=float(doc["base_score"]),
            learning_rate=float(doc["learning_rate"]),
            trees=trees,
            split_records=[(f, float(g)) for f, g in doc["split_records"]],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed model document {path}: {exc}") from exc
