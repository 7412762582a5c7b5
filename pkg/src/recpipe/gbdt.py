"""Native gradient-boosted trees for binary classification.

Second-order (Newton) boosting with logistic loss, quantile-binned
histograms, leaf-wise best-gain-first growth, and a dedicated null bin
whose routing direction is learned per split.  Nulls are never imputed:
in this schema a null carries signal.

Fully deterministic given the input order: gain ties break by lowest
feature index, then lowest bin, then missing-goes-left.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from typing import IO, Optional, Sequence

import numpy as np

from . import _gbdt_kernels as _k
from .featgen import FEATURE_SCHEMA, FeatureRow, FeatureTable, schema_fingerprint

__all__ = [
    "GbdtParams",
    "GbdtModel",
    "Binner",
    "train",
    "train_arrays",
    "predict",
    "predict_table",
    "feature_importance",
    "save",
    "load",
]

_EPS = 1e-6


@dataclass(frozen=True)
class GbdtParams:
    num_rounds: int = 100
    learning_rate: float = 0.1
    max_leaves: int = 31
    max_depth: int = 6
    min_samples_leaf: int = 20
    min_gain: float = 0.0
    max_bins: int = 255
    lambda_l2: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_rounds < 1:
            raise ValueError("num_rounds must be >= 1")
        if not (0 < self.learning_rate <= 1):
            raise ValueError("learning_rate must be in (0, 1]")
        if self.max_leaves < 2:
            raise ValueError("max_leaves must be >= 2")
        if not (2 <= self.max_bins <= 255):
            raise ValueError("max_bins must be in [2, 255]")


class Binner:
    """Quantile binning with a reserved null bin (255).

    Bin boundaries are midpoints between consecutive unique quantile
    points, so recorded split thresholds fall strictly between data values.
    """

    def __init__(self, max_bins: int):
        self.max_bins = max_bins
        self.uppers: list[np.ndarray] = []

    def fit(self, x: np.ndarray) -> "Binner":
        self.uppers = []
        for f in range(x.shape[1]):
            col = x[:, f]
            finite = col[np.isfinite(col)]
            if len(finite) == 0:
                self.uppers.append(np.empty(0))
                continue
            # at most max_bins real bins, keeping every index below the
            # reserved null bin (255)
            qs = np.quantile(finite, np.linspace(0.0, 1.0, self.max_bins))
            uniq = np.unique(qs)
            self.uppers.append((uniq[:-1] + uniq[1:]) / 2.0)
        return self

    def n_bins(self) -> np.ndarray:
        return np.array([len(u) + 1 for u in self.uppers], dtype=np.int64)

    def transform(self, x: np.ndarray) -> np.ndarray:
        """Feature-major uint8 bins; NaN -> bin 255."""
        n, f = x.shape
        out = np.empty((f, n), dtype=np.uint8)
        for j in range(f):
            col = x[:, j]
            bins = np.searchsorted(self.uppers[j], col, side="left")
            bins = np.where(np.isnan(col), _k.NULL_BIN, bins)
            out[j] = bins.astype(np.uint8)
        return out


@dataclass
class _Tree:
    feature: np.ndarray
    threshold: np.ndarray
    missing_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    is_leaf: np.ndarray

    def n_internal(self) -> int:
        return int((~self.is_leaf).sum())


@dataclass
class GbdtModel:
    base_score: float
    columns: list[str]
    fingerprint: str
    trees: list[_Tree] = field(default_factory=list)
    train_losses: list[float] = field(default_factory=list)
    _flat: Optional[tuple] = field(default=None, repr=False)

    def flat(self) -> tuple:
        if self._flat is None:
            offsets = [0]
            for t in self.trees:
                offsets.append(offsets[-1] + len(t.feature))
            cat = lambda attr, dt: (
                np.concatenate([getattr(t, attr) for t in self.trees]).astype(dt)
                if self.trees
                else np.empty(0, dtype=dt)
            )
            base = offsets[:-1]
            self._flat = (
                np.array(offsets, dtype=np.int64),
                cat("feature", np.int64),
                cat("threshold", np.float64),
                cat("missing_left", np.bool_),
                np.concatenate(
                    [t.left + off for t, off in zip(self.trees, base)]
                ).astype(np.int64)
                if self.trees
                else np.empty(0, dtype=np.int64),
                np.concatenate(
                    [t.right + off for t, off in zip(self.trees, base)]
                ).astype(np.int64)
                if self.trees
                else np.empty(0, dtype=np.int64),
                cat("value", np.float64),
                cat("is_leaf", np.bool_),
            )
        return self._flat


# ---------------------------------------------------------------------------
# Training


@dataclass
class _Node:
    node_id: int
    rows: np.ndarray
    depth: int
    g: float
    h: float
    hist: Optional[tuple] = None
    split: Optional[tuple] = None  # (gain, feature, bin, missing_left)


def _node_histograms(binned_t, rows, g, h):
    f = binned_t.shape[0]
    hg = np.zeros((f, 256))
    hh = np.zeros((f, 256))
    hc = np.zeros((f, 256), dtype=np.int64)
    _k.build_histograms(binned_t, rows, g, h, hg, hh, hc)
    return hg, hh, hc


def _grow_tree(binned_t, n_bins, g, h, params: GbdtParams, uppers) -> tuple[_Tree, np.ndarray, np.ndarray]:
    """One regression tree on gradients/hessians.  Returns the tree plus
    (row_leaf_values) to update margins without re-traversal."""
    n = len(g)
    lam = params.lambda_l2
    lr = params.learning_rate

    feature, thr_bin, missing, left, right, value, gain_arr, leaf = (
        [], [], [], [], [], [], [], []
    )

    def new_node() -> int:
        feature.append(-1)
        thr_bin.append(-1)
        missing.append(True)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        gain_arr.append(0.0)
        leaf.append(True)
        return len(feature) - 1

    leaf_values = np.zeros(n)

    def finalize_leaf(node: _Node) -> None:
        v = -node.g / (node.h + lam) * lr
        value[node.node_id] = v
        leaf_values[node.rows] = v

    def evaluate(node: _Node) -> None:
        node.hist = _node_histograms(binned_t, node.rows, g, h)
        sp = _k.find_best_split(
            *node.hist, n_bins, lam, params.min_samples_leaf,
            node.g, node.h, len(node.rows),
        )
        node.split = sp

    root = _Node(new_node(), np.arange(n, dtype=np.int64), 0, float(g.sum()), float(h.sum()))
    heap: list[tuple[float, int]] = []
    nodes = {root.node_id: root}
    if root.depth < params.max_depth and len(root.rows) >= 2 * params.min_samples_leaf:
        evaluate(root)
        if root.split[1] >= 0:
            heapq.heappush(heap, (-root.split[0], root.node_id))
    n_leaves = 1

    while heap and n_leaves < params.max_leaves:
        neg_gain, nid = heapq.heappop(heap)
        node = nodes.pop(nid)
        best_gain, f, t, ml = node.split
        if best_gain <= params.min_gain or f < 0:
            finalize_leaf(node)
            continue

        rows_l, rows_r = _k.partition_rows(binned_t[f], node.rows, t, ml)
        leaf[nid] = False
        feature[nid] = f
        thr_bin[nid] = t
        missing[nid] = bool(ml)
        gain_arr[nid] = best_gain

        # histogram subtraction: compute the smaller child, derive the other
        hist_parent = node.hist
        small_rows, big_rows = (rows_l, rows_r) if len(rows_l) <= len(rows_r) else (rows_r, rows_l)
        hist_small = _node_histograms(binned_t, small_rows, g, h)
        hist_big = tuple(p - s for p, s in zip(hist_parent, hist_small))
        hists = {id(small_rows): hist_small, id(big_rows): hist_big}

        children = []
        for rows in (rows_l, rows_r):
            cid = new_node()
            children.append(cid)
            hg, hh, hc = hists[id(rows)]
            # totals from any one feature's histogram: every feature sees all rows
            child = _Node(cid, rows, node.depth + 1, float(hg[0].sum()), float(hh[0].sum()))
            nodes[cid] = child
            if (
                child.depth < params.max_depth
                and len(rows) >= 2 * params.min_samples_leaf
            ):
                child.hist = (hg, hh, hc)
                sp = _k.find_best_split(
                    hg, hh, hc, n_bins, lam, params.min_samples_leaf,
                    child.g, child.h, len(rows),
                )
                child.split = sp
                if sp[1] >= 0 and sp[0] > params.min_gain:
                    heapq.heappush(heap, (-sp[0], cid))
        left[nid] = children[0]
        right[nid] = children[1]
        n_leaves += 1
        node.hist = None

    for node in nodes.values():
        finalize_leaf(node)

    threshold = np.array(
        [uppers[f][t] if f >= 0 else 0.0 for f, t in zip(feature, thr_bin)]
    )
    tree = _Tree(
        feature=np.array(feature, dtype=np.int64),
        threshold=threshold,
        missing_left=np.array(missing, dtype=np.bool_),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value, dtype=np.float64),
        gain=np.array(gain_arr, dtype=np.float64),
        is_leaf=np.array(leaf, dtype=np.bool_),
    )
    return tree, leaf_values


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


def _logloss(y: np.ndarray, p: np.ndarray) -> float:
    p = np.clip(p, 1e-15, 1 - 1e-15)
    return float(-(y * np.log(p) + (1 - y) * np.log(1 - p)).mean())


def train_arrays(
    x: np.ndarray,
    y: np.ndarray,
    params: GbdtParams,
    columns: Optional[Sequence[str]] = None,
) -> GbdtModel:
    """Train on a dense matrix (NaN = null) and 0/1 labels."""
    if len(x) == 0:
        raise ValueError("empty training input")
    if len(x) != len(y):
        raise ValueError("x/y length mismatch")
    y = np.asarray(y, dtype=np.float64)
    cols = list(columns) if columns is not None else [f"f{i}" for i in range(x.shape[1])]

    prior = float(np.clip(y.mean(), _EPS, 1 - _EPS))
    base_score = math.log(prior / (1 - prior))

    binner = Binner(params.max_bins).fit(x)
    binned_t = binner.transform(x)
    n_bins = binner.n_bins()

    model = GbdtModel(
        base_score=base_score,
        columns=cols,
        fingerprint=schema_fingerprint(cols),
    )
    margin = np.full(len(y), base_score)
    for _ in range(params.num_rounds):
        p = _sigmoid(margin)
        g = p - y
        h = p * (1 - p)
        tree, leaf_values = _grow_tree(binned_t, n_bins, g, h, params, binner.uppers)
        model.trees.append(tree)
        margin += leaf_values
        model.train_losses.append(_logloss(y, _sigmoid(margin)))
    return model


def train(rows: FeatureTable | Sequence[FeatureRow], params: GbdtParams) -> GbdtModel:
    """Train from feature rows with labels."""
    table = _as_table(rows)
    if table.labels is None:
        raise ValueError("training rows must carry labels")
    if len(table) < 2:
        raise ValueError("need at least 2 training rows")
    return train_arrays(table.values, table.labels, params, columns=table.schema)


def _as_table(rows: FeatureTable | Sequence[FeatureRow]) -> FeatureTable:
    if isinstance(rows, FeatureTable):
        return rows
    values = np.array(
        [[np.nan if v is None else v for v in r.values] for r in rows]
    )
    labels = (
        np.array([r.label for r in rows], dtype=np.int8)
        if rows and rows[0].label is not None
        else None
    )
    return FeatureTable(
        schema=list(FEATURE_SCHEMA),
        session_ids=np.array([r.session_id for r in rows], dtype=np.int64),
        candidates=[r.candidate for r in rows],
        values=values,
        labels=labels,
    )


# ---------------------------------------------------------------------------
# Prediction


def predict_table(model: GbdtModel, rows: FeatureTable | np.ndarray) -> np.ndarray:
    if isinstance(rows, FeatureTable):
        if schema_fingerprint(rows.schema) != model.fingerprint:
            raise ValueError("schema fingerprint mismatch between model and rows")
        x = rows.values
    else:
        x = rows
        if x.shape[1] != len(model.columns):
            raise ValueError("schema fingerprint mismatch between model and rows")
    offsets, feature, threshold, missing_left, left, right, value, is_leaf = model.flat()
    margin = _k.predict_margin(
        np.ascontiguousarray(x, dtype=np.float64),
        model.base_score, offsets, feature, threshold, missing_left, left, right,
        value, is_leaf,
    )
    return _sigmoid(margin)


def predict(model: GbdtModel, row: FeatureRow | Sequence[Optional[float]]) -> float:
    if isinstance(row, FeatureRow):
        vals = row.values
    else:
        vals = row
    x = np.array([[np.nan if v is None else v for v in vals]])
    if x.shape[1] != len(model.columns):
        raise ValueError("schema fingerprint mismatch between model and rows")
    return float(predict_table(model, x)[0])


# ---------------------------------------------------------------------------
# Importance and serialization


def feature_importance(model: GbdtModel, mode: str = "GAIN") -> list[tuple[str, float]]:
    """Per-feature total split gain or split count, descending; features
    never split on are omitted."""
    if mode not in ("GAIN", "SPLIT_COUNT"):
        raise ValueError(f"unknown importance mode {mode!r}")
    scores: dict[str, float] = {}
    for tree in model.trees:
        for i in range(len(tree.feature)):
            if tree.is_leaf[i]:
                continue
            name = model.columns[int(tree.feature[i])]
            inc = float(tree.gain[i]) if mode == "GAIN" else 1.0
            scores[name] = scores.get(name, 0.0) + inc
    return sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))


def _node_to_obj(tree: _Tree, idx: int) -> dict:
    if tree.is_leaf[idx]:
        return {"value": float(tree.value[idx])}
    return {
        "feature": int(tree.feature[idx]),
        "threshold": float(tree.threshold[idx]),
        "missing_goes_left": bool(tree.missing_left[idx]),
        "gain": float(tree.gain[idx]),
        "left": _node_to_obj(tree, int(tree.left[idx])),
        "right": _node_to_obj(tree, int(tree.right[idx])),
    }


def save(model: GbdtModel, stream: IO[str]) -> None:
    obj = {
        "base_score": model.base_score,
        "columns": model.columns,
        "schema_fingerprint": model.fingerprint,
        "trees": [_node_to_obj(t, 0) for t in model.trees],
    }
    json.dump(obj, stream, sort_keys=True, indent=1)
    stream.write("\n")


def _obj_to_arrays(obj: dict) -> _Tree:
    feature, threshold, missing, left, right, value, gain, leaf = (
        [], [], [], [], [], [], [], []
    )

    def walk(node: dict) -> int:
        idx = len(feature)
        is_leaf = "value" in node
        feature.append(node.get("feature", -1))
        threshold.append(node.get("threshold", 0.0))
        missing.append(node.get("missing_goes_left", True))
        gain.append(node.get("gain", 0.0))
        value.append(node.get("value", 0.0))
        left.append(-1)
        right.append(-1)
        leaf.append(is_leaf)
        if not is_leaf:
            left[idx] = walk(node["left"])
            right[idx] = walk(node["right"])
        return idx

    walk(obj)
    return _Tree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        missing_left=np.array(missing, dtype=np.bool_),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value, dtype=np.float64),
        gain=np.array(gain, dtype=np.float64),
        is_leaf=np.array(leaf, dtype=np.bool_),
    )


def load(stream: IO[str]) -> GbdtModel:
    try:
        obj = json.load(stream)
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed model file: {exc}") from exc
    for key in ("base_score", "columns", "schema_fingerprint", "trees"):
        if key not in obj:
            raise ValueError(f"model file missing '{key}'")
    return GbdtModel(
        base_score=float(obj["base_score"]),
        columns=list(obj["columns"]),
        fingerprint=obj["schema_fingerprint"],
        trees=[_obj_to_arrays(t) for t in obj["trees"]],
    )
