"""Multiclass gradient-boosted trees with leaf-wise growth.

Each boosting round fits one regression tree per class to the gradient and
hessian of the softmax cross-entropy.  Splits are found exactly over sorted
feature values (optionally over quantile bins), and the leaf with the
largest gain is split next until ``max_leaves`` is reached or no split has
positive gain.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import stratified_folds
from .errors import (
    BudgetTooSmall,
    ChecksumMismatch,
    DegenerateLabels,
    IoError,
    NonFiniteInput,
    SchemaMismatch,
)
from .features import GROUPS, FeatureColumnMeta, FeatureMatrix, smote_arrays
from .metrics import build_report, roc_auc_ovr

logger = logging.getLogger(__name__)

BUNDLE_FORMAT = "repodomain-bundle"
BUNDLE_VERSION = 1
_MIN_CHILD_HESSIAN = 1e-3
_MIN_GAIN = 1e-12


@dataclass
class TrainConfig:
    num_rounds: int = 100
    learning_rate: float = 0.1
    max_leaves: int = 31
    min_samples_leaf: int = 5
    l2_leaf_penalty: float = 1.0
    feature_subsample: float = 1.0
    seed: int = 0
    max_bins: int | None = None  # None = exact split search

    def __post_init__(self):
        if self.num_rounds < 0:
            raise ValueError("num_rounds must be nonnegative")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.max_leaves < 2:
            raise ValueError("max_leaves must be at least 2")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be positive")
        if self.l2_leaf_penalty < 0:
            raise ValueError("l2_leaf_penalty must be nonnegative")
        if not 0.0 < self.feature_subsample <= 1.0:
            raise ValueError("feature_subsample must lie in (0, 1]")
        if self.max_bins is not None and self.max_bins < 2:
            raise ValueError("max_bins must be at least 2")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Tree:
    """Flat array tree; ``feature[i] < 0`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            n = node[active]
            go_left = X[active, self.feature[n]] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])
            active = active[self.feature[node[active]] >= 0]
        return self.value[node]

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=np.float64),
        )


@dataclass
class GbdtModel:
    classes: list[str]
    trees: list[list[Tree]]  # [round][class]
    columns: list[FeatureColumnMeta]
    base_scores: np.ndarray
    config: TrainConfig = field(default_factory=TrainConfig)
    train_loss: list[float] = field(default_factory=list)

    def raw_scores(self, rows) -> np.ndarray:
        X = np.asarray(rows, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.columns):
            raise ValueError(f"expected rows of width {len(self.columns)}, got shape {X.shape}")
        F = np.tile(self.base_scores, (len(X), 1))
        for round_trees in self.trees:
            for k, tree in enumerate(round_trees):
                F[:, k] += tree.predict(X)
        return F

    def predict_proba(self, rows) -> np.ndarray:
        return softmax(self.raw_scores(rows))

    def predict(self, rows) -> list[str]:
        idx = np.argmax(self.predict_proba(rows), axis=1)  # first index wins ties
        return [self.classes[i] for i in idx]

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "columns": [c.to_dict() for c in self.columns],
            "base_scores": self.base_scores.tolist(),
            "config": self.config.to_dict(),
            "train_loss": list(self.train_loss),
            "trees": [[t.to_dict() for t in rnd] for rnd in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbdtModel":
        return cls(
            classes=list(d["classes"]),
            trees=[[Tree.from_dict(t) for t in rnd] for rnd in d["trees"]],
            columns=[FeatureColumnMeta.from_dict(c) for c in d["columns"]],
            base_scores=np.asarray(d["base_scores"], dtype=np.float64),
            config=TrainConfig(**d["config"]),
            train_loss=list(d["train_loss"]),
        )


def softmax(F: np.ndarray) -> np.ndarray:
    Z = F - F.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def cross_entropy(P: np.ndarray, y: np.ndarray) -> float:
    return float(-np.mean(np.log(np.clip(P[np.arange(len(y)), y], 1e-300, None))))


# ---------------------------------------------------------------- training


class _Deadline(Exception):
    pass


@dataclass
class _Leaf:
    node: int
    sorted_rows: np.ndarray  # (n_cols, n) row ids, each row of the array sorted by that column
    grad: float
    hess: float
    gain: float = -math.inf
    split_col: int = -1  # position within the tree's column subset
    threshold: float = 0.0


class _TreeBuilder:
    def __init__(self, X_split: np.ndarray, cuts: list, X: np.ndarray, cfg: TrainConfig):
        self.Xs = X_split  # values used for split search (bin codes when binned)
        self.cuts = cuts
        self.X = X
        self.cfg = cfg

    def _best_split(self, leaf: _Leaf, cols: np.ndarray, g: np.ndarray, h: np.ndarray) -> None:
        S = leaf.sorted_rows
        n = S.shape[1]
        msl = self.cfg.min_samples_leaf
        if n < 2 * msl:
            return
        vals = self.Xs[S, cols[:, None]]
        GL = np.cumsum(g[S], axis=1)[:, :-1]
        HL = np.cumsum(h[S], axis=1)[:, :-1]
        G, H, lam = leaf.grad, leaf.hess, self.cfg.l2_leaf_penalty
        GR, HR = G - GL, H - HL
        pos = np.arange(1, n)  # size of the left child
        valid = (vals[:, :-1] < vals[:, 1:]) & (pos >= msl) & (n - pos >= msl)
        valid &= (HL >= _MIN_CHILD_HESSIAN) & (HR >= _MIN_CHILD_HESSIAN)
        if not valid.any():
            return
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = GL**2 / (HL + lam) + GR**2 / (HR + lam) - G**2 / (H + lam)
        gain = np.where(valid, gain, -np.inf)
        flat = int(np.argmax(gain))  # row-major: lowest column, then lowest threshold
        c, i = divmod(flat, n - 1)
        best = gain[c, i]
        if not best > _MIN_GAIN:
            return
        col = int(cols[c])
        lo, hi = vals[c, i], vals[c, i + 1]
        if self.cuts[col] is not None:
            thr = float(self.cuts[col][int(lo)])
        else:
            thr = (lo + hi) / 2.0
            if not lo <= thr < hi:
                thr = float(lo)
        leaf.gain, leaf.split_col, leaf.threshold = float(best), c, float(thr)

    def build(self, cols: np.ndarray, root_sorted: np.ndarray, g: np.ndarray, h: np.ndarray) -> Tree:
        cfg = self.cfg
        lam = cfg.l2_leaf_penalty
        feature, threshold, left, right, value = [-1], [0.0], [-1], [-1], [0.0]
        root = _Leaf(0, root_sorted, float(g.sum()), float(h.sum()))
        self._best_split(root, cols, g, h)
        leaves = [root]
        in_left = np.zeros(len(g), dtype=bool)
        while len(leaves) < cfg.max_leaves:
            best = max(leaves, key=lambda lf: (lf.gain, -lf.node))
            if not best.gain > _MIN_GAIN:
                break
            col = int(cols[best.split_col])
            S = best.sorted_rows
            members = S[0]
            go_left = self.X[members, col] <= best.threshold
            in_left[members] = go_left
            mask = in_left[S]
            n_left = int(go_left.sum())
            left_sorted = S[mask].reshape(len(cols), n_left)
            right_sorted = S[~mask].reshape(len(cols), S.shape[1] - n_left)
            in_left[members] = False
            gl = float(g[left_sorted[0]].sum())
            hl = float(h[left_sorted[0]].sum())
            lid, rid = len(feature), len(feature) + 1
            feature[best.node], threshold[best.node] = col, best.threshold
            left[best.node], right[best.node] = lid, rid
            for _ in range(2):
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                value.append(0.0)
            lchild = _Leaf(lid, left_sorted, gl, hl)
            rchild = _Leaf(rid, right_sorted, best.grad - gl, best.hess - hl)
            leaves.remove(best)
            for child in (lchild, rchild):
                self._best_split(child, cols, g, h)
                leaves.append(child)
        for lf in leaves:
            denom = lf.hess + lam
            value[lf.node] = -cfg.learning_rate * lf.grad / denom if denom > 0 else 0.0
        return Tree(
            np.asarray(feature, dtype=np.int64),
            np.asarray(threshold, dtype=np.float64),
            np.asarray(left, dtype=np.int64),
            np.asarray(right, dtype=np.int64),
            np.asarray(value, dtype=np.float64),
        )


def _quantile_cuts(X: np.ndarray, max_bins: int | None) -> tuple[np.ndarray, list]:
    """Replace high-cardinality columns by bin codes; returns (split values, cut lists)."""
    cuts: list = [None] * X.shape[1]
    if max_bins is None:
        return X, cuts
    Xs = X.copy()
    for j in range(X.shape[1]):
        uniq = np.unique(X[:, j])
        if len(uniq) <= max_bins:
            continue
        picks = np.unique(np.quantile(uniq, np.linspace(0, 1, max_bins + 1)[1:-1], method="lower"))
        cuts[j] = picks
        Xs[:, j] = np.searchsorted(picks, X[:, j], side="left")
    return Xs, cuts


def _encode_labels(labels: Sequence) -> tuple[list[str], np.ndarray]:
    classes = sorted(set(labels))
    index = {c: i for i, c in enumerate(classes)}
    return classes, np.array([index[l] for l in labels], dtype=np.int64)


def train(
    matrix: FeatureMatrix, config: TrainConfig | None = None, *, deadline: float | None = None
) -> GbdtModel:
    cfg = config or TrainConfig()
    if matrix.labels is None:
        raise ValueError("train needs a labelled matrix")
    X = np.asarray(matrix.rows, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise NonFiniteInput("training rows contain NaN or infinite values")
    classes, y = _encode_labels(matrix.labels)
    K = len(classes)
    if K < 2:
        raise DegenerateLabels("training needs at least two classes")
    n, D = X.shape
    Y = np.zeros((n, K))
    Y[np.arange(n), y] = 1.0
    prior = np.bincount(y, minlength=K) / n
    base = np.log(prior) - np.log(prior).mean()
    F = np.tile(base, (n, 1))
    rng = np.random.default_rng(cfg.seed)
    Xs, cuts = _quantile_cuts(X, cfg.max_bins)
    presorted = np.argsort(Xs, axis=0, kind="stable").T.copy()  # (D, n)
    builder = _TreeBuilder(Xs, cuts, X, cfg)
    n_cols = max(1, int(round(cfg.feature_subsample * D)))
    trees: list[list[Tree]] = []
    losses = [cross_entropy(softmax(F), y)]
    for _ in range(cfg.num_rounds):
        if deadline is not None and time.monotonic() > deadline:
            raise _Deadline()
        P = softmax(F)
        round_trees = []
        for k in range(K):
            g = P[:, k] - Y[:, k]
            h = np.maximum(P[:, k] * (1.0 - P[:, k]), 1e-16)
            if n_cols < D:
                cols = np.sort(rng.choice(D, size=n_cols, replace=False))
            else:
                cols = np.arange(D)
            round_trees.append(builder.build(cols, presorted[cols], g, h))
        for k, tree in enumerate(round_trees):
            F[:, k] += tree.predict(X)
        trees.append(round_trees)
        losses.append(cross_entropy(softmax(F), y))
    return GbdtModel(classes, trees, list(matrix.columns), base, cfg, losses)


# ---------------------------------------------------------------- importance


def feature_importance(model: GbdtModel) -> dict[str, int]:
    """Split counts per column name (columns never used map to 0)."""
    counts = np.zeros(len(model.columns), dtype=np.int64)
    for rnd in model.trees:
        for tree in rnd:
            used = tree.feature[tree.feature >= 0]
            np.add.at(counts, used, 1)
    return {c.name: int(v) for c, v in zip(model.columns, counts)}


def group_importance(model: GbdtModel) -> dict[str, float]:
    """Percent of all splits per feature group; all zeros for a model with no splits."""
    splits = feature_importance(model)
    totals = dict.fromkeys(GROUPS, 0)
    for c in model.columns:
        totals[c.group] += splits[c.name]
    total = sum(totals.values())
    if total == 0:
        return dict.fromkeys(GROUPS, 0.0)
    return {g: 100.0 * v / total for g, v in totals.items()}


def source_importance(model: GbdtModel) -> dict[str, float]:
    splits = feature_importance(model)
    totals: Counter = Counter()
    for c in model.columns:
        totals[c.source] += splits[c.name]
    total = sum(totals.values()) or 1
    return {s: 100.0 * v / total for s, v in sorted(totals.items())}


# ---------------------------------------------------------------- search


@dataclass
class SearchBudget:
    wall_seconds: float = 1000.0
    max_trials: int = 50
    objective: str = "macro_f1"
    cv_folds: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.wall_seconds <= 0 or self.max_trials < 1:
            raise ValueError("budget limits must be positive")
        if self.objective not in ("macro_f1", "roc_auc_ovr"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be at least 2")


@dataclass
class SearchResult:
    config: TrainConfig
    score: float
    trials: list[tuple[TrainConfig, float]]
    discarded: int = 0


def sample_configs(seed: int):
    """Endless deterministic stream of candidate configurations."""
    rng = np.random.default_rng(seed)
    while True:
        yield TrainConfig(
            num_rounds=int(rng.integers(50, 501)),
            learning_rate=float(math.exp(rng.uniform(math.log(0.01), math.log(0.3)))),
            max_leaves=int(rng.integers(4, 129)),
            min_samples_leaf=int(rng.integers(1, 51)),
            l2_leaf_penalty=float(rng.uniform(0.0, 10.0)),
            feature_subsample=float(rng.uniform(0.5, 1.0)),
            seed=int(rng.integers(0, 2**31 - 1)),
        )


def effective_folds(labels: Sequence, folds: int) -> int:
    smallest = min(Counter(labels).values())
    if smallest < folds:
        reduced = max(2, smallest)
        logger.warning("smallest class has %d members; using %d folds instead of %d", smallest, reduced, folds)
        return reduced
    return folds


def cv_score(
    matrix: FeatureMatrix,
    config: TrainConfig,
    folds: int,
    objective: str = "macro_f1",
    seed: int = 0,
    smote_k: int | None = None,
    deadline: float | None = None,
) -> float:
    """Mean objective over stratified folds; SMOTE (if ``smote_k``) touches training folds only."""
    labels = matrix.labels
    folds = effective_folds(labels, folds)
    assignment = stratified_folds(labels, folds, seed)
    scores = []
    for f in range(folds):
        if deadline is not None and time.monotonic() > deadline:
            raise _Deadline()
        tr = np.flatnonzero(assignment != f)
        te = np.flatnonzero(assignment == f)
        train_m = matrix.take_rows(tr)
        if smote_k:
            res = smote_arrays(train_m.rows, np.array(train_m.labels, dtype=object), smote_k, seed + f)
            train_m = FeatureMatrix(res.rows, train_m.columns, [str(l) for l in res.labels])
        model = train(train_m, config, deadline=deadline)
        test_labels = [labels[i] for i in te]
        proba = model.predict_proba(matrix.rows[te])
        if objective == "roc_auc_ovr":
            scores.append(roc_auc_ovr(test_labels, proba, model.classes))
        else:
            pred = [model.classes[i] for i in np.argmax(proba, axis=1)]
            scores.append(build_report(test_labels, pred, model.classes).macro_f1)
    return float(np.mean(scores))


def search(
    matrix: FeatureMatrix, budget: SearchBudget, smote_k: int | None = None
) -> SearchResult:
    """Random search over TrainConfig; returns the incumbent when either limit is hit.

    A trial still running when wall time runs out is discarded.
    """
    if matrix.labels is None:
        raise ValueError("search needs a labelled matrix")
    deadline = time.monotonic() + budget.wall_seconds
    candidates = sample_configs(budget.seed)
    trials: list[tuple[TrainConfig, float]] = []
    discarded = 0
    best: tuple[TrainConfig, float] | None = None
    for _ in range(budget.max_trials):
        if time.monotonic() > deadline:
            break
        cfg = next(candidates)
        try:
            score = cv_score(
                matrix, cfg, budget.cv_folds, budget.objective, budget.seed, smote_k, deadline
            )
        except _Deadline:
            discarded += 1
            break
        trials.append((cfg, score))
        logger.info("trial %d: %s=%.4f", len(trials), budget.objective, score)
        if best is None or score > best[1]:
            best = (cfg, score)
    if best is None:
        raise BudgetTooSmall("no trial completed within the search budget")
    return SearchResult(best[0], best[1], trials, discarded)


# ---------------------------------------------------------------- bundles


def _canonical(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def write_bundle(payload: dict, path: str | Path) -> None:
    """Header line (format, version, checksum, length) followed by the JSON payload."""
    if not str(path):
        raise IoError("empty bundle path")
    body = _canonical(payload)
    header = {
        "format": BUNDLE_FORMAT,
        "schema_version": BUNDLE_VERSION,
        "sha256": hashlib.sha256(body).hexdigest(),
        "length": len(body),
    }
    try:
        with open(path, "wb") as fh:
            fh.write(_canonical(header) + b"\n")
            fh.write(body)
    except OSError as exc:
        raise IoError(f"cannot write bundle {path}: {exc}") from exc


def read_bundle(path: str | Path) -> dict:
    if not str(path):
        raise IoError("empty bundle path")
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read bundle {path}: {exc}") from exc
    head, sep, body = data.partition(b"\n")
    try:
        header = json.loads(head)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ChecksumMismatch(f"{path}: unreadable bundle header") from exc
    if not isinstance(header, dict) or header.get("format") != BUNDLE_FORMAT:
        raise SchemaMismatch(f"{path} is not a model bundle")
    if header.get("schema_version") != BUNDLE_VERSION:
        raise SchemaMismatch(
            f"bundle schema_version {header.get('schema_version')!r} unsupported (expected {BUNDLE_VERSION})"
        )
    if not sep or len(body) != header.get("length") or hashlib.sha256(body).hexdigest() != header.get("sha256"):
        raise ChecksumMismatch(f"{path}: payload checksum mismatch (truncated or modified)")
    return json.loads(body)


def save_model(
    model: GbdtModel,
    path: str | Path,
    pipeline: dict | None = None,
    provenance: dict | None = None,
) -> None:
    write_bundle(
        {"model": model.to_dict(), "pipeline": pipeline, "provenance": provenance or {}}, path
    )


def load_model(path: str | Path) -> GbdtModel:
    return GbdtModel.from_dict(read_bundle(path)["model"])
