"""Numeric feature construction from repository records.

Text fields go through a TF-IDF vectorizer (or precomputed embeddings),
categorical sources are one-hot encoded, and release/fork/star counts pass
through as raw numbers.  Feature selection prunes categorical columns with a
linear SVM; SMOTE balances the training classes.
"""

from __future__ import annotations

import json
import math
import re
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import RepoRecord
from .errors import (
    DegenerateLabels,
    EmptyVocabulary,
    IoError,
    MissingEmbedding,
    NonFiniteInput,
    TooFewSamples,
)

GROUPS = ("textual", "categorical", "numerical")
TEXT_FIELDS = ("description", "readme", "labels")
CATEGORICAL_SOURCES = ("topics", "licence", "languages", "contributors", "root_entries")
NUMERICAL_SOURCES = ("releases", "forks", "stars")
SOURCES = TEXT_FIELDS + CATEGORICAL_SOURCES + NUMERICAL_SOURCES + ("embedding",)


@dataclass(frozen=True)
class FeatureColumnMeta:
    name: str
    group: str
    source: str

    def __post_init__(self):
        if self.group not in GROUPS:
            raise ValueError(f"unknown feature group {self.group!r}")
        if self.source not in SOURCES:
            raise ValueError(f"unknown feature source {self.source!r}")

    def to_dict(self) -> dict:
        return {"name": self.name, "group": self.group, "source": self.source}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureColumnMeta":
        return cls(d["name"], d["group"], d["source"])


@dataclass
class FeatureMatrix:
    rows: np.ndarray
    columns: list[FeatureColumnMeta]
    labels: list[str] | None = None

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2:
            self.rows = self.rows.reshape(len(self.rows), -1)
        if self.rows.shape[1] != len(self.columns):
            raise ValueError(
                f"matrix has {self.rows.shape[1]} columns but {len(self.columns)} column metas"
            )
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            dup = [n for n, k in Counter(names).items() if k > 1][:3]
            raise ValueError(f"duplicate column names: {dup}")
        if not np.all(np.isfinite(self.rows)):
            raise NonFiniteInput("feature matrix contains NaN or infinite values")
        if self.labels is not None:
            self.labels = list(self.labels)
            if len(self.labels) != self.rows.shape[0]:
                raise ValueError("label count does not match row count")

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows.shape

    def group_indices(self, group: str) -> list[int]:
        return [i for i, c in enumerate(self.columns) if c.group == group]

    def take_rows(self, idx) -> "FeatureMatrix":
        idx = np.asarray(idx, dtype=int)
        labels = None if self.labels is None else [self.labels[i] for i in idx]
        return FeatureMatrix(self.rows[idx], list(self.columns), labels)

    def take_columns(self, idx) -> "FeatureMatrix":
        idx = list(idx)
        return FeatureMatrix(self.rows[:, idx], [self.columns[i] for i in idx], self.labels)


# ---------------------------------------------------------------- text

_TOKEN = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def record_text(record: RepoRecord, fieldname: str) -> str:
    if fieldname == "description":
        return record.description_text
    if fieldname == "readme":
        return record.readme_text
    if fieldname == "labels":
        return " ".join(record.labels)
    raise ValueError(f"unknown text field {fieldname!r}")


@dataclass
class TextVectorizerConfig:
    mode: str = "tfidf"
    vocab_size_cap: int = 20000
    min_doc_freq: int = 2
    embedding_dim: int = 768
    embedding_path: str | None = None

    def __post_init__(self):
        if self.mode not in ("tfidf", "precomputed_embedding"):
            raise ValueError(f"unknown text mode {self.mode!r}")
        if self.vocab_size_cap < 1 or self.min_doc_freq < 1 or self.embedding_dim < 1:
            raise ValueError("vectorizer sizes must be positive")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class TfidfVectorizer:
    """Smoothed TF-IDF: weight = count * (ln((1+N)/(1+df)) + 1), rows L2-normalised."""

    def __init__(self, vocab_size_cap: int = 20000, min_doc_freq: int = 2):
        self.vocab_size_cap = vocab_size_cap
        self.min_doc_freq = min_doc_freq
        self.vocabulary: dict[str, int] = {}
        self.idf = np.zeros(0)

    def fit(self, docs: Sequence[str]) -> "TfidfVectorizer":
        n = len(docs)
        df: Counter = Counter()
        for doc in docs:
            df.update(set(tokenize(doc)))
        terms = [t for t, c in df.items() if c >= self.min_doc_freq]
        if not terms:
            raise EmptyVocabulary("no term reaches the minimum document frequency")
        terms.sort(key=lambda t: (-df[t], t))
        terms = sorted(terms[: self.vocab_size_cap])
        self.vocabulary = {t: i for i, t in enumerate(terms)}
        self.idf = np.array([math.log((1 + n) / (1 + df[t])) + 1.0 for t in terms])
        return self

    def transform(self, docs: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(docs), len(self.vocabulary)))
        for i, doc in enumerate(docs):
            for term, count in Counter(tokenize(doc)).items():
                j = self.vocabulary.get(term)
                if j is not None:
                    out[i, j] = count
        out *= self.idf
        norms = np.linalg.norm(out, axis=1, keepdims=True)
        np.divide(out, norms, out=out, where=norms > 0)
        return out

    def to_dict(self) -> dict:
        terms = sorted(self.vocabulary, key=self.vocabulary.get)
        return {
            "vocab_size_cap": self.vocab_size_cap,
            "min_doc_freq": self.min_doc_freq,
            "terms": terms,
            "idf": self.idf.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TfidfVectorizer":
        v = cls(d["vocab_size_cap"], d["min_doc_freq"])
        v.vocabulary = {t: i for i, t in enumerate(d["terms"])}
        v.idf = np.array(d["idf"], dtype=np.float64)
        return v


def load_embeddings(path: str | Path, dim: int | None = None) -> dict[str, np.ndarray]:
    """Read ``{"ref": "owner/name", "vector": [...]}`` lines."""
    out: dict[str, np.ndarray] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                item = json.loads(line)
                vec = np.asarray(item["vector"], dtype=np.float64)
                if dim is not None and vec.shape != (dim,):
                    raise ValueError(f"{path}:{lineno}: expected width {dim}, got {vec.shape}")
                out[item["ref"]] = vec
    except OSError as exc:
        raise IoError(f"cannot read embeddings {path}: {exc}") from exc
    widths = {v.shape for v in out.values()}
    if len(widths) > 1:
        raise ValueError(f"embedding file {path} mixes vector widths {sorted(widths)}")
    return out


class TextVectorizer:
    """One TF-IDF vectorizer per text field, or a lookup into an embedding file."""

    def __init__(self, config: TextVectorizerConfig, fields: Sequence[str] = TEXT_FIELDS):
        unknown = set(fields) - set(TEXT_FIELDS)
        if unknown:
            raise ValueError(f"unknown text fields {sorted(unknown)}")
        self.config = config
        self.fields = tuple(f for f in TEXT_FIELDS if f in fields)
        self.tfidf: dict[str, TfidfVectorizer] = {}
        self._embeddings: dict[str, np.ndarray] | None = None

    def _embedding_table(self) -> dict[str, np.ndarray]:
        if self._embeddings is None:
            if not self.config.embedding_path:
                raise IoError("precomputed_embedding mode needs an embedding_path")
            self._embeddings = load_embeddings(self.config.embedding_path, self.config.embedding_dim)
        return self._embeddings

    def fit(self, records: Sequence[RepoRecord]) -> "TextVectorizer":
        if not records:
            raise ValueError("cannot fit a vectorizer on zero records")
        if self.config.mode == "precomputed_embedding":
            self._embedding_table()
            return self
        self.tfidf = {}
        for f in self.fields:
            docs = [record_text(r, f) for r in records]
            try:
                self.tfidf[f] = TfidfVectorizer(
                    self.config.vocab_size_cap, self.config.min_doc_freq
                ).fit(docs)
            except EmptyVocabulary:
                if len(self.fields) == 1:
                    raise
        if not self.tfidf:
            raise EmptyVocabulary(f"all text fields {self.fields} are empty")
        return self

    def transform(self, records: Sequence[RepoRecord]) -> FeatureMatrix:
        if self.config.mode == "precomputed_embedding":
            table = self._embedding_table()
            rows = []
            for r in records:
                vec = table.get(str(r.ref))
                if vec is None:
                    raise MissingEmbedding(str(r.ref))
                rows.append(vec)
            dim = self.config.embedding_dim
            cols = [FeatureColumnMeta(f"embedding:{i}", "textual", "embedding") for i in range(dim)]
            return FeatureMatrix(np.vstack(rows) if rows else np.zeros((0, dim)), cols)
        blocks, cols = [], []
        for f in self.fields:  # fixed order; the dict may come back key-sorted from a bundle
            vec = self.tfidf.get(f)
            if vec is None:
                continue
            blocks.append(vec.transform([record_text(r, f) for r in records]))
            terms = sorted(vec.vocabulary, key=vec.vocabulary.get)
            cols.extend(FeatureColumnMeta(f"{f}:{t}", "textual", f) for t in terms)
        return FeatureMatrix(np.hstack(blocks), cols)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "fields": list(self.fields),
            "tfidf": {f: v.to_dict() for f, v in self.tfidf.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TextVectorizer":
        tv = cls(TextVectorizerConfig(**d["config"]), d["fields"])
        tv.tfidf = {f: TfidfVectorizer.from_dict(v) for f, v in d["tfidf"].items()}
        return tv


def vectorize_text(
    records: Sequence[RepoRecord],
    config: TextVectorizerConfig | None = None,
    fields: Sequence[str] = TEXT_FIELDS,
) -> FeatureMatrix:
    vec = TextVectorizer(config or TextVectorizerConfig(), fields).fit(records)
    return vec.transform(records)


# ---------------------------------------------------------------- categorical


def _categorical_values(record: RepoRecord, source: str) -> set[str]:
    if source == "topics":
        return set(record.topics)
    if source == "licence":
        return {record.licence_key} if record.licence_key is not None else set()
    if source == "languages":
        return set(record.languages)
    if source == "contributors":
        return set(record.contributor_logins)
    if source == "root_entries":
        return set(record.root_entries)
    raise ValueError(f"unknown categorical source {source!r}")


def top_contributors(records: Sequence[RepoRecord], k: int = 50) -> set[str]:
    """Union over labels of the k logins appearing in the most repositories of that label."""
    if k < 1:
        raise ValueError("k must be positive")
    per_label: dict[str, Counter] = defaultdict(Counter)
    for r in records:
        if r.label is None:
            raise ValueError("top_contributors needs labelled records")
        per_label[r.label].update(set(r.contributor_logins))
    chosen: set[str] = set()
    for counts in per_label.values():
        ranked = sorted(counts.items(), key=lambda lc: (-lc[1], lc[0]))
        chosen.update(login for login, _ in ranked[:k])
    return chosen


class CategoricalEncoder:
    def __init__(
        self,
        sources: Sequence[str] = CATEGORICAL_SOURCES,
        contributor_whitelist: set[str] | None = None,
    ):
        unknown = set(sources) - set(CATEGORICAL_SOURCES)
        if unknown:
            raise ValueError(f"unknown categorical sources {sorted(unknown)}")
        self.sources = tuple(s for s in CATEGORICAL_SOURCES if s in sources)
        self.contributor_whitelist = contributor_whitelist
        self.vocab: dict[str, list[str]] = {}

    def fit(self, records: Sequence[RepoRecord]) -> "CategoricalEncoder":
        self.vocab = {}
        for s in self.sources:
            values: set[str] = set()
            for r in records:
                values |= _categorical_values(r, s)
            if s == "contributors" and self.contributor_whitelist is not None:
                values &= self.contributor_whitelist
            self.vocab[s] = sorted(values)
        return self

    def transform(self, records: Sequence[RepoRecord]) -> FeatureMatrix:
        cols: list[FeatureColumnMeta] = []
        offsets: dict[str, dict[str, int]] = {}
        for s in self.sources:
            offsets[s] = {}
            for v in self.vocab[s]:
                offsets[s][v] = len(cols)
                cols.append(FeatureColumnMeta(f"{s}={v}", "categorical", s))
        rows = np.zeros((len(records), len(cols)))
        for i, r in enumerate(records):
            for s in self.sources:
                for v in _categorical_values(r, s):
                    j = offsets[s].get(v)
                    if j is not None:
                        rows[i, j] = 1.0
        return FeatureMatrix(rows, cols)

    def to_dict(self) -> dict:
        return {"sources": list(self.sources), "vocab": self.vocab}

    @classmethod
    def from_dict(cls, d: dict) -> "CategoricalEncoder":
        enc = cls(d["sources"])
        enc.vocab = {s: list(v) for s, v in d["vocab"].items()}
        return enc


def encode_categorical(
    records: Sequence[RepoRecord],
    sources: Sequence[str] = CATEGORICAL_SOURCES,
    contributor_whitelist: set[str] | None = None,
) -> FeatureMatrix:
    if not records:
        raise ValueError("cannot encode zero records")
    return CategoricalEncoder(sources, contributor_whitelist).fit(records).transform(records)


# ---------------------------------------------------------------- numerical


def numerical_matrix(records: Sequence[RepoRecord], sources: Sequence[str] = NUMERICAL_SOURCES) -> FeatureMatrix:
    sources = [s for s in NUMERICAL_SOURCES if s in sources]
    rows = np.array([[float(getattr(r, s)) for s in sources] for r in records]).reshape(
        len(records), len(sources)
    )
    return FeatureMatrix(rows, [FeatureColumnMeta(s, "numerical", s) for s in sources])


def assemble(
    text: FeatureMatrix | None,
    categorical: FeatureMatrix | None,
    numerical: FeatureMatrix | Sequence[RepoRecord] | None,
    labels: Sequence[str] | None = None,
) -> FeatureMatrix:
    """Concatenate blocks column-wise in text, categorical, numerical order."""
    if numerical is not None and not isinstance(numerical, FeatureMatrix):
        numerical = numerical_matrix(numerical)
    blocks = [b for b in (text, categorical, numerical) if b is not None]
    if not blocks:
        raise ValueError("nothing to assemble")
    n = blocks[0].rows.shape[0]
    if any(b.rows.shape[0] != n for b in blocks):
        raise ValueError(f"row counts differ: {[b.rows.shape[0] for b in blocks]}")
    cols = [c for b in blocks for c in b.columns]
    return FeatureMatrix(np.hstack([b.rows for b in blocks]), cols, labels)


# ---------------------------------------------------------------- selection


@dataclass
class SelectionModel:
    """Linear-SVM importance filter over categorical columns.

    ``weights`` is K x (number of candidate columns); non-candidate columns
    always survive.
    """

    C: float
    candidates: list[int]
    weights: np.ndarray
    kept_columns: list[int]
    n_columns: int

    @property
    def importances(self) -> np.ndarray:
        if self.weights.size == 0:
            return np.zeros(len(self.candidates))
        return np.abs(self.weights).max(axis=0)

    def transform(self, matrix: FeatureMatrix) -> FeatureMatrix:
        if matrix.rows.shape[1] != self.n_columns:
            raise ValueError("matrix width differs from the one the selector was fitted on")
        return matrix.take_columns(self.kept_columns)

    def to_dict(self) -> dict:
        return {
            "C": self.C,
            "candidates": self.candidates,
            "weights": self.weights.tolist(),
            "kept_columns": self.kept_columns,
            "n_columns": self.n_columns,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionModel":
        w = np.array(d["weights"], dtype=np.float64).reshape(-1, len(d["candidates"]))
        return cls(d["C"], list(d["candidates"]), w, list(d["kept_columns"]), d["n_columns"])


def select_features(
    matrix: FeatureMatrix, C: float = 0.01, groups: Sequence[str] = ("categorical",), seed: int = 0
) -> SelectionModel:
    """Keep candidate columns whose max |weight| over classes reaches the mean importance."""
    from sklearn.exceptions import ConvergenceWarning
    from sklearn.svm import LinearSVC

    if C <= 0:
        raise ValueError("C must be positive")
    if matrix.labels is None:
        raise ValueError("select_features needs a labelled matrix")
    classes = sorted(set(matrix.labels))
    if len(classes) < 2:
        raise DegenerateLabels("feature selection needs at least two classes")
    d = matrix.rows.shape[1]
    candidates = [i for i, c in enumerate(matrix.columns) if c.group in groups]
    passthrough = [i for i in range(d) if i not in set(candidates)]
    if not candidates:
        return SelectionModel(C, [], np.zeros((len(classes), 0)), passthrough, d)
    svm = LinearSVC(C=C, loss="hinge", dual=True, max_iter=20000, random_state=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        svm.fit(matrix.rows[:, candidates], matrix.labels)
    coef = svm.coef_
    if coef.shape[0] == 1:  # binary problems come back as a single hyperplane
        coef = np.vstack([-coef[0], coef[0]])
    importance = np.abs(coef).max(axis=0)
    threshold = importance.mean()
    keep = importance >= threshold - 1e-12 * max(1.0, abs(threshold))
    kept = sorted(passthrough + [c for c, k in zip(candidates, keep) if k])
    return SelectionModel(C, candidates, coef, kept, d)


# ---------------------------------------------------------------- SMOTE


@dataclass
class SmoteResult:
    rows: np.ndarray
    labels: np.ndarray
    # one entry per synthetic row: (base index, neighbour index) into the input
    pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=int))
    n_original: int = 0


def smote_arrays(X: np.ndarray, y: Sequence, k: int = 5, seed: int = 0) -> SmoteResult:
    """Oversample every class to the majority count.

    Synthetic rows sit on the segment between a randomly drawn sample and one
    of its k nearest same-class neighbours (Euclidean, ties by index).
    Original rows come first and are untouched.
    """
    if k < 1:
        raise ValueError("k must be positive")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    classes, counts = np.unique(y, return_counts=True)
    target = counts.max()
    rng = np.random.default_rng(seed)
    new_rows, new_labels, pairs = [], [], []
    for cls, count in zip(classes, counts):
        need = target - count
        if need == 0:
            continue
        if count < 2:
            raise TooFewSamples(str(cls), int(count))
        members = np.flatnonzero(y == cls)
        pts = X[members]
        sq = (pts**2).sum(axis=1)
        dist = np.maximum(sq[:, None] + sq[None, :] - 2.0 * pts @ pts.T, 0.0)
        np.fill_diagonal(dist, np.inf)
        k_eff = min(k, count - 1)
        neighbours = np.argsort(dist, axis=1, kind="stable")[:, :k_eff]
        base = rng.integers(0, count, size=need)
        pick = rng.integers(0, k_eff, size=need)
        u = rng.random(size=need)[:, None]
        nn = neighbours[base, pick]
        a, b = pts[base], pts[nn]
        syn = np.clip(a + u * (b - a), np.minimum(a, b), np.maximum(a, b))
        new_rows.append(syn)
        new_labels.extend([cls] * need)
        pairs.append(np.column_stack([members[base], members[nn]]))
    if not new_rows:
        return SmoteResult(X.copy(), y.copy(), np.zeros((0, 2), dtype=int), len(X))
    return SmoteResult(
        np.vstack([X, *new_rows]),
        np.concatenate([y, np.asarray(new_labels, dtype=y.dtype)]),
        np.vstack(pairs),
        len(X),
    )


def smote(matrix: FeatureMatrix, k: int = 5, seed: int = 0) -> FeatureMatrix:
    if matrix.labels is None:
        raise ValueError("smote needs a labelled matrix")
    res = smote_arrays(matrix.rows, np.array(matrix.labels, dtype=object), k, seed)
    return FeatureMatrix(res.rows, list(matrix.columns), [str(l) for l in res.labels])
