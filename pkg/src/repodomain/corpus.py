"""Labelled repository datasets: text cleaning, label schemes, splits, statistics, storage."""

from __future__ import annotations

import html
import json
import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyDataset, IoError, SchemaMismatch
from .ingest import RawRepo, RepoRef

SCHEMA_VERSION = 1


class DomainLabel(str, Enum):
    ApplicationSoftware = "ApplicationSoftware"
    SystemSoftware = "SystemSoftware"
    ApplicationAndSystemSoftware = "ApplicationAndSystemSoftware"
    WebLibsFrameworks = "WebLibsFrameworks"
    NonWebLibsFrameworks = "NonWebLibsFrameworks"
    SoftwareTools = "SoftwareTools"
    Documentation = "Documentation"

    @property
    def display(self) -> str:
        return DISPLAY_NAMES[self]


DISPLAY_NAMES = {
    DomainLabel.ApplicationSoftware: "Application Software",
    DomainLabel.SystemSoftware: "System Software",
    DomainLabel.ApplicationAndSystemSoftware: "Application & System Software",
    DomainLabel.WebLibsFrameworks: "Web Libs & Frameworks",
    DomainLabel.NonWebLibsFrameworks: "Non-Web Libs & Frameworks",
    DomainLabel.SoftwareTools: "Software Tools",
    DomainLabel.Documentation: "Documentation",
}

RAW_SCHEME = frozenset(
    {
        DomainLabel.ApplicationSoftware,
        DomainLabel.SystemSoftware,
        DomainLabel.WebLibsFrameworks,
        DomainLabel.NonWebLibsFrameworks,
        DomainLabel.SoftwareTools,
        DomainLabel.Documentation,
    }
)
MERGED_SCHEME = frozenset(
    {
        DomainLabel.ApplicationAndSystemSoftware,
        DomainLabel.WebLibsFrameworks,
        DomainLabel.NonWebLibsFrameworks,
        DomainLabel.SoftwareTools,
        DomainLabel.Documentation,
    }
)
_MERGE_SOURCES = {DomainLabel.ApplicationSoftware.value, DomainLabel.SystemSoftware.value}


def parse_label(text: str) -> str:
    """Accept an identifier ("SoftwareTools") or display name ("Software Tools")."""
    text = text.strip()
    for label in DomainLabel:
        if text in (label.value, label.display) or text.lower() == label.display.lower():
            return label.value
    raise ValueError(f"unknown domain label {text!r}")


def label_scheme(labels: Iterable[str]) -> str | None:
    """'raw', 'merged', or None when the labels fit both (or there are none).

    Raises ValueError for a dataset mixing the two schemes.
    """
    present = {DomainLabel(l) for l in labels}
    in_raw = present <= RAW_SCHEME
    in_merged = present <= MERGED_SCHEME
    if in_raw and in_merged:
        return None
    if in_raw:
        return "raw"
    if in_merged:
        return "merged"
    raise ValueError("dataset mixes raw and merged label schemes")


# ---------------------------------------------------------------- cleaning

_SCRIPT_STYLE = re.compile(r"<(script|style)\b[^>]*>.*?</\1\s*>", re.I | re.S)
_HTML_COMMENT = re.compile(r"<!--.*?-->", re.S)
_HTML_TAG = re.compile(r"</?[a-zA-Z][^<>]*>")
_FENCE = re.compile(r"^[ \t]*(```|~~~).*$", re.M)
_IMAGE = re.compile(r"!\[([^\[\]]*)\]\([^()]*\)")
_LINK = re.compile(r"\[([^\[\]]*)\]\([^()]*\)")
_REF_LINK = re.compile(r"\[([^\[\]]+)\]\[[^\[\]]*\]")
_REF_DEF = re.compile(r"^[ \t]*\[[^\[\]]+\]:[ \t]*\S+.*$", re.M)
_HEADING = re.compile(r"^[ \t]{0,3}#{1,6}(?=\s|$)", re.M)
_SETEXT_RULE = re.compile(r"^[ \t]*(=+|-{3,}|\*{3,}|_{3,})[ \t]*$", re.M)
_QUOTE = re.compile(r"^[ \t]*>+", re.M)
_BULLET = re.compile(r"^[ \t]*[-*+][ \t]+", re.M)
_STRONG = re.compile(r"(\*\*|__)(?=\S)(.+?)(?<=\S)\1", re.S)
_EM_STAR = re.compile(r"\*(?=\S)([^*]+?)(?<=\S)\*")
_EM_UNDER = re.compile(r"(?<!\w)_(?=\S)([^_]+?)(?<=\S)_(?!\w)")
_STRIKE = re.compile(r"~~(?=\S)(.+?)(?<=\S)~~", re.S)
_INLINE_CODE = re.compile(r"`+")
_WS = re.compile(r"\s+")


def _clean_once(text: str) -> str:
    text = _SCRIPT_STYLE.sub(" ", text)
    text = _HTML_COMMENT.sub(" ", text)
    text = _FENCE.sub(" ", text)
    text = _REF_DEF.sub(" ", text)
    text = _IMAGE.sub(r"\1", text)
    text = _LINK.sub(r"\1", text)
    text = _REF_LINK.sub(r"\1", text)
    text = _HTML_TAG.sub(" ", text)
    text = html.unescape(text)
    text = _SETEXT_RULE.sub(" ", text)
    text = _HEADING.sub(" ", text)
    text = _QUOTE.sub(" ", text)
    text = _BULLET.sub(" ", text)
    text = _STRONG.sub(r"\2", text)
    text = _STRIKE.sub(r"\1", text)
    text = _EM_STAR.sub(r"\1", text)
    text = _EM_UNDER.sub(r"\1", text)
    text = _INLINE_CODE.sub("", text)
    return _WS.sub(" ", text).strip()


def clean_text(raw_markup: str) -> str:
    """Strip HTML and Markdown markup and collapse whitespace.

    Tag content survives (except script/style), link and image text survives
    while their URLs go, code block bodies are kept as plain text.  Applied to
    a fixpoint, so the function is idempotent even for nested markup such as
    ``<<b>b>``.
    """
    text = raw_markup or ""
    for _ in range(len(text) + 2):
        cleaned = _clean_once(text)
        if cleaned == text:
            break
        text = cleaned
    return text


# ---------------------------------------------------------------- records

STATUSES = ("active", "gone", "deprecated")

DEFAULT_DEPRECATION_LEXICON = (
    "no longer maintained",
    "deprecated",
    "has been removed",
    "repository is archived",
)


@dataclass(frozen=True)
class RepoRecord:
    ref: RepoRef
    label: str | None = None
    cleaned_readme: str | None = None  # None = repository has no README
    description: str | None = None
    topics: tuple[str, ...] = ()
    labels: tuple[str, ...] = ()
    root_entries: tuple[str, ...] = ()
    contributor_logins: tuple[str, ...] = ()
    languages: dict[str, int] = field(default_factory=dict)
    licence_key: str | None = None
    releases: int = 0
    stars: int = 0
    forks: int = 0
    has_workflow_files: bool = False
    status: str = "active"

    def __post_init__(self):
        if self.label is not None:
            object.__setattr__(self, "label", DomainLabel(self.label).value)
        if self.status not in STATUSES:
            raise ValueError(f"bad status {self.status!r}")
        for name in ("releases", "stars", "forks"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("topics", "labels", "root_entries", "contributor_logins"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    @property
    def readme_text(self) -> str:
        return self.cleaned_readme or ""

    @property
    def description_text(self) -> str:
        return self.description or ""

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "ref": str(self.ref),
            "label": self.label,
            "cleaned_readme": self.cleaned_readme,
            "description": self.description,
            "topics": list(self.topics),
            "labels": list(self.labels),
            "root_entries": list(self.root_entries),
            "contributor_logins": list(self.contributor_logins),
            "languages": dict(self.languages),
            "licence_key": self.licence_key,
            "releases": self.releases,
            "stars": self.stars,
            "forks": self.forks,
            "has_workflow_files": self.has_workflow_files,
            "status": self.status,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RepoRecord":
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise SchemaMismatch(
                f"dataset schema_version {version!r} is not supported (expected {SCHEMA_VERSION})"
            )
        unknown = set(d) - _RECORD_FIELDS
        if unknown:
            raise SchemaMismatch(
                f"unknown field(s) {sorted(unknown)} for schema_version {SCHEMA_VERSION}"
            )
        missing = _RECORD_FIELDS - set(d)
        if missing:
            raise SchemaMismatch(f"missing field(s) {sorted(missing)}")
        return cls(
            ref=RepoRef.parse(d["ref"]),
            label=d["label"],
            cleaned_readme=d["cleaned_readme"],
            description=d["description"],
            topics=tuple(d["topics"]),
            labels=tuple(d["labels"]),
            root_entries=tuple(d["root_entries"]),
            contributor_logins=tuple(d["contributor_logins"]),
            languages={str(k): int(v) for k, v in d["languages"].items()},
            licence_key=d["licence_key"],
            releases=int(d["releases"]),
            stars=int(d["stars"]),
            forks=int(d["forks"]),
            has_workflow_files=bool(d["has_workflow_files"]),
            status=d["status"],
        )


_RECORD_FIELDS = frozenset(RepoRecord(RepoRef("a", "b")).to_dict())


def mark_deprecated(
    record: RepoRecord, lexicon: Sequence[str] = DEFAULT_DEPRECATION_LEXICON
) -> RepoRecord:
    haystack = f"{record.readme_text}\n{record.description_text}".lower()
    if any(phrase.lower() in haystack for phrase in lexicon):
        return replace(record, status="deprecated")
    return record


def record_from_raw(
    raw: RawRepo,
    label: str | None = None,
    lexicon: Sequence[str] = DEFAULT_DEPRECATION_LEXICON,
) -> RepoRecord:
    record = RepoRecord(
        ref=raw.ref,
        label=label,
        cleaned_readme=None if raw.readme is None else clean_text(raw.readme),
        description=raw.description,
        topics=raw.topics,
        labels=raw.labels,
        root_entries=raw.root_entries,
        contributor_logins=tuple(login for login, _ in raw.contributors),
        languages=dict(raw.languages),
        licence_key=raw.licence_key,
        releases=raw.releases,
        stars=raw.stars,
        forks=raw.forks,
        has_workflow_files=raw.has_workflow_files,
    )
    return mark_deprecated(record, lexicon)


def gone_record(ref: RepoRef, label: str | None = None) -> RepoRecord:
    return RepoRecord(ref=ref, label=label, status="gone")


# ---------------------------------------------------------------- dataset ops


def merge_labels(dataset: Sequence[RepoRecord]) -> list[RepoRecord]:
    """Fold Application Software and System Software into one class."""
    if label_scheme(r.label for r in dataset if r.label is not None) == "merged":
        raise ValueError("dataset already uses the merged label scheme")
    merged = DomainLabel.ApplicationAndSystemSoftware.value
    return [
        replace(r, label=merged) if r.label in _MERGE_SOURCES else r for r in dataset
    ]


def _largest_remainder(counts: dict[str, int], total: int) -> dict[str, int]:
    n = sum(counts.values())
    quotas = {k: c * total / n for k, c in counts.items()}
    alloc = {k: math.floor(q) for k, q in quotas.items()}
    leftover = total - sum(alloc.values())
    order = sorted(counts, key=lambda k: (-(quotas[k] - alloc[k]), k))
    for k in order[:leftover]:
        alloc[k] += 1
    return alloc


def allocate_test_counts(counts: dict[str, int], test_fraction: float) -> dict[str, int]:
    """Per-label test-set sizes: largest-remainder apportionment of round(N*f).

    A label with at least two records gets one on each side when that can be
    paid for by a label at or beyond its quota on the other side, so every label stays
    within one record of its exact quota and the total never moves.
    """
    n = sum(counts.values())
    total = math.floor(n * test_fraction + 0.5)
    alloc = _largest_remainder(counts, total)
    quota = {k: c * total / n for k, c in counts.items()}
    for k in sorted(counts):
        c = counts[k]
        if c < 2:
            continue
        if alloc[k] == 0:
            donors = [d for d in counts if alloc[d] >= quota[d] - 1e-9 and alloc[d] >= 2]
            if donors:
                d = max(donors, key=lambda d: (alloc[d] - quota[d], d))
                alloc[d] -= 1
                alloc[k] += 1
        elif alloc[k] == c:
            takers = [d for d in counts if alloc[d] <= quota[d] + 1e-9 and alloc[d] < counts[d] - 1]
            if takers:
                d = max(takers, key=lambda d: (quota[d] - alloc[d], d))
                alloc[d] += 1
                alloc[k] -= 1
    return alloc



def stratified_split(
    dataset: Sequence[RepoRecord], test_fraction: float, seed: int
) -> tuple[list[RepoRecord], list[RepoRecord]]:
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    if not dataset:
        raise EmptyDataset("cannot split an empty dataset")
    if any(r.label is None for r in dataset):
        raise ValueError("stratified_split needs labelled records")
    by_label: dict[str, list[int]] = defaultdict(list)
    for i, r in enumerate(dataset):
        by_label[r.label].append(i)
    alloc = allocate_test_counts({k: len(v) for k, v in by_label.items()}, test_fraction)
    rng = np.random.default_rng(seed)
    test_idx: set[int] = set()
    for label in sorted(by_label):
        members = by_label[label]
        picked = rng.permutation(len(members))[: alloc[label]]
        test_idx.update(members[j] for j in picked)
    train = [r for i, r in enumerate(dataset) if i not in test_idx]
    test = [r for i, r in enumerate(dataset) if i in test_idx]
    return train, test


# ---------------------------------------------------------------- statistics


@dataclass(frozen=True)
class FeatureMissing:
    present: int
    missing: int

    @property
    def missing_percent(self) -> float:
        total = self.present + self.missing
        return 100.0 * self.missing / total if total else 0.0


@dataclass(frozen=True)
class LabelSummary:
    count: int
    percent: float
    avg_languages: float
    avg_topics: float
    avg_root_entries: float
    avg_contributors: float


@dataclass(frozen=True)
class DatasetStats:
    size: int
    features: dict[str, FeatureMissing]
    per_label: dict[str, LabelSummary]

    def to_text(self) -> str:
        lines = [f"{'Data source':<24}{'Values':>8}{'Missing':>9}{'(%)':>7}"]
        for name, fm in self.features.items():
            lines.append(f"{name:<24}{fm.present:>8}{fm.missing:>9}{fm.missing_percent:>7.1f}")
        if self.per_label:
            lines.append("")
            lines.append(
                f"{'Label':<30}{'Count':>7}{'%':>7}{'Lang':>7}{'Topics':>8}{'Root':>7}{'Contrib':>9}"
            )
            for label, s in self.per_label.items():
                lines.append(
                    f"{label:<30}{s.count:>7}{s.percent:>7.1f}{s.avg_languages:>7.1f}"
                    f"{s.avg_topics:>8.1f}{s.avg_root_entries:>7.1f}{s.avg_contributors:>9.1f}"
                )
        return "\n".join(lines)


_PRESENCE = {
    "Description": lambda r: r.description is not None,
    "README File": lambda r: r.cleaned_readme is not None,
    "Topics": lambda r: bool(r.topics),
    "Licence": lambda r: r.licence_key is not None,
    "Programming Languages": lambda r: bool(r.languages),
    "Labels": lambda r: bool(r.labels),
    "Contributors": lambda r: bool(r.contributor_logins),
    "Sub-folders/files": lambda r: bool(r.root_entries),
    "Releases": lambda r: True,
    "Stars": lambda r: True,
    "Forks": lambda r: True,
}


def dataset_stats(dataset: Sequence[RepoRecord]) -> DatasetStats:
    n = len(dataset)
    features = {}
    for name, present in _PRESENCE.items():
        k = sum(1 for r in dataset if present(r))
        features[name] = FeatureMissing(k, n - k)
    groups: dict[str, list[RepoRecord]] = defaultdict(list)
    for r in dataset:
        if r.label is not None:
            groups[r.label].append(r)
    labelled = sum(len(g) for g in groups.values())
    per_label = {}
    for label in sorted(groups, key=lambda l: (-len(groups[l]), l)):
        g = groups[label]
        per_label[label] = LabelSummary(
            count=len(g),
            percent=100.0 * len(g) / labelled,
            avg_languages=float(np.mean([len(r.languages) for r in g])),
            avg_topics=float(np.mean([len(r.topics) for r in g])),
            avg_root_entries=float(np.mean([len(r.root_entries) for r in g])),
            avg_contributors=float(np.mean([len(r.contributor_logins) for r in g])),
        )
    return DatasetStats(n, features, per_label)


def label_counts(dataset: Iterable[RepoRecord]) -> Counter:
    return Counter(r.label for r in dataset if r.label is not None)


# ---------------------------------------------------------------- storage


def save_dataset(dataset: Iterable[RepoRecord], path: str | Path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for r in dataset:
                fh.write(json.dumps(r.to_dict(), ensure_ascii=False, sort_keys=True))
                fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write dataset {path}: {exc}") from exc


def load_dataset(path: str | Path) -> list[RepoRecord]:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise IoError(f"cannot read dataset {path}: {exc}") from exc
    records = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            payload = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaMismatch(f"{path}:{lineno}: not a JSON record") from exc
        records.append(RepoRecord.from_dict(payload))
    scheme_labels = [r.label for r in records if r.label is not None]
    try:
        label_scheme(scheme_labels)
    except ValueError as exc:
        raise SchemaMismatch(f"{path}: {exc}") from exc
    return records


def stratified_folds(labels: Sequence[str], folds: int, seed: int) -> np.ndarray:
    """Fold id per position, dealt round-robin within each shuffled label group.

    The dealing offset carries across labels (in sorted order) so fold sizes
    differ by at most one.
    """
    if folds < 2:
        raise ValueError("need at least two folds")
    if len(labels) == 0:
        raise EmptyDataset("cannot fold an empty dataset")
    rng = np.random.default_rng(seed)
    groups: dict[str, list[int]] = defaultdict(list)
    for i, label in enumerate(labels):
        groups[label].append(i)
    assignment = np.empty(len(labels), dtype=np.int64)
    offset = 0
    for label in sorted(groups):
        members = np.asarray(groups[label])[rng.permutation(len(groups[label]))]
        assignment[members] = (offset + np.arange(len(members))) % folds
        offset = (offset + len(members)) % folds
    return assignment
