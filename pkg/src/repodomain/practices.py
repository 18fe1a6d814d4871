"""Per-repository practice features: refactoring commits, code ownership, automation."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .ingest import CommitRecord, RawRepo

# Ratzinger's stems; "not use" contains a space and is matched literally.
REFACTORING_KEYWORDS = (
    "refactor",
    "restruct",
    "clean",
    "not use",
    "unus",
    "reformat",
    "import",
    "remov",
    "replac",
    "split",
    "reorg",
    "renam",
    "move",
)

DEFAULT_OWNERSHIP_THRESHOLD = 0.05
DEFAULT_MAX_COMMITS = 200_000


def is_refactoring(message: str) -> bool:
    text = message.lower()
    return any(k in text for k in REFACTORING_KEYWORDS)


@dataclass(frozen=True)
class RefactoringStats:
    refactoring_commits: int
    non_refactoring_commits: int
    total_commits: int
    refactoring_ratio: float
    empty: bool = False  # ratio forced to 0 because there were no commits


def refactoring_stats(commits: Iterable[CommitRecord | str]) -> RefactoringStats:
    total = refactoring = 0
    for c in commits:
        total += 1
        refactoring += is_refactoring(c if isinstance(c, str) else c.message)
    if total == 0:
        return RefactoringStats(0, 0, 0, 0.0, empty=True)
    return RefactoringStats(refactoring, total - refactoring, total, refactoring / total)


@dataclass(frozen=True)
class OwnershipStats:
    major_contributors: int
    minor_contributors: int
    total_contributors: int
    ownership_ratio: float
    threshold: float = DEFAULT_OWNERSHIP_THRESHOLD
    empty: bool = False


def ownership_proportions(commits: Iterable[CommitRecord | str]) -> dict[str, float]:
    counts = Counter(c if isinstance(c, str) else c.author_id for c in commits)
    total = sum(counts.values())
    return {author: n / total for author, n in counts.items()} if total else {}


def ownership_stats(
    commits: Iterable[CommitRecord | str], threshold: float = DEFAULT_OWNERSHIP_THRESHOLD
) -> OwnershipStats:
    """Major contributors own at least ``threshold`` of the commits (inclusive).

    Shares are compared as exact integer ratios so a contributor at exactly 5%
    is never lost to floating-point rounding.
    """
    counts = Counter(c if isinstance(c, str) else c.author_id for c in commits)
    total = sum(counts.values())
    if total == 0:
        return OwnershipStats(0, 0, 0, 0.0, threshold, empty=True)
    cut = Fraction(threshold).limit_denominator(10**9)  # 0.05 -> exactly 1/20
    major = sum(1 for n in counts.values() if Fraction(n, total) >= cut)
    people = len(counts)
    return OwnershipStats(major, people - major, people, major / people, threshold)


@dataclass(frozen=True)
class PracticeProfile:
    refactoring_commits: int
    non_refactoring_commits: int
    total_commits: int
    refactoring_ratio: float
    major_contributors: int
    minor_contributors: int
    total_contributors: int
    ownership_ratio: float
    uses_automation: bool

    FEATURES = (
        "refactoring_commits",
        "non_refactoring_commits",
        "total_commits",
        "refactoring_ratio",
        "major_contributors",
        "minor_contributors",
        "total_contributors",
        "ownership_ratio",
        "uses_automation",
    )

    def vector(self) -> list[float]:
        return [float(getattr(self, f)) for f in self.FEATURES]


def practice_profile(
    raw: RawRepo | bool,
    commits: Sequence[CommitRecord],
    threshold: float = DEFAULT_OWNERSHIP_THRESHOLD,
) -> PracticeProfile:
    """All nine features; ``raw`` may be the automation flag itself."""
    uses_automation = raw if isinstance(raw, bool) else raw.has_workflow_files
    rs = refactoring_stats(commits)
    os_ = ownership_stats(commits, threshold)
    return PracticeProfile(
        rs.refactoring_commits,
        rs.non_refactoring_commits,
        rs.total_commits,
        rs.refactoring_ratio,
        os_.major_contributors,
        os_.minor_contributors,
        os_.total_contributors,
        os_.ownership_ratio,
        bool(uses_automation),
    )


@dataclass
class ExclusionReport:
    kept: list[str]
    excluded: list[tuple[str, int]]
    max_commits: int


def exclude_outliers(
    repos: Sequence[tuple[str, int]], max_commits: int = DEFAULT_MAX_COMMITS
) -> tuple[list[tuple[str, int]], ExclusionReport]:
    """Drop repositories with strictly more than ``max_commits`` commits."""
    kept = [(ref, n) for ref, n in repos if n <= max_commits]
    excluded = [(ref, n) for ref, n in repos if n > max_commits]
    return kept, ExclusionReport([r for r, _ in kept], excluded, max_commits)


# ---------------------------------------------------------------- profiles.csv

PROFILE_COLUMNS = ("ref", "domain") + PracticeProfile.FEATURES


def write_profiles(rows: Iterable[tuple[str, str, PracticeProfile]], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PROFILE_COLUMNS)
        for ref, domain, p in rows:
            d = asdict(p)
            w.writerow(
                [ref, domain]
                + [
                    repr(d[f]) if isinstance(d[f], float) else int(d[f]) if isinstance(d[f], bool) else d[f]
                    for f in PracticeProfile.FEATURES
                ]
            )


def read_profiles(path: str | Path) -> list[tuple[str, str, PracticeProfile]]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(PROFILE_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            out.append(
                (
                    row["ref"],
                    row["domain"],
                    PracticeProfile(
                        int(row["refactoring_commits"]),
                        int(row["non_refactoring_commits"]),
                        int(row["total_commits"]),
                        float(row["refactoring_ratio"]),
                        int(row["major_contributors"]),
                        int(row["minor_contributors"]),
                        int(row["total_contributors"]),
                        float(row["ownership_ratio"]),
                        row["uses_automation"].strip().lower() in ("1", "true", "yes"),
                    ),
                )
            )
    return out
