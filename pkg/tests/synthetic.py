"""Deterministic synthetic corpus: labels follow planted README tokens.

Each class owns a small set of signal words.  A record's README contains a
few of its own class's signal words mixed with shared filler, so the label is
a function of the README text.  Categorical and numerical sources are pure
noise drawn independently of the label.
"""

from __future__ import annotations

import numpy as np

from repodomain.corpus import RepoRecord
from repodomain.ingest import RepoRef

CLASSES = (
    "ApplicationAndSystemSoftware",
    "Documentation",
    "NonWebLibsFrameworks",
    "SoftwareTools",
    "WebLibsFrameworks",
)

SIGNAL = {
    "ApplicationAndSystemSoftware": ("desktop", "kernel", "player", "editor", "driver", "emulator"),
    "Documentation": ("tutorial", "guide", "handbook", "awesome", "curated", "interview"),
    "NonWebLibsFrameworks": ("tensor", "matrix", "parser", "numeric", "dataframe", "solver"),
    "SoftwareTools": ("linter", "cli", "formatter", "bundler", "scaffold", "profiler"),
    "WebLibsFrameworks": ("router", "middleware", "frontend", "component", "http", "browser"),
}

FILLER = (
    "the project is open source and welcomes contributions please read the "
    "install section below then run the example build with your favourite "
    "package manager see license file for details issues and pull requests "
    "are appreciated star this repository if it helps you"
).split()

TOPICS = ("python", "javascript", "go", "rust", "hacktoberfest", "linux", "api", "macos")
LICENCES = ("mit", "apache-2.0", "gpl-3.0", "bsd-3-clause", None)
LANGUAGES = ("Python", "JavaScript", "Go", "Rust", "C", "Shell", "HTML")
ROOT = ("README.md", "LICENSE", "src", "docs", "tests", ".github", "Makefile", "package.json")
PEOPLE = tuple(f"dev{i:02d}" for i in range(30))


def synthetic_corpus(n: int = 250, seed: int = 7) -> list[RepoRecord]:
    rng = np.random.default_rng(seed)
    per_class = n // len(CLASSES)
    records = []
    for c_index, label in enumerate(CLASSES):
        for i in range(per_class):
            signal = list(rng.choice(SIGNAL[label], size=3, replace=False))
            words = list(rng.choice(FILLER, size=25))
            for w in signal:
                words.insert(int(rng.integers(0, len(words) + 1)), w)
            k_topics = int(rng.integers(0, 4))
            k_langs = int(rng.integers(1, 4))
            records.append(
                RepoRecord(
                    ref=RepoRef(f"org{c_index}", f"repo{i:03d}"),
                    label=label,
                    cleaned_readme=" ".join(words),
                    description=" ".join(rng.choice(FILLER, size=6)),
                    topics=tuple(sorted(rng.choice(TOPICS, size=k_topics, replace=False))),
                    labels=("bug", "enhancement"),
                    root_entries=tuple(sorted(rng.choice(ROOT, size=4, replace=False))),
                    contributor_logins=tuple(rng.choice(PEOPLE, size=3, replace=False)),
                    languages={str(l): int(rng.integers(100, 10_000)) for l in rng.choice(LANGUAGES, size=k_langs, replace=False)},
                    licence_key=LICENCES[int(rng.integers(0, len(LICENCES)))],
                    releases=int(rng.integers(0, 50)),
                    stars=int(rng.integers(0, 5000)),
                    forks=int(rng.integers(0, 500)),
                    has_workflow_files=bool(rng.integers(0, 2)),
                )
            )
    return records


def planted_label(readme: str) -> str:
    """The labelling rule: the class whose signal words occur most often."""
    words = readme.split()
    scores = {c: sum(words.count(w) for w in SIGNAL[c]) for c in CLASSES}
    return max(CLASSES, key=lambda c: scores[c])


if __name__ == "__main__":  # regenerate the bundled fixture
    from pathlib import Path

    from repodomain.corpus import save_dataset

    save_dataset(synthetic_corpus(), Path(__file__).parent / "fixtures" / "synthetic_corpus.jsonl")
