"""Evaluation protocols: stratified cross-validation, hold-out runs, source ablation."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .corpus import RepoRecord, stratified_folds, stratified_split
from .errors import EmptyDataset
from .metrics import MetricsReport, build_report
from .model import SearchBudget, effective_folds, search
from .pipeline import ABLATIONS, Classifier, PipelineConfig, ablation_config

logger = logging.getLogger(__name__)


@dataclass
class CVResult:
    folds: list[MetricsReport]
    assignment: np.ndarray
    mean: dict[str, float]
    std: dict[str, float]


def _summarise(reports: Sequence[MetricsReport]) -> tuple[dict, dict]:
    keys = reports[0].scalar_metrics().keys()
    mean = {k: float(np.mean([r.scalar_metrics()[k] for r in reports])) for k in keys}
    std = {k: float(np.std([r.scalar_metrics()[k] for r in reports])) for k in keys}
    return mean, std


def evaluate(clf, records: Sequence[RepoRecord], train_labels=None, provenance=None) -> MetricsReport:
    proba = clf.predict_proba(records)
    pred = [clf.classes[i] for i in np.argmax(proba, axis=1)]
    truth = [r.label for r in records]
    classes = sorted(set(clf.classes) | set(truth))
    if classes != list(clf.classes):
        # a test label the model never saw gets a zero score column
        full = np.zeros((len(records), len(classes)))
        for j, c in enumerate(clf.classes):
            full[:, classes.index(c)] = proba[:, j]
        proba = full
    return build_report(truth, pred, classes, proba, train_labels, provenance)


def cross_validate(
    dataset: Sequence[RepoRecord],
    config: PipelineConfig,
    folds: int = 10,
    seed: int = 0,
    classifier_factory: Callable[[PipelineConfig], object] = Classifier,
    jobs: int = 1,
) -> CVResult:
    """Stratified k-fold CV; every transform is refitted inside each fold."""
    records = [r for r in dataset if r.label is not None]
    if not records:
        raise EmptyDataset("no labelled records to cross-validate")
    labels = [r.label for r in records]
    folds = effective_folds(labels, folds)
    assignment = stratified_folds(labels, folds, seed)

    def run(f: int) -> MetricsReport:
        train = [r for r, a in zip(records, assignment) if a != f]
        test = [r for r, a in zip(records, assignment) if a == f]
        clf = classifier_factory(config).fit(train)
        return evaluate(clf, test, [r.label for r in train], {"fold": f, "folds": folds, "seed": seed})

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            reports = list(pool.map(run, range(folds)))
    else:
        reports = [run(f) for f in range(folds)]
    mean, std = _summarise(reports)
    return CVResult(reports, assignment, mean, std)


@dataclass
class HoldoutResult:
    classifier: Classifier
    report: MetricsReport
    search_score: float | None


def holdout(
    dataset: Sequence[RepoRecord],
    config: PipelineConfig,
    budget: SearchBudget | None = None,
    test_fraction: float = 0.1,
    seed: int = 0,
) -> HoldoutResult:
    """Fit on a stratified training split (searching hyperparameters if a budget is
    given) and score on the held-out split."""
    records = [r for r in dataset if r.label is not None and r.status == "active"]
    train_set, test_set = stratified_split(records, test_fraction, seed)
    clf, score = fit_classifier(train_set, config, budget)
    report = evaluate(
        clf,
        test_set,
        [r.label for r in train_set],
        {"split": f"{1 - test_fraction:g}/{test_fraction:g}", "seed": seed, "train": clf.model.config.to_dict()},
    )
    return HoldoutResult(clf, report, score)


def fit_classifier(
    records: Sequence[RepoRecord], config: PipelineConfig, budget: SearchBudget | None = None
) -> tuple[Classifier, float | None]:
    clf = Classifier(config)
    if budget is None:
        return clf.fit(records), None
    matrix = clf.features.fit(records)
    result = search(matrix, budget, smote_k=config.smote_k if config.smote else None)
    tuned = replace(config, train=result.config)
    clf = Classifier(tuned).fit(records)
    return clf, result.score


def ablation(
    dataset: Sequence[RepoRecord],
    budget: SearchBudget | None = None,
    base: PipelineConfig | None = None,
    test_fraction: float = 0.1,
    seed: int = 0,
) -> list[tuple[str, MetricsReport]]:
    """One hold-out report per data-source configuration, all under the same budget and split."""
    base = base or PipelineConfig()
    rows = []
    for name in ABLATIONS:
        result = holdout(dataset, ablation_config(base, name), budget, test_fraction, seed)
        result.report.provenance["configuration"] = name
        rows.append((name, result.report))
    return rows


def ablation_table(rows: Sequence[tuple[str, MetricsReport]], fmt: str = "text") -> str:
    header = ["configuration", "precision", "recall", "f1", "accuracy"]
    if fmt == "csv":
        lines = [",".join(header)]
        for name, r in rows:
            lines.append(f"\"{name}\",{r.macro_precision!r},{r.macro_recall!r},{r.macro_f1!r},{r.accuracy!r}")
        return "\n".join(lines) + "\n"
    lines = [f"{'Data source':<42}{'Precision':>10}{'Recall':>8}{'F1':>7}{'Accuracy':>10}"]
    for name, r in rows:
        lines.append(
            f"{name:<42}{r.macro_precision:>10.2f}{r.macro_recall:>8.2f}{r.macro_f1:>7.2f}{r.accuracy:>10.2f}"
        )
    return "\n".join(lines)


def write_report(report: MetricsReport, outdir: str | Path) -> None:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(report.to_csv(), encoding="utf-8")
    if report.confusion is not None:
        (out / "confusion.csv").write_text(report.confusion.to_csv(), encoding="utf-8")
