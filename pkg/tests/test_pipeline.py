import numpy as np
import pytest

from repodomain.corpus import load_dataset
from repodomain.evaluation import ablation, ablation_table, cross_validate, holdout, write_report
from repodomain.model import SearchBudget, TrainConfig
from repodomain.pipeline import ABLATIONS, Classifier, PipelineConfig

from synthetic import CLASSES, planted_label, synthetic_corpus

FAST = TrainConfig(num_rounds=30, max_leaves=6, min_samples_leaf=3)


@pytest.fixture(scope="module")
def records():
    return synthetic_corpus()


def test_fixture_matches_generator(records, tmp_path):
    from pathlib import Path

    bundled = load_dataset(Path(__file__).parent / "fixtures" / "synthetic_corpus.jsonl")
    assert bundled == records
    assert all(planted_label(r.cleaned_readme) == r.label for r in records)
    assert sorted({r.label for r in records}) == list(CLASSES)


def test_classifier_save_load_identical(records, tmp_path):
    clf = Classifier(PipelineConfig(train=FAST)).fit(records[::2])
    path = tmp_path / "m.bundle"
    clf.save(path, {"seed": 0})
    again = Classifier.load(path)
    test = records[1::2]
    assert np.array_equal(clf.predict_proba(test), again.predict_proba(test))
    assert again.provenance == {"seed": 0}


def test_transform_never_refits(records):
    clf = Classifier(PipelineConfig(train=FAST)).fit(records[:100])
    width = clf.features.transform(records[:100]).shape[1]
    assert clf.features.transform(records[100:]).shape[1] == width


def test_holdout_with_smote_and_search(records):
    cfg = PipelineConfig(train=FAST, smote=True)
    budget = SearchBudget(wall_seconds=60, max_trials=1, cv_folds=3, seed=0)
    res = holdout(records[:150], cfg, budget, 0.2, seed=1)
    assert res.search_score is not None
    assert sum(res.report.confusion.counts.sum(axis=1)) == 30
    assert res.report.zero_r_accuracy == pytest.approx(1 / 3)  # three classes in the first 150


def test_cross_validate_parallel_matches_serial(records):
    cfg = PipelineConfig(train=TrainConfig(num_rounds=10, max_leaves=4))
    a = cross_validate(records[:100], cfg, folds=4, seed=2)
    b = cross_validate(records[:100], cfg, folds=4, seed=2, jobs=2)
    assert a.mean == b.mean
    assert np.array_equal(a.assignment, b.assignment)


def test_ablation_rows(records, tmp_path):
    rows = ablation(records[:120], None, PipelineConfig(train=TrainConfig(num_rounds=10, max_leaves=4)), 0.2, 0)
    assert [n for n, _ in rows] == list(ABLATIONS)
    csv_text = ablation_table(rows, "csv")
    assert csv_text.splitlines()[0] == "configuration,precision,recall,f1,accuracy"
    assert "README only" in ablation_table(rows)
    write_report(rows[0][1], tmp_path)
    assert (tmp_path / "metrics.csv").exists() and (tmp_path / "confusion.csv").exists()


def test_empty_sources_rejected():
    with pytest.raises(ValueError):
        PipelineConfig(text_fields=(), categorical_sources=(), numerical_sources=())
