import csv
import json
from pathlib import Path

import httpx
import numpy as np
import pytest

from repodomain import cli
from repodomain.corpus import load_dataset, save_dataset
from repodomain.ingest import Cache, GitHubClient
from repodomain.metrics import ConfusionMatrix, metrics_from_confusion

from synthetic import synthetic_corpus
from tables import CONFUSION, CONFUSION_CLASSES
from test_ingest import NOW, FakeGitHub

FAST = ["--rounds", "15", "--max-leaves", "6", "--min-samples-leaf", "3"]


@pytest.fixture
def offline(monkeypatch):
    fake = FakeGitHub()

    def make(args):
        return GitHubClient(
            token="t", cache=Cache(args.cache), refresh=getattr(args, "refresh", False),
            transport=httpx.MockTransport(fake), sleep=lambda s: None, clock=lambda: NOW,
        )

    monkeypatch.setattr(cli, "_client", make)
    return fake


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("train")
    data = d / "data.jsonl"
    save_dataset(synthetic_corpus(100), data)
    assert cli.main(["train", "--data", str(data), "--out", str(d / "m.bundle"), *FAST]) == 0
    return d


def test_unknown_flag_is_usage_error(capsys):
    assert cli.main(["train", "--bogus"]) == 2
    err = capsys.readouterr().err
    assert "usage: repodomain train" in err


def test_missing_subcommand(capsys):
    assert cli.main([]) == 2


def test_domain_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.bundle"
    bad.write_text("garbage\n")
    assert cli.main(["eval", "--model", str(bad), "--data", str(bad)]) == 1
    assert "error[E_" in capsys.readouterr().err


def test_eval_predictions_matches_confusion(tmp_path, capsys):
    preds = tmp_path / "preds.csv"
    with open(preds, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true", "predicted"])
        for i, t in enumerate(CONFUSION_CLASSES):
            for j, p in enumerate(CONFUSION_CLASSES):
                w.writerows([[t, p]] * CONFUSION[i][j])
    out = tmp_path / "out"
    assert cli.main(["--format", "csv", "eval", "--predictions", str(preds), "--out", str(out)]) == 0
    expected = metrics_from_confusion(ConfusionMatrix(CONFUSION_CLASSES, np.array(CONFUSION)))
    assert (out / "metrics.csv").read_text() == expected.to_csv()
    assert (out / "confusion.csv").read_text() == expected.confusion.to_csv()
    assert (out / "manifest.json").exists()
    assert capsys.readouterr().out == expected.to_csv()


def test_train_writes_bundle_metrics_manifest(trained):
    assert (trained / "m.bundle").exists()
    assert (trained / "metrics.csv").read_text().startswith("metric,class,value")
    manifest = json.loads((trained / "manifest.json").read_text())
    assert manifest["command"] == "train" and manifest["seed"] == 0
    assert manifest["started_at"] and manifest["finished_at"]


def test_eval_model_on_data(trained, tmp_path):
    out = tmp_path / "e"
    assert cli.main(["eval", "--model", str(trained / "m.bundle"), "--data", str(trained / "data.jsonl"), "--out", str(out)]) == 0
    assert (out / "confusion.csv").exists()


def test_train_is_reproducible(trained, tmp_path):
    assert cli.main(["train", "--data", str(trained / "data.jsonl"), "--out", str(tmp_path / "m.bundle"), *FAST]) == 0
    assert (tmp_path / "metrics.csv").read_bytes() == (trained / "metrics.csv").read_bytes()
    assert (tmp_path / "m.bundle").read_bytes() == (trained / "m.bundle").read_bytes()


def test_fetch_build_classify(offline, trained, tmp_path, capsys):
    repos = tmp_path / "repos.txt"
    repos.write_text("acme/widget\ngone/thing  # removed upstream\n")
    cache = tmp_path / "cache"
    assert cli.main(["fetch", "--repos", str(repos), "--cache", str(cache), "--commits"]) == 0
    manifest = json.loads((cache / "manifest.json").read_text())
    assert [f["ref"] for f in manifest["failures"]] == ["gone/thing"]

    labels = tmp_path / "labels.csv"
    labels.write_text("ref,label\nacme/widget,Web Libs & Frameworks\n")
    data = tmp_path / "built.jsonl"
    assert cli.main(["build", "--in", str(cache), "--out", str(data), "--labels", str(labels), "--stats"]) == 0
    built = {str(r.ref): r for r in load_dataset(data)}
    assert built["acme/widget"].label == "WebLibsFrameworks"
    assert built["acme/widget"].cleaned_readme == "Widget Fast widgets See docs."
    assert built["gone/thing"].status == "gone"

    capsys.readouterr()
    assert cli.main(["classify", "--model", str(trained / "m.bundle"), "--repo", "acme/widget", "--cache", str(cache)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("acme/widget: ")
    assert out.count("  ") >= 5  # one probability line per class


def test_practices_report_tsne(offline, trained, tmp_path, capsys):
    repos = tmp_path / "repos.txt"
    repos.write_text("acme/widget\n")
    profiles = tmp_path / "profiles.csv"
    args = ["practices", "--model", str(trained / "m.bundle"), "--repos", str(repos), "--out", str(profiles), "--cache", str(tmp_path / "c")]
    assert cli.main(args) == 0
    rows = list(csv.DictReader(open(profiles)))
    assert rows[0]["total_commits"] == "4" and rows[0]["refactoring_commits"] == "2"
    assert rows[0]["uses_automation"] == "1"

    # a larger synthetic profile table for the report and projection
    lines = [profiles.read_text().splitlines()[0]]
    rng = np.random.default_rng(0)
    for i in range(12):
        dom = ["Documentation", "SoftwareTools", "WebLibsFrameworks"][i % 3]
        total = int(rng.integers(10, 100))
        ref = int(rng.integers(0, total))
        lines.append(f"o/r{i},{dom},{ref},{total - ref},{total},{ref / total!r},2,3,5,0.4,{i % 2}")
    profiles.write_text("\n".join(lines) + "\n")
    out = tmp_path / "report"
    assert cli.main(["report", "--profiles", str(profiles), "--out", str(out)]) == 0
    for name in ("adoption.csv", "refactoring.csv", "ownership.csv", "tests.csv", "manifest.json"):
        assert (out / name).exists()
    first = (out / "tests.csv").read_bytes()
    assert cli.main(["report", "--profiles", str(profiles), "--out", str(out)]) == 0
    assert (out / "tests.csv").read_bytes() == first

    tsne = tmp_path / "tsne.csv"
    assert cli.main(["tsne", "--profiles", str(profiles), "--out", str(tsne), "--iterations", "200", "--seed", "3"]) == 0
    first = tsne.read_bytes()
    assert cli.main(["tsne", "--profiles", str(profiles), "--out", str(tsne), "--iterations", "200", "--seed", "3"]) == 0
    assert tsne.read_bytes() == first
    assert first.decode().splitlines()[0] == "ref,domain,x,y"


def test_ablate(trained, tmp_path):
    out = tmp_path / "abl"
    assert cli.main(["ablate", "--data", str(trained / "data.jsonl"), "--out", str(out), *FAST]) == 0
    lines = (out / "ablation.csv").read_text().splitlines()
    assert len(lines) == 6


def test_budget_parsing():
    assert cli._budget_seconds("1000s") == 1000
    assert cli._budget_seconds("2m") == 120
    with pytest.raises(Exception):
        cli._budget_seconds("soon")
