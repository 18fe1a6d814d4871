"""``repodomain`` command line.

Exit codes: 0 success, 1 domain error (``error[CODE]: message`` on stderr),
2 usage error.  Every command that writes files also writes a
``manifest.json`` beside them.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import (
    DEFAULT_DEPRECATION_LEXICON,
    dataset_stats,
    gone_record,
    label_counts,
    load_dataset,
    merge_labels,
    parse_label,
    record_from_raw,
    save_dataset,
)
from .errors import NotFound, RepoDomainError, TruncatedHistory
from .evaluation import ablation, ablation_table, evaluate, holdout, write_report
from .ingest import Cache, GitHubClient, RepoRef
from .metrics import ConfusionMatrix, build_report
from .model import SearchBudget, TrainConfig, group_importance
from .pipeline import Classifier, PipelineConfig
from .practices import exclude_outliers, practice_profile, read_profiles, write_profiles
from .stats import TsneConfig, domain_comparison_report, tsne_project, write_tsne_csv

logger = logging.getLogger("repodomain")


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    config: dict
    seed: int | None
    inputs: dict
    outputs: dict
    tool_version: str = __version__
    started_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    finished_at: str | None = None
    failures: list[dict] = field(default_factory=list)

    def write(self, directory: Path) -> Path:
        self.finished_at = datetime.now(timezone.utc).isoformat()
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / "manifest.json"
        path.write_text(json.dumps(self.__dict__, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
        return path


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _budget_seconds(text: str) -> float:
    t = text.strip().lower()
    scale = 1.0
    if t.endswith("s"):
        t = t[:-1]
    elif t.endswith("m"):
        t, scale = t[:-1], 60.0
    elif t.endswith("h"):
        t, scale = t[:-1], 3600.0
    try:
        value = float(t) * scale
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad duration {text!r}") from None
    if value <= 0:
        raise argparse.ArgumentTypeError("duration must be positive")
    return value


def _read_refs(path: str) -> list[RepoRef]:
    refs = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            refs.append(RepoRef.parse(line))
    return refs


def _client(args) -> GitHubClient:
    return GitHubClient(cache=Cache(args.cache), refresh=getattr(args, "refresh", False), max_concurrent=args.jobs)


def _out_dir(path: str) -> Path:
    p = Path(path)
    return p if p.suffix == "" else p.parent


def _emit(text: str, args, csv_text: str | None = None) -> None:
    print(csv_text if args.format == "csv" and csv_text is not None else text, end="" if args.format == "csv" else "\n")


# ---------------------------------------------------------------- commands


def cmd_fetch(args) -> int:
    refs = _read_refs(args.repos)
    manifest = RunManifest("fetch", sys.argv[1:], {"commits": args.commits}, None, {"repos": args.repos}, {"cache": args.cache})
    with _client(args) as client:

        def one(ref):
            try:
                client.fetch_repo(ref)
                if args.commits:
                    client.fetch_commits(ref)
                return None
            except RepoDomainError as exc:
                return {"ref": str(ref), "code": exc.code, "error": str(exc)}

        with ThreadPoolExecutor(args.jobs) as pool:
            results = list(pool.map(one, refs))
    manifest.failures = [r for r in results if r]
    for f in manifest.failures:
        print(f"skipped {f['ref']}: {f['code']}", file=sys.stderr)
    manifest.write(Path(args.cache))
    print(f"fetched {len(refs) - len(manifest.failures)}/{len(refs)} repositories into {args.cache}")
    return 0


def _read_label_file(path: str) -> dict[str, str]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {row["ref"].strip(): parse_label(row["label"]) for row in csv.DictReader(fh)}


def cmd_build(args) -> int:
    cache = Cache(args.input)
    labels = _read_label_file(args.labels) if args.labels else {}
    lexicon = DEFAULT_DEPRECATION_LEXICON
    if args.lexicon:
        lexicon = tuple(l.strip() for l in Path(args.lexicon).read_text(encoding="utf-8").splitlines() if l.strip())
    records = []
    for ref in cache.refs():
        label = labels.get(str(ref))
        raw = cache.read_repo(ref)
        if raw is None:
            if cache.is_gone(ref):
                records.append(gone_record(ref, label))
            continue
        records.append(record_from_raw(raw, label, lexicon))
    if args.merge:
        records = merge_labels(records)
    save_dataset(records, args.out)
    flagged = [r for r in records if r.status == "deprecated"]
    for r in flagged:
        print(f"review: {r.ref} flagged deprecated")
    print(f"wrote {len(records)} records to {args.out} ({len(flagged)} flagged for review)")
    if args.stats:
        print(dataset_stats(records).to_text())
    RunManifest(
        "build", sys.argv[1:], {"merge": args.merge, "lexicon": list(lexicon)}, None,
        {"cache": args.input, "labels": args.labels}, {"dataset": args.out},
    ).write(_out_dir(args.out))
    return 0


def _training_records(path: str, merge: bool):
    records = [r for r in load_dataset(path) if r.label is not None and r.status == "active"]
    return merge_labels(records) if merge else records


def _pipeline_config(args) -> PipelineConfig:
    train_cfg = TrainConfig(
        num_rounds=args.rounds, learning_rate=args.learning_rate, max_leaves=args.max_leaves,
        min_samples_leaf=args.min_samples_leaf, seed=args.seed,
    )
    return PipelineConfig(smote=args.smote, seed=args.seed, train=train_cfg)


def _budget(args) -> SearchBudget | None:
    if args.budget is None:
        return None
    return SearchBudget(args.budget, args.max_trials, args.objective, args.folds, args.seed)


def cmd_train(args) -> int:
    records = _training_records(args.data, args.merge)
    config = _pipeline_config(args)
    result = holdout(records, config, _budget(args), args.test_fraction, args.seed)
    provenance = {
        "data": args.data,
        "seed": args.seed,
        "search_score": result.search_score,
        "train_config": result.classifier.model.config.to_dict(),
        "test_metrics": result.report.scalar_metrics(),
    }
    result.classifier.save(args.out, provenance)
    outdir = _out_dir(args.out)
    write_report(result.report, outdir)
    _emit(result.report.to_text(), args, result.report.to_csv())
    if args.format == "text":
        groups = group_importance(result.classifier.model)
        print("feature-group importance: " + ", ".join(f"{g} {v:.1f}%" for g, v in groups.items()))
    RunManifest("train", sys.argv[1:], config.to_dict(), args.seed, {"data": args.data},
                {"model": args.out, "metrics": str(outdir / "metrics.csv")}).write(outdir)
    return 0


def _read_predictions(path: str) -> tuple[list[str], list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [r["true"] for r in rows], [r["predicted"] for r in rows]


def cmd_eval(args) -> int:
    if args.predictions:
        truth, pred = _read_predictions(args.predictions)
        classes = args.classes.split(",") if args.classes else sorted(set(truth) | set(pred))
        report = build_report(truth, pred, classes)
    else:
        if not (args.model and args.data):
            raise SystemExit(_usage_error(args, "eval needs --model and --data, or --predictions"))
        clf = Classifier.load(args.model)
        records = [r for r in load_dataset(args.data) if r.label is not None]
        report = evaluate(clf, records, provenance={"model": args.model, "data": args.data})
    if args.out:
        write_report(report, args.out)
        RunManifest("eval", sys.argv[1:], {}, None,
                    {"model": args.model, "data": args.data, "predictions": args.predictions},
                    {"dir": args.out}).write(Path(args.out))
    _emit(report.to_text() + ("\n\n" + report.confusion.to_text() if report.confusion else ""), args, report.to_csv())
    return 0


def _usage_error(args, message: str) -> int:
    print(f"repodomain {args.command}: error: {message}", file=sys.stderr)
    return 2


def cmd_classify(args) -> int:
    clf = Classifier.load(args.model)
    with _client(args) as client:
        raw = client.fetch_repo(RepoRef.parse(args.repo))
    record = record_from_raw(raw)
    proba = clf.predict_proba([record])[0]
    best = clf.classes[int(np.argmax(proba))]
    if args.format == "csv":
        print("class,probability")
        for c, p in zip(clf.classes, proba):
            print(f"{c},{p!r}")
    else:
        print(f"{raw.ref}: {best}")
        for c, p in sorted(zip(clf.classes, proba), key=lambda cp: -cp[1]):
            print(f"  {c:<32}{p:.4f}")
        if record.status != "active":
            print(f"  note: repository looks {record.status}")
    return 0


def cmd_ablate(args) -> int:
    records = _training_records(args.data, args.merge)
    config = _pipeline_config(args)
    rows = ablation(records, _budget(args), config, args.test_fraction, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.csv").write_text(ablation_table(rows, "csv"), encoding="utf-8")
    _emit(ablation_table(rows), args, ablation_table(rows, "csv"))
    RunManifest("ablate", sys.argv[1:], config.to_dict(), args.seed, {"data": args.data},
                {"ablation": str(out / "ablation.csv")}).write(out)
    return 0


def cmd_practices(args) -> int:
    clf = Classifier.load(args.model)
    refs = _read_refs(args.repos)
    manifest = RunManifest("practices", sys.argv[1:], {"max_commits": args.max_commits}, None,
                           {"model": args.model, "repos": args.repos}, {"profiles": args.out})
    with _client(args) as client:

        def one(ref):
            try:
                return ref, client.fetch_repo(ref), client.fetch_commits(ref), None
            except (NotFound, TruncatedHistory) as exc:
                return ref, None, None, {"ref": str(ref), "code": exc.code, "error": str(exc)}

        with ThreadPoolExecutor(args.jobs) as pool:
            fetched = list(pool.map(one, refs))
    manifest.failures = [f for *_, f in fetched if f]
    ok = [(ref, raw, commits) for ref, raw, commits, f in fetched if f is None]
    kept, excluded = exclude_outliers([(str(ref), len(c)) for ref, _, c in ok], args.max_commits)
    keep = set(excluded.kept)
    for ref, n in excluded.excluded:
        print(f"excluded {ref}: {n} commits > {args.max_commits}", file=sys.stderr)
    rows = []
    for ref, raw, commits in ok:
        if str(ref) not in keep:
            continue
        domain = clf.predict([record_from_raw(raw)])[0]
        rows.append((str(ref), domain, practice_profile(raw, commits)))
    write_profiles(rows, args.out)
    manifest.config["excluded"] = excluded.excluded
    manifest.write(_out_dir(args.out))
    print(f"wrote {len(rows)} profiles to {args.out}")
    return 0


def _profiles_by_domain(path: str):
    rows = read_profiles(path)
    grouped: dict[str, list] = {}
    for _, domain, p in rows:
        grouped.setdefault(domain, []).append(p)
    return rows, grouped


def cmd_report(args) -> int:
    _, grouped = _profiles_by_domain(args.profiles)
    report = domain_comparison_report(grouped)
    report.write(args.out)
    _emit(report.to_text(), args, report.tests_csv())
    RunManifest("report", sys.argv[1:], {}, None, {"profiles": args.profiles}, {"dir": args.out}).write(Path(args.out))
    return 0


def cmd_tsne(args) -> int:
    rows, _ = _profiles_by_domain(args.profiles)
    X = np.array([p.vector() for _, _, p in rows])
    cfg = TsneConfig(perplexity=args.perplexity, learning_rate=args.learning_rate, iterations=args.iterations, seed=args.seed)
    emb = tsne_project(X, cfg)
    write_tsne_csv([r for r, _, _ in rows], [d for _, d, _ in rows], emb.points, args.out)
    for f in emb.flags:
        print(f"note: {f}", file=sys.stderr)
    print(f"wrote {len(rows)} points to {args.out} (KL {emb.final_kl:.4f})")
    RunManifest("tsne", sys.argv[1:], cfg.__dict__, args.seed, {"profiles": args.profiles}, {"tsne": args.out}).write(_out_dir(args.out))
    return 0


# ---------------------------------------------------------------- parser


def _add_training_flags(p) -> None:
    p.add_argument("--data", required=True, help="labelled dataset (JSON lines)")
    p.add_argument("--budget", type=_budget_seconds, default=None, help="search wall time, e.g. 1000s; omit to skip search")
    p.add_argument("--max-trials", type=int, default=50)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--objective", choices=("macro_f1", "roc_auc_ovr"), default="macro_f1")
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.add_argument("--smote", action="store_true", help="oversample training folds with SMOTE")
    p.add_argument("--merge", action="store_true", help="merge Application and System Software")
    p.add_argument("--rounds", type=int, default=100)
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--max-leaves", type=int, default=31)
    p.add_argument("--min-samples-leaf", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="repodomain", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--format", choices=("text", "csv"), default="text")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def net(p):
        p.add_argument("--cache", default="cache", help="cache directory")
        p.add_argument("--jobs", type=int, default=4)
        p.add_argument("--refresh", action="store_true", help="ignore cached entries")

    p = sub.add_parser("fetch", help="download repository metadata (and commits) into the cache")
    p.add_argument("--repos", required=True, help="file with one owner/name per line")
    p.add_argument("--commits", action="store_true")
    net(p)
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser("build", help="turn cached repositories into a dataset file")
    p.add_argument("--in", dest="input", required=True, help="cache directory")
    p.add_argument("--out", required=True)
    p.add_argument("--labels", help="CSV with ref,label columns")
    p.add_argument("--lexicon", help="deprecation phrases, one per line")
    p.add_argument("--merge", action="store_true")
    p.add_argument("--stats", action="store_true", help="print missing-value and label statistics")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("train", help="fit features and model on a 90/10 split")
    _add_training_flags(p)
    p.add_argument("--out", required=True, help="model bundle path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a model on a labelled dataset, or score a predictions file")
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--predictions", help="CSV with true,predicted columns")
    p.add_argument("--classes", help="comma-separated class order for --predictions")
    p.add_argument("--out", help="directory for metrics.csv and confusion.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("classify", help="predict the domain of one repository")
    p.add_argument("--model", required=True)
    p.add_argument("--repo", required=True)
    net(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("ablate", help="compare the five data-source configurations")
    _add_training_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("practices", help="classify repositories and mine their practice profiles")
    p.add_argument("--model", required=True)
    p.add_argument("--repos", required=True)
    p.add_argument("--out", required=True, help="profiles CSV")
    p.add_argument("--max-commits", type=int, default=200_000)
    net(p)
    p.set_defaults(func=cmd_practices)

    p = sub.add_parser("report", help="per-domain practice tables and hypothesis tests")
    p.add_argument("--profiles", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("tsne", help="2-D t-SNE coordinates of practice profiles")
    p.add_argument("--profiles", required=True)
    p.add_argument("--out", required=True, help="tsne CSV")
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--learning-rate", type=float, default=200.0)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_tsne)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except RepoDomainError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, KeyError) as exc:
        print(f"error[E_INPUT]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
