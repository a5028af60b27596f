"""Speaker-independent cross-validation comparing pairwise voting with a global multiclass model."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from emopair.classifiers import TrainConfig, predict_batch, train_classifier, train_nn
from emopair.dataset import DataError, LabelUniverse, make_speaker_folds, restrict, standardize
from emopair.ga import FitnessEvaluator, GaConfig, run_ga, subset_overlap
from emopair.pairvote import classify_batch, train_ensemble
from emopair.seeds import derive_seed, fingerprint
from emopair.stats import paired_t_test

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

METHODS = ("bi-voting", "multiclass")
METHOD_TITLES = {"bi-voting": "Bi-classification and voting", "multiclass": "Multi-classification"}
CLASSIFIER_TITLES = {"lr": "Logistic Regression", "svm": "SVM", "nn": "Neural Network"}


class LeakageError(RuntimeError):
    """A test speaker reached training, inner-validation or fitness data."""


@dataclass(frozen=True)
class ExperimentConfig:
    method: str = "bi-voting"
    path: str = "ga-selection"
    classifier: str = "lr"
    ga: GaConfig = GaConfig()
    train: TrainConfig = TrainConfig()
    n_folds: int = 5
    hidden_dim: int = 50
    exclude_from_report: tuple = ()
    exclude_from_training: tuple = ()
    universe: Optional[tuple] = None
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.ga, dict):
            object.__setattr__(self, "ga", GaConfig(**self.ga))
        if isinstance(self.train, dict):
            object.__setattr__(self, "train", TrainConfig(**self.train))
        for name in ("exclude_from_report", "exclude_from_training"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.universe is not None:
            object.__setattr__(self, "universe", tuple(self.universe))
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.path not in ("ga-selection", "nn-transform"):
            raise ValueError("path must be 'ga-selection' or 'nn-transform'")
        if (self.path == "nn-transform") != (self.classifier == "nn"):
            raise ValueError("the nn-transform path uses the nn classifier and only that path does")
        if self.classifier not in CLASSIFIER_TITLES:
            raise ValueError(f"unknown classifier {self.classifier!r}")

    def fingerprint(self):
        return fingerprint(self)


def load_config(path):
    """Read a JSON config; ``classifiers`` (for compare) is returned separately."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    classifiers = doc.pop("classifiers", None)
    return ExperimentConfig(**doc), classifiers


# ---------------------------------------------------------------------------
# Metrics


def confusion_counts(predictions, universe):
    """``{true: {predicted: count}}`` over all universe labels."""
    table = {t: {p: 0 for p in universe.labels} for t in universe.labels}
    for true, pred in predictions:
        table[true][pred] += 1
    return table


def per_emotion_recall(predictions, universe):
    """Recall per label; ``None`` for labels that never occur as the true label."""
    if not predictions:
        raise ValueError("no predictions")
    table = confusion_counts(predictions, universe)
    out = {}
    for label in universe.labels:
        total = sum(table[label].values())
        out[label] = table[label][label] / total if total else None
    return out


# ---------------------------------------------------------------------------
# Per-fold work


@dataclass
class FoldResult:
    fold: int
    accuracy: float
    predictions: list  # (utterance_id, true, predicted)
    genomes: dict  # pair string or "global" -> indices
    competitions: int
    audit: dict
    seconds: float = 0.0


def pair_name(pair):
    return f"{pair[0]}-{pair[1]}"


def _fold_task(args):
    config, dataset, plan, k = args
    return run_fold(config, dataset, plan, k)


def run_fold(config, dataset, plan, k):
    """Train on the fold's training speakers and score its test speakers."""
    start = time.perf_counter()
    tr_rows, te_rows = plan.split(dataset, k)
    train, test = dataset.subset(tr_rows), dataset.subset(te_rows)
    uni = dataset.universe
    present = set(train.labels)
    for label in uni.labels:
        if label not in present:
            raise DataError(f"fold {k}: class {label!r} has no training utterances")
    test_speakers = frozenset(test.speakers)
    seen = {"train": set(train.speakers), "fitness": set()}
    kind = config.classifier
    train_cfg = replace(config.train, seed=derive_seed(config.seed, "train", k, kind))
    genomes = {}
    competitions = 0

    if config.method == "bi-voting":
        subspaces = None
        if config.path == "ga-selection":
            subspaces = {}
            for pair in uni.pairs():
                pair_std, _, _ = standardize(restrict(train, pair))
                ga_cfg = replace(config.ga, classifier=kind, seed=derive_seed(config.seed, "ga", k, kind, *pair))
                ev = FitnessEvaluator(pair_std, ga_cfg)
                res = run_ga(pair_std, ga_cfg, evaluator=ev)
                seen["fitness"] |= ev.speakers_seen
                subspaces[pair] = res.best.indices
                genomes[pair_name(pair)] = list(res.best.indices)
                log.info("fold %d pair %s: fitness %.4f after %d generations", k, pair_name(pair), res.best_fitness, res.generations)
        ensemble = train_ensemble(train, subspaces, kind, train_cfg, config.hidden_dim)
        tallies = classify_batch(ensemble, test.features)
        predicted = [t.final for t in tallies]
        competitions = sum(1 for t in tallies if len(t.e_max) > 1)
    else:
        train_std, (test_std,), _ = standardize(train, [test])
        if config.path == "ga-selection":
            ga_cfg = replace(config.ga, classifier=kind, seed=derive_seed(config.seed, "ga", k, kind, "global"))
            ev = FitnessEvaluator(train_std, ga_cfg)
            res = run_ga(train_std, ga_cfg, evaluator=ev)
            seen["fitness"] |= ev.speakers_seen
            genomes["global"] = list(res.best.indices)
            log.info("fold %d global: fitness %.4f after %d generations", k, res.best_fitness, res.generations)
            model = train_classifier(kind, train_std.project(res.best.indices), train_cfg)
            predicted, _ = predict_batch(model, test_std.features[:, list(res.best.indices)])
        else:
            model = train_nn(train_std, train_cfg, (train_std.n_features, config.hidden_dim, len(uni)))
            predicted, _ = predict_batch(model, test_std.features)

    leaks = sorted((seen["train"] | seen["fitness"]) & test_speakers)
    audit = {
        "test_speakers": sorted(test_speakers),
        "train_speakers": sorted(seen["train"]),
        "fitness_speakers": sorted(seen["fitness"]),
        "leaked": leaks,
    }
    if leaks:
        raise LeakageError(f"fold {k}: test speakers {leaks} appear in training data")
    accuracy = float(np.mean([p == t for p, t in zip(predicted, test.labels)]))
    preds = [(u, t, p) for u, t, p in zip(test.utterance_ids, test.labels, predicted)]
    return FoldResult(k, accuracy, preds, genomes, competitions, audit, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# Cross-validation


@dataclass
class RunResult:
    method: str
    path: str
    classifier: str
    fold_accuracies: list
    mean_accuracy: float
    pooled_accuracy: float
    recall: dict
    confusion: dict
    flagged: tuple
    folds: list = field(repr=False)

    @property
    def predictions(self):
        return [(t, p) for f in self.folds for _, t, p in f.predictions]


def prepare_dataset(config, dataset):
    """Apply the universe override and training exclusions."""
    if dataset.labels is None or dataset.speakers is None:
        raise DataError("experiments need labels and speakers (attach a manifest)")
    labels = config.universe or dataset.universe.labels
    labels = tuple(l for l in labels if l not in set(config.exclude_from_training))
    keep = [i for i, l in enumerate(dataset.labels) if l in set(labels)]
    sub = dataset.subset(keep)
    return replace(sub, universe=LabelUniverse(labels))


def run_cv(config, dataset, jobs=1, plan=None):
    """Speaker-independent cross-validation of one method/classifier combination."""
    data = prepare_dataset(config, dataset)
    if plan is None:
        plan = make_speaker_folds(data, config.n_folds, derive_seed(config.seed, "folds"))
    tasks = [(config, data, plan, k) for k in range(len(plan))]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            folds = list(pool.map(_fold_task, tasks))
    else:
        folds = [_fold_task(t) for t in tasks]
    for f in folds:
        log.info("%s/%s fold %d: accuracy %.4f (%.1fs)", config.method, config.classifier, f.fold, f.accuracy, f.seconds)
    accs = [f.accuracy for f in folds]
    pairs = [(t, p) for f in folds for _, t, p in f.predictions]
    return RunResult(
        method=config.method,
        path=config.path,
        classifier=config.classifier,
        fold_accuracies=accs,
        mean_accuracy=float(np.mean(accs)),
        pooled_accuracy=float(np.mean([t == p for t, p in pairs])),
        recall=per_emotion_recall(pairs, data.universe),
        confusion=confusion_counts(pairs, data.universe),
        flagged=tuple(l for l in data.universe.labels if l in set(config.exclude_from_report)),
        folds=folds,
    )


@dataclass
class ExperimentReport:
    path: str
    classifiers: tuple
    universe: tuple
    runs: dict  # (method, classifier) -> RunResult
    ttests: dict  # classifier -> TTestResult or None when unavailable
    overlaps: list  # records {classifier, fold, pair, count}
    fold_plan: list
    config_fingerprint: str
    seed: int
    durations: dict = field(default_factory=dict, repr=False)


def compare(config, dataset, classifiers=None, jobs=1):
    """Run both methods for each classifier on the same folds and t-test the fold accuracies."""
    if classifiers is None:
        classifiers = ("nn",) if config.path == "nn-transform" else ("lr", "svm")
    classifiers = tuple(classifiers)
    data = prepare_dataset(config, dataset)
    plan = make_speaker_folds(data, config.n_folds, derive_seed(config.seed, "folds"))
    runs, ttests, overlaps, durations = {}, {}, [], {}
    for kind in classifiers:
        for method in METHODS:
            cfg = replace(config, method=method, classifier=kind)
            t0 = time.perf_counter()
            runs[(method, kind)] = run_cv(cfg, data, jobs=jobs, plan=plan)
            durations[f"{method}/{kind}"] = time.perf_counter() - t0
        a = runs[("bi-voting", kind)].fold_accuracies
        b = runs[("multiclass", kind)].fold_accuracies
        ttests[kind] = paired_t_test(a, b) if len(a) >= 2 else None
        if config.path == "ga-selection":
            for fb, fm in zip(runs[("bi-voting", kind)].folds, runs[("multiclass", kind)].folds):
                glob = fm.genomes["global"]
                for pair in data.universe.pairs():
                    overlaps.append(
                        {
                            "classifier": kind,
                            "fold": fb.fold,
                            "pair": pair_name(pair),
                            "count": subset_overlap(fb.genomes[pair_name(pair)], glob),
                        }
                    )
    fp = fingerprint({"config": config, "classifiers": classifiers})
    return ExperimentReport(
        path=config.path,
        classifiers=classifiers,
        universe=data.universe.labels,
        runs=runs,
        ttests=ttests,
        overlaps=overlaps,
        fold_plan=plan.to_json(),
        config_fingerprint=fp,
        seed=config.seed,
        durations=durations,
    )


def single_report(config, result, universe, fold_plan):
    """Wrap one :class:`RunResult` as a report (the ``evaluate`` command)."""
    return ExperimentReport(
        path=config.path,
        classifiers=(config.classifier,),
        universe=tuple(universe),
        runs={(config.method, config.classifier): result},
        ttests={},
        overlaps=[],
        fold_plan=fold_plan,
        config_fingerprint=config.fingerprint(),
        seed=config.seed,
    )


# ---------------------------------------------------------------------------
# Emission


def _fmt(x, digits=3):
    return "n/a" if x is None else f"{x:.{digits}f}"


def report_to_dict(report):
    runs = []
    for (method, kind), r in report.runs.items():
        runs.append(
            {
                "method": method,
                "classifier": kind,
                "fold_accuracies": r.fold_accuracies,
                "mean_accuracy": r.mean_accuracy,
                "pooled_accuracy": r.pooled_accuracy,
                "recall": r.recall,
                "flagged": list(r.flagged),
                "confusion": r.confusion,
                "competitions": [f.competitions for f in r.folds],
                "genomes": [f.genomes for f in r.folds],
                "audit": [f.audit for f in r.folds],
            }
        )
    ttests = {
        k: (None if t is None else {
            "statistic": t.statistic,
            "p_value": t.p_value,
            "significant": t.significant,
            "defined": t.defined,
            "n": t.n,
            "mean_difference": t.mean_difference,
        })
        for k, t in report.ttests.items()
    }
    return {
        "schema_version": SCHEMA_VERSION,
        "config_fingerprint": report.config_fingerprint,
        "seed": report.seed,
        "path": report.path,
        "classifiers": list(report.classifiers),
        "universe": list(report.universe),
        "fold_plan": report.fold_plan,
        "runs": runs,
        "ttests": ttests,
        "overlaps": report.overlaps,
    }


def format_table(report):
    cols = list(report.classifiers)
    head = [""] + [CLASSIFIER_TITLES[c] for c in cols]
    rows = [head]
    for method in METHODS:
        if any((method, c) in report.runs for c in cols):
            rows.append(
                [METHOD_TITLES[method]]
                + [_fmt(report.runs[(method, c)].mean_accuracy) if (method, c) in report.runs else "-" for c in cols]
            )
    if report.ttests:
        cells = []
        for c in cols:
            t = report.ttests.get(c)
            if t is None:
                cells.append("unavailable")
            elif not t.defined:
                cells.append("undefined (zero variance)")
            else:
                cells.append(f"t={t.statistic:.3f} p={t.p_value:.4f}{' *' if t.significant else ''}")
        rows.append(["Paired t-test (two-sided)"] + cells)
    widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
    line = lambda r: " | ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip()
    out = [
        f"Recognition accuracy, mean over {len(report.fold_plan)} speaker folds (path: {report.path})",
        f"schema_version={SCHEMA_VERSION} config={report.config_fingerprint} seed={report.seed}",
        "",
        line(rows[0]),
        "-+-".join("-" * w for w in widths),
    ]
    out += [line(r) for r in rows[1:]]
    out += ["", "Per-emotion recall"]
    for (method, kind), r in report.runs.items():
        cells = []
        for label in report.universe:
            mark = " (flagged)" if label in r.flagged else ""
            cells.append(f"{label}={_fmt(r.recall[label])}{mark}")
        out.append(f"  {METHOD_TITLES[method]} / {CLASSIFIER_TITLES[kind]}: " + ", ".join(cells))
    if report.overlaps:
        out += ["", "Common features between each pair subset and the global subset (per fold)"]
        for rec in report.overlaps:
            out.append(f"  {rec['classifier']} fold {rec['fold']} {rec['pair']}: {rec['count']}")
    return "\n".join(out) + "\n"


def report_rows(report):
    """Flat ``(scope, name, value)`` records, one metric per row."""
    rows = [
        ("meta", "schema_version", SCHEMA_VERSION),
        ("meta", "config_fingerprint", report.config_fingerprint),
        ("meta", "seed", report.seed),
    ]
    for (method, kind), r in report.runs.items():
        scope = f"{method}/{kind}"
        for i, a in enumerate(r.fold_accuracies):
            rows.append((scope, f"fold{i}_accuracy", a))
        rows.append((scope, "mean_accuracy", r.mean_accuracy))
        rows.append((scope, "pooled_accuracy", r.pooled_accuracy))
        for label in report.universe:
            rows.append((scope, f"recall/{label}", r.recall[label]))
        for label in r.flagged:
            rows.append((scope, f"flagged/{label}", 1))
    for kind, t in report.ttests.items():
        scope = f"ttest/{kind}"
        if t is None:
            rows.append((scope, "available", 0))
            continue
        rows += [
            (scope, "statistic", t.statistic),
            (scope, "p_value", t.p_value),
            (scope, "significant", int(t.significant)),
            (scope, "defined", int(t.defined)),
        ]
    for rec in report.overlaps:
        rows.append((f"overlap/{rec['classifier']}/fold{rec['fold']}", rec["pair"], rec["count"]))
    return rows


def _csv_value(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_report(report, fmt, path):
    """Write ``report`` as ``table``, ``csv`` or ``json``; output is byte-stable."""
    if fmt == "table":
        text = format_table(report)
    elif fmt == "json":
        text = json.dumps(report_to_dict(report), indent=1, sort_keys=True) + "\n"
    elif fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scope", "name", "value"])
        for scope, name, value in report_rows(report):
            w.writerow([scope, name, _csv_value(value)])
        text = buf.getvalue()
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    path = Path(path)
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
    return path


def parse_report_csv(path):
    """Read an emitted CSV back as ``{(scope, name): value}`` with numbers parsed."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            v = rec["value"]
            if v == "":
                value = None
            else:
                try:
                    value = int(v)
                except ValueError:
                    try:
                        value = float(v)
                    except ValueError:
                        value = v
            out[(rec["scope"], rec["name"])] = value
    return out


def overlap_series(pair_genomes, global_genome):
    """Common-feature count of each pair subset with the global subset."""
    return [
        {"pair": name, "count": subset_overlap(g, global_genome)} for name, g in pair_genomes.items()
    ]
