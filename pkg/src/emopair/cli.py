"""Command-line entry point: ``emopair <command> [flags]``.

Data goes to files or stdout; progress and diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from emopair.dataset import (
    attach_emodb_metadata,
    load_dataset,
    load_features,
    make_speaker_folds,
    parse_manifest,
    restrict,
    save_dataset,
    standardize,
    write_manifest,
)
from emopair.experiment import (
    ExperimentConfig,
    compare,
    emit_report,
    load_config,
    overlap_series,
    pair_name,
    prepare_dataset,
    run_cv,
    single_report,
)
from emopair.ga import FitnessEvaluator, load_genome, run_ga, save_genome
from emopair.pairvote import check_membership, save_ensemble, train_ensemble, verify_theorem
from emopair.seeds import derive_seed, fingerprint
from emopair.synthetic import SynthSpec, make_synthetic

log = logging.getLogger("emopair")

CONFIG_ENV = "EMOPAIR_CONFIG"
SCHEMA_VERSION = 1
FORMATS = ("table", "csv", "json")
SUFFIX = {"table": "txt", "csv": "csv", "json": "json"}


class UsageError(Exception):
    pass


def _config(args):
    """Config from --config, else $EMOPAIR_CONFIG, else defaults; --seed wins."""
    path = args.config or os.environ.get(CONFIG_ENV)
    if path:
        config, classifiers = load_config(path)
    else:
        config, classifiers = ExperimentConfig(), None
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    return config, classifiers


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _fold_data(config, dataset, fold):
    """Training portion for ``fold`` (all data when ``fold`` is None)."""
    data = prepare_dataset(config, dataset)
    if fold is None:
        return data
    plan = make_speaker_folds(data, config.n_folds, derive_seed(config.seed, "folds"))
    if not 0 <= fold < len(plan):
        raise UsageError(f"--fold must be in [0, {len(plan) - 1}]")
    rows, _ = plan.split(data, fold)
    return data.subset(rows)


# ---------------------------------------------------------------------------
# Commands


def cmd_ingest(args):
    ds = load_features(args.features)
    if args.manifest:
        ds = parse_manifest(args.manifest, ds, universe=args.universe)
    elif args.emodb:
        ds = attach_emodb_metadata(ds, universe=args.universe)
    save_dataset(ds, args.out, meta={"source": Path(args.features).name})
    log.info("ingested %d utterances x %d features -> %s (fingerprint %s)", len(ds), ds.n_features, args.out, ds.fingerprint())


def cmd_synth(args):
    spec = SynthSpec(
        n_classes=args.classes,
        per_class=args.per_class,
        noise_dims=args.noise_dims,
        informative_per_pair=args.informative,
        separation=args.separation,
        n_speakers=args.speakers,
        seed=args.seed if args.seed is not None else 0,
    )
    ds = make_synthetic(spec)
    save_dataset(ds, args.out, meta={"synth": fingerprint(spec), "seed": spec.seed})
    if args.manifest_out:
        write_manifest(ds, args.manifest_out)
    log.info("synthetic dataset %s: %d rows x %d features", args.out, len(ds), ds.n_features)


def cmd_select(args):
    config, _ = _config(args)
    ds = load_dataset(args.data)
    train = _fold_data(config, ds, args.fold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kind = config.classifier
    if kind == "nn":
        raise UsageError("feature selection needs classifier lr or svm")
    tag = "all" if args.fold is None else args.fold
    for i, pair in enumerate(train.universe.pairs()):
        pair_std, _, _ = standardize(restrict(train, pair))
        cfg = replace(config.ga, classifier=kind, seed=derive_seed(config.seed, "ga", tag, kind, *pair))
        res = run_ga(pair_std, cfg, FitnessEvaluator(pair_std, cfg))
        save_genome(out / f"pair_{i:02d}.json", res.best, list(pair), cfg, config.seed)
        log.info("pair %s: fitness %.4f after %d generations", pair_name(pair), res.best_fitness, res.generations)
    if not args.pairs_only:
        train_std, _, _ = standardize(train)
        cfg = replace(config.ga, classifier=kind, seed=derive_seed(config.seed, "ga", tag, kind, "global"))
        res = run_ga(train_std, cfg, FitnessEvaluator(train_std, cfg))
        save_genome(out / "global.json", res.best, "global", cfg, config.seed)
        log.info("global: fitness %.4f after %d generations", res.best_fitness, res.generations)


def _read_pair_genomes(directory):
    pairs, glob = {}, None
    for p in sorted(Path(directory).glob("*.json")):
        genome, doc = load_genome(p)
        if doc["provenance"] == "global":
            glob = genome
        else:
            pairs[tuple(doc["provenance"])] = genome
    return pairs, glob


def cmd_train(args):
    config, _ = _config(args)
    ds = prepare_dataset(config, load_dataset(args.data))
    subspaces = None
    if config.classifier != "nn":
        if not args.genomes:
            raise UsageError("--genomes is required for lr/svm (run 'select' first)")
        pairs, _ = _read_pair_genomes(args.genomes)
        subspaces = {k: g.indices for k, g in pairs.items()}
    cfg = replace(config.train, seed=derive_seed(config.seed, "train", "all", config.classifier))
    ens = train_ensemble(ds, subspaces, config.classifier, cfg, config.hidden_dim)
    save_ensemble(ens, args.out, extra={"config_fingerprint": config.fingerprint(), "seed": config.seed})
    log.info("trained %d pair models -> %s", len(ens), args.out)


def _emit(report, formats, out):
    for fmt in formats:
        path = Path(f"{out}.{SUFFIX[fmt]}")
        emit_report(report, fmt, path)
        log.info("wrote %s", path)


def cmd_evaluate(args):
    config, _ = _config(args)
    if args.method:
        config = replace(config, method=args.method)
    if args.classifier:
        config = replace(config, classifier=args.classifier, path="nn-transform" if args.classifier == "nn" else "ga-selection")
    log.info("config %s seed %d", config.fingerprint(), config.seed)
    data = prepare_dataset(config, load_dataset(args.data))
    plan = make_speaker_folds(data, config.n_folds, derive_seed(config.seed, "folds"))
    result = run_cv(config, data, jobs=args.jobs, plan=plan)
    _emit(single_report(config, result, data.universe.labels, plan.to_json()), args.format, args.out)


def cmd_compare(args):
    config, classifiers = _config(args)
    if args.classifiers:
        classifiers = args.classifiers
    report = compare(config, load_dataset(args.data), classifiers, jobs=args.jobs)
    log.info("config %s seed %d", report.config_fingerprint, report.seed)
    _emit(report, args.format, args.out)


def cmd_verify(args):
    seed = args.seed if args.seed is not None else 0
    rep = verify_theorem(args.m, args.mode, trials=args.trials, seed=seed)
    print(rep.summary())
    ok = rep.failures == 0
    if args.membership:
        mem = check_membership(args.m, "exhaustive" if args.m <= 4 else "sampled", trials=args.trials_membership, seed=seed)
        print(f"membership {mem.summary()}")
        ok = ok and mem.failures == 0
    if args.out:
        _write_json(
            args.out,
            {
                "schema_version": SCHEMA_VERSION,
                "config_fingerprint": fingerprint({"m": args.m, "mode": args.mode, "trials": args.trials}),
                "seed": seed,
                "m": rep.M,
                "mode": rep.mode,
                "cases": rep.cases,
                "failures": rep.failures,
                "failing_examples": [{"-".join(k): v for k, v in ex.items()} for ex in rep.failing_examples],
            },
        )
    return 0 if ok else 1


def cmd_overlap(args):
    pairs, glob = _read_pair_genomes(args.genomes)
    if glob is None:
        raise UsageError(f"no global genome in {args.genomes}")
    series = overlap_series({pair_name(k): g for k, g in sorted(pairs.items())}, glob)
    doc_fp = fingerprint({"pairs": {pair_name(k): list(g.indices) for k, g in pairs.items()}, "global": list(glob.indices)})
    if args.out:
        if args.out.endswith(".csv"):
            with open(args.out, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["# schema_version", SCHEMA_VERSION, "config_fingerprint", doc_fp])
                w.writerow(["pair", "count"])
                for rec in series:
                    w.writerow([rec["pair"], rec["count"]])
        else:
            _write_json(args.out, {"schema_version": SCHEMA_VERSION, "config_fingerprint": doc_fp, "seed": None, "series": series})
    for rec in series:
        print(f"{rec['pair']}\t{rec['count']}")


# ---------------------------------------------------------------------------
# Parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    common.add_argument("--jobs", type=int, default=1, help="parallel fold workers; results do not depend on it")
    common.add_argument("--config", default=None, help=f"JSON experiment config (default: ${CONFIG_ENV})")
    common.add_argument("-v", "--verbose", action="count", default=0, help="add per-generation progress lines")

    p = argparse.ArgumentParser(prog="emopair", description="Pairwise emotion recognition experiments.")
    sub = p.add_subparsers(dest="command", metavar="command")

    s = sub.add_parser("ingest", parents=[common], help="parse ARFF/CSV features into a dataset file")
    s.add_argument("--features", required=True)
    s.add_argument("--manifest", help="CSV with utterance_id,speaker_id,label[,sex]")
    s.add_argument("--emodb", action="store_true", help="derive speaker and label from EmoDB utterance names")
    s.add_argument("--universe", nargs="+", help="fixed label order")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("synth", parents=[common], help="generate the synthetic pair-subspace benchmark")
    s.add_argument("--classes", type=int, default=4)
    s.add_argument("--per-class", type=int, default=200)
    s.add_argument("--noise-dims", type=int, default=60)
    s.add_argument("--informative", type=int, default=3, help="informative dimensions per pair")
    s.add_argument("--separation", type=float, default=3.0)
    s.add_argument("--speakers", type=int, default=10)
    s.add_argument("--out", required=True)
    s.add_argument("--manifest-out")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("select", parents=[common], help="GA feature selection per pair and globally")
    s.add_argument("--data", required=True)
    s.add_argument("--fold", type=int, help="select on this fold's training speakers only")
    s.add_argument("--pairs-only", action="store_true")
    s.add_argument("--out", required=True, help="output directory for genome files")
    s.set_defaults(func=cmd_select)

    s = sub.add_parser("train", parents=[common], help="train a pairwise ensemble")
    s.add_argument("--data", required=True)
    s.add_argument("--genomes", help="directory written by 'select'")
    s.add_argument("--out", required=True, help="ensemble directory")
    s.set_defaults(func=cmd_train)

    for name, func, text in (
        ("evaluate", cmd_evaluate, "cross-validate one method"),
        ("compare", cmd_compare, "cross-validate both methods and t-test them"),
    ):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("--data", required=True)
        s.add_argument("--out", required=True, help="output path prefix; one file per format")
        s.add_argument("--format", nargs="+", choices=FORMATS, default=["table", "csv", "json"])
        if name == "evaluate":
            s.add_argument("--method", choices=("bi-voting", "multiclass"))
            s.add_argument("--classifier", choices=("lr", "svm", "nn"))
        else:
            s.add_argument("--classifiers", nargs="+", choices=("lr", "svm", "nn"))
        s.set_defaults(func=func)

    s = sub.add_parser("verify-theorem", parents=[common], help="check that unanimous pair winners are returned")
    s.add_argument("--m", type=int, default=7)
    s.add_argument("--mode", choices=("exhaustive", "sampled"), default="exhaustive")
    s.add_argument("--trials", type=int, default=100_000)
    s.add_argument("--membership", action="store_true", help="also check final label is in E_max")
    s.add_argument("--trials-membership", type=int, default=100_000)
    s.add_argument("--out")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("overlap-report", parents=[common], help="common features between pair and global subsets")
    s.add_argument("--genomes", required=True)
    s.add_argument("--out", help=".json or .csv")
    s.set_defaults(func=cmd_overlap)
    return p


def _module_of(exc):
    mod = type(exc).__module__
    if mod.startswith("emopair."):
        return mod.split(".", 1)[1]
    tb = exc.__traceback__
    name = "cli"
    while tb is not None:
        m = tb.tb_frame.f_globals.get("__name__", "")
        if m.startswith("emopair."):
            name = m.split(".", 1)[1]
        tb = tb.tb_next
    return name


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    level = logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr, format="%(name)s: %(message)s", force=True)
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args) or 0
    except UsageError as exc:
        print(f"emopair {args.command}: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError, KeyError) as exc:
        print(f"{_module_of(exc)}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
