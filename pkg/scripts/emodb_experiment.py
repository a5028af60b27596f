"""Full EmoDB comparison from user-supplied openSMILE features.

Produces the accuracy comparison for the GA path (LR and SVM columns), the
NN-transform comparison and the per-pair overlap series. Speaker and emotion
come from a manifest when given, otherwise from the EmoDB utterance names.

    python3 scripts/emodb_experiment.py --features emodb.arff --out-dir results/emodb
    python3 scripts/emodb_experiment.py --features emodb.arff --quick   # reduced GA budget
"""

import argparse
import json
import logging
from dataclasses import replace
from pathlib import Path

from emopair.dataset import attach_emodb_metadata, load_features, parse_manifest
from emopair.experiment import compare, emit_report, load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--features", required=True, help="ARFF or CSV feature file")
    ap.add_argument("--manifest", help="CSV with utterance_id,speaker_id,label[,sex]")
    ap.add_argument("--config", default=str(Path(__file__).resolve().parent.parent / "configs" / "emodb.json"))
    ap.add_argument("--out-dir", default="results/emodb")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--quick", action="store_true", help="population 30, 30 generations, stall 10")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")

    ds = load_features(args.features)
    ds = parse_manifest(args.manifest, ds) if args.manifest else attach_emodb_metadata(ds)
    config, classifiers = load_config(args.config)
    config = replace(config, seed=args.seed)
    if args.quick:
        config = replace(config, ga=replace(config.ga, population_size=30, max_generations=30, stall_generations=10))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    selection = compare(config, ds, classifiers or ("lr", "svm"), jobs=args.jobs)
    nn_cfg = replace(config, path="nn-transform", classifier="nn")
    transform = compare(nn_cfg, ds, ("nn",), jobs=args.jobs)
    for name, rep in (("selection", selection), ("transform", transform)):
        for fmt, ext in (("table", "txt"), ("csv", "csv"), ("json", "json")):
            emit_report(rep, fmt, out / f"{name}.{ext}")
        print((out / f"{name}.txt").read_text())
    series = [r for r in selection.overlaps if r["classifier"] == selection.classifiers[0]]
    (out / "overlap_series.json").write_text(
        json.dumps(
            {"schema_version": 1, "config_fingerprint": selection.config_fingerprint, "seed": selection.seed, "series": series},
            indent=1,
        )
        + "\n"
    )


if __name__ == "__main__":
    main()
