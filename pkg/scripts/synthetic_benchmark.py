"""Pairwise voting vs a global multiclass subset on the synthetic benchmark.

Runs ``compare`` (LR path, reduced GA budget) for each master seed, writes the
reports under ``--out-dir`` and prints one summary line per seed.

    python3 scripts/synthetic_benchmark.py --seeds 0 1 2 3 4 --out-dir results/synthetic
"""

import argparse
import logging
import time
from pathlib import Path

from emopair.experiment import ExperimentConfig, compare, emit_report
from emopair.ga import GaConfig
from emopair.synthetic import SynthSpec, make_synthetic


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--out-dir", default="results/synthetic")
    ap.add_argument("--population", type=int, default=30)
    ap.add_argument("--generations", type=int, default=60)
    ap.add_argument("--stall", type=int, default=20)
    ap.add_argument("--genome-size", type=int, default=6)
    ap.add_argument("--tie-break", choices=("index", "loss"), default="index")
    ap.add_argument("--classifiers", nargs="+", default=["lr"])
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ga = GaConfig(
        genome_size=args.genome_size,
        population_size=args.population,
        max_generations=args.generations,
        stall_generations=args.stall,
        tie_break=args.tie_break,
    )
    start = time.perf_counter()
    for seed in args.seeds:
        data = make_synthetic(SynthSpec(seed=seed))
        rep = compare(ExperimentConfig(ga=ga, seed=seed), data, classifiers=args.classifiers, jobs=args.jobs)
        for fmt, ext in (("table", "txt"), ("csv", "csv"), ("json", "json")):
            emit_report(rep, fmt, out / f"seed{seed}.{ext}")
        for kind in args.classifiers:
            bi = rep.runs[("bi-voting", kind)].mean_accuracy
            mc = rep.runs[("multiclass", kind)].mean_accuracy
            t = rep.ttests[kind]
            p = "n/a" if t is None or not t.defined else f"{t.p_value:.4f}"
            print(f"seed {seed} {kind}: bi-voting {bi:.4f}  multiclass {mc:.4f}  gap {bi - mc:+.4f}  p {p}", flush=True)
    print(f"total {time.perf_counter() - start:.0f}s")


if __name__ == "__main__":
    main()
