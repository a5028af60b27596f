"""Monte Carlo accuracy ceilings for the synthetic pair-subspace benchmark.

With isotropic unit-variance noise and equal priors the nearest-mean rule is
Bayes-optimal on any fixed set of columns. A single global subset of ``G``
columns is scored for every way of spreading ``G`` columns over the pair
blocks (extra columns beyond a block's informative ones are pure noise and
cannot help). The best of these is the ceiling for any multiclass model
restricted to ``G`` columns; pairwise voting can at most reach 1.0, so the
largest possible gap is ``1 - ceiling``.

    python3 scripts/benchmark_bound.py --samples 40000
"""

import argparse
import itertools

import numpy as np

from emopair.dataset import LabelUniverse
from emopair.pairvote import vote_decision


def class_means(M, k, sep):
    pairs = list(itertools.combinations(range(M), 2))
    means = np.zeros((M, len(pairs) * k))
    for i, (a, b) in enumerate(pairs):
        means[a, i * k:(i + 1) * k] = sep / 2
        means[b, i * k:(i + 1) * k] = -sep / 2
    return pairs, means


def nearest_mean_accuracy(X, y, means):
    d = ((X[:, None, :] - means[None]) ** 2).sum(-1)
    return float(np.mean(d.argmin(1) == y))


def multiclass_ceiling(M, k, sep, G, n, rng):
    pairs, means = class_means(M, k, sep)
    y = rng.integers(0, M, n)
    X = means[y] + rng.standard_normal((n, means.shape[1]))
    best = (0.0, None)
    for counts in itertools.product(range(k + 1), repeat=len(pairs)):
        if sum(counts) > G:
            continue
        cols = [i * k + j for i, c in enumerate(counts) for j in range(c)]
        if not cols:
            continue
        acc = nearest_mean_accuracy(X[:, cols], y, means[:, cols])
        if acc > best[0]:
            best = (acc, counts)
    return best


def voting_reference(M, k, sep, G, n, rng):
    """Voting with each pair using its own block plus one column of neighbouring pairs."""
    pairs, means = class_means(M, k, sep)
    y = rng.integers(0, M, n)
    X = means[y] + rng.standard_normal((n, means.shape[1]))
    uni = LabelUniverse(tuple(str(c) for c in range(M)))
    verdicts = {}
    for i, (a, b) in enumerate(pairs):
        cols = list(range(i * k, (i + 1) * k))
        cols += [j * k for j, q in enumerate(pairs) if j != i and (a in q or b in q)][: G - k]
        da = ((X[:, cols] - means[a, cols]) ** 2).sum(1)
        db = ((X[:, cols] - means[b, cols]) ** 2).sum(1)
        verdicts[(str(a), str(b))] = np.where(da <= db, str(a), str(b))
    pred = [vote_decision(uni, {key: v[r] for key, v in verdicts.items()}).final for r in range(n)]
    return float(np.mean(np.array(pred) == y.astype(str)))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--classes", type=int, default=4)
    ap.add_argument("--informative", type=int, default=3)
    ap.add_argument("--separation", type=float, default=3.0)
    ap.add_argument("--genome-size", type=int, default=6)
    ap.add_argument("--samples", type=int, default=40000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    acc, counts = multiclass_ceiling(args.classes, args.informative, args.separation, args.genome_size, args.samples, rng)
    vote = voting_reference(args.classes, args.informative, args.separation, args.genome_size, args.samples, rng)
    se = (acc * (1 - acc) / args.samples) ** 0.5
    print(f"multiclass ceiling with G={args.genome_size}: {acc:.4f} (+/- {2 * se:.4f}), columns per pair block {counts}")
    print(f"pairwise voting, nearest-mean pair rules: {vote:.4f}")
    print(f"largest possible gap (voting at 1.0): {1 - acc:.4f}; gap at the reference voting rule: {vote - acc:.4f}")


if __name__ == "__main__":
    main()
