"""Gaussian benchmark data with pair-specific informative dimensions."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Optional

import numpy as np

from emopair.dataset import DataError, Dataset, LabelUniverse


@dataclass(frozen=True)
class SynthSpec:
    n_classes: int = 4
    per_class: int = 200
    noise_dims: int = 60
    informative_per_pair: int = 3
    separation: float = 3.0
    n_speakers: int = 10
    seed: int = 0
    # Explicit {(class_i, class_j): [dims]} overrides informative_per_pair.
    informative: Optional[dict] = None

    def __post_init__(self):
        if self.n_classes < 2:
            raise DataError("need at least 2 classes")
        if self.separation < 0:
            raise DataError("separation must be >= 0")
        if self.per_class < 1 or self.n_speakers < 1:
            raise DataError("per_class and n_speakers must be >= 1")


def informative_layout(spec):
    """Map each class-index pair to its informative columns."""
    if spec.informative is not None:
        layout = {tuple(sorted(k)): tuple(int(d) for d in v) for k, v in spec.informative.items()}
        used = {}
        for pair, dims in layout.items():
            for d in dims:
                if d in used:
                    raise DataError(f"informative dimension {d} shared by pairs {used[d]} and {pair}")
                used[d] = pair
        return layout
    k = spec.informative_per_pair
    return {
        pair: tuple(range(i * k, (i + 1) * k))
        for i, pair in enumerate(combinations(range(spec.n_classes), 2))
    }


def make_synthetic(spec):
    """Sample a labelled dataset with speakers assigned round-robin.

    Columns start with the informative blocks (in pair order) followed by the
    noise dimensions. On a pair's block the two classes of that pair have
    means ``+separation/2`` and ``-separation/2``; every other class and every
    noise column is standard normal. Even-numbered speakers are tagged male.
    """
    layout = informative_layout(spec)
    n_inf = 1 + max((d for dims in layout.values() for d in dims), default=-1)
    D = n_inf + spec.noise_dims
    if D < 1:
        raise DataError("dataset would have no feature columns")
    rng = np.random.default_rng(spec.seed)
    M, n = spec.n_classes, spec.per_class
    means = np.zeros((M, D))
    half = spec.separation / 2.0
    for (a, b), dims in layout.items():
        means[a, list(dims)] = half
        means[b, list(dims)] = -half
    y = np.repeat(np.arange(M), n)
    X = rng.standard_normal((M * n, D)) + means[y]
    width = len(str(spec.n_speakers - 1))
    speakers = [f"s{(i % n) % spec.n_speakers:0{width}d}" for i in range(M * n)]
    labels = [f"c{k}" for k in range(M)]
    sex = {f"s{s:0{width}d}": ("M" if s % 2 == 0 else "F") for s in range(min(spec.n_speakers, n))}
    return Dataset(
        utterance_ids=[f"u{i:05d}" for i in range(M * n)],
        features=X,
        labels=[labels[k] for k in y],
        speakers=speakers,
        feature_names=[f"inf{d}" for d in range(n_inf)] + [f"noise{d}" for d in range(spec.noise_dims)],
        universe=LabelUniverse(tuple(labels)),
        speaker_sex=sex,
    )
