"""Pairwise ensembles and the voting-and-competition decision rule.

Each unordered label pair gets its own bi-classifier. A final label is picked
by counting pairwise wins; when several labels share the top count they
compete in universe order, the current champion being replaced by the
pair verdict against each next contender.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from emopair.classifiers import (
    TrainConfig,
    model_from_json,
    model_to_json,
    predict_batch,
    train_logistic,
    train_nn,
    train_svm,
)
from emopair.dataset import DataError, LabelUniverse, restrict, standardize
from emopair.seeds import derive_seed

SCHEMA_VERSION = 1


class VoteError(ValueError):
    pass


@dataclass(frozen=True)
class PairModel:
    key: tuple  # canonical (label_a, label_b)
    model: object  # LinearModel or NnModel
    scaler: object
    subspace: Optional[tuple] = None  # feature indices; None means the full input

    def __post_init__(self):
        if tuple(self.model.class_order) != tuple(self.key):
            raise VoteError(f"model class order {self.model.class_order} != pair {self.key}")
        width = len(self.subspace) if self.subspace is not None else len(self.scaler.mean)
        if width != self.model.input_dim:
            raise VoteError(f"subspace width {width} != model input {self.model.input_dim}")

    def predict_rows(self, X):
        Z = self.scaler.transform(X)
        if self.subspace is not None:
            Z = Z[:, list(self.subspace)]
        labels, _ = predict_batch(self.model, Z)
        return labels


@dataclass(frozen=True)
class PairwiseEnsemble:
    universe: LabelUniverse
    models: dict  # canonical pair -> PairModel
    n_features: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = set(self.universe.pairs())
        got = set(self.models)
        if got != expected:
            raise VoteError(
                f"ensemble must cover every pair exactly once; missing {sorted(expected - got)}, "
                f"extra {sorted(got - expected)}"
            )

    def __len__(self):
        return len(self.models)


@dataclass(frozen=True)
class VoteTally:
    counts: dict  # label -> number of pairs won
    e_max: tuple  # labels tied at the top count, in universe order
    trace: tuple  # (champion, challenger, winner) per competition step
    final: str


# ---------------------------------------------------------------------------
# Training


def train_ensemble(dataset, subspaces, kind, config=TrainConfig(), hidden_dim=50):
    """Train one bi-classifier per label pair of ``dataset.universe``.

    For ``kind`` in ``lr``/``svm``, ``subspaces`` maps each canonical pair to a
    genome (feature indices). For ``nn`` the per-pair network is the transform
    and the classifier at once, and ``subspaces`` may be ``None``.
    """
    uni = dataset.universe
    if uni is None:
        raise DataError("training data has no labels")
    present = set(dataset.labels)
    models = {}
    for key in uni.pairs():
        missing = [l for l in key if l not in present]
        if missing:
            raise VoteError(f"pair {key}: no training rows for {missing}")
        pair_data = restrict(dataset, key)
        pair_std, _, scaler = standardize(pair_data)
        pair_cfg = TrainConfig(
            config.learning_rate, config.max_epochs, config.tolerance, config.l2,
            derive_seed(config.seed, "pair", *key),
        )
        if kind == "nn":
            model = train_nn(pair_std, pair_cfg, (pair_std.n_features, hidden_dim, 2))
            subspace = None
        else:
            if subspaces is None or key not in subspaces:
                raise VoteError(f"no subspace given for pair {key}")
            subspace = tuple(int(i) for i in subspaces[key])
            trainer = train_logistic if kind == "lr" else train_svm
            model = trainer(pair_std.project(subspace), pair_cfg)
        models[key] = PairModel(key, model, scaler, subspace)
    return PairwiseEnsemble(uni, models, dataset.n_features, {"kind": kind, "seed": config.seed})


# ---------------------------------------------------------------------------
# Verdicts and voting


def pairwise_verdicts_batch(ensemble, X):
    """Per-pair predicted labels for every row of ``X``: ``{pair: [label, ...]}``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != ensemble.n_features:
        raise DataError(f"ensemble expects {ensemble.n_features} features, got {X.shape[1]}")
    return {key: pm.predict_rows(X) for key, pm in ensemble.models.items()}


def pairwise_verdicts(ensemble, features):
    batch = pairwise_verdicts_batch(ensemble, np.asarray(features, dtype=np.float64)[None, :])
    return {key: labels[0] for key, labels in batch.items()}


def _canonical_verdicts(universe, verdicts):
    out = {}
    for (a, b), winner in verdicts.items():
        key = universe.canonical_pair(a, b)
        if key in out:
            raise VoteError(f"pair {key} given more than once")
        if winner != a and winner != b:
            raise VoteError(f"verdict {winner!r} is not a member of pair {key}")
        out[key] = winner
    if len(out) != len(universe) * (len(universe) - 1) // 2:
        missing = sorted(set(universe.pairs()) - set(out))
        raise VoteError(f"verdict map incomplete; missing pairs {missing}")
    return out


def vote_decision(universe, verdicts):
    """Fuse pair verdicts into one label by vote counting plus competition."""
    r = _canonical_verdicts(universe, verdicts)
    counts = dict.fromkeys(universe.labels, 0)
    for winner in r.values():
        counts[winner] += 1
    top = max(counts.values())
    e_max = tuple(l for l in universe.labels if counts[l] == top)
    champion = e_max[0]
    trace = []
    for challenger in e_max[1:]:
        winner = r[universe.canonical_pair(champion, challenger)]
        trace.append((champion, challenger, winner))
        champion = winner
    return VoteTally(counts, e_max, tuple(trace), champion)


def classify(ensemble, features):
    return vote_decision(ensemble.universe, pairwise_verdicts(ensemble, features))


def classify_batch(ensemble, X):
    batch = pairwise_verdicts_batch(ensemble, X)
    n = np.atleast_2d(X).shape[0]
    return [vote_decision(ensemble.universe, {k: v[i] for k, v in batch.items()}) for i in range(n)]


# ---------------------------------------------------------------------------
# Exhaustive / sampled verification of the all-correct guarantee


@dataclass(frozen=True)
class VerificationReport:
    M: int
    mode: str
    cases: int
    failures: int
    failing_examples: tuple = ()

    def summary(self):
        return f"M={self.M} {self.mode}: {self.cases} cases, {self.failures} failures"


def _labels(M):
    return LabelUniverse(tuple(f"e{i}" for i in range(M)))


def verify_theorem(M, mode="exhaustive", trials=1000, seed=0):
    """Check that a label winning all its pairs is always returned.

    For every target label, its ``M - 1`` pairs are fixed to the target and
    the remaining pairs are assigned exhaustively (``2 ** C(M-1, 2)``
    assignments) or ``trials`` times at random.
    """
    if M < 2:
        raise ValueError("M must be >= 2")
    if mode == "exhaustive" and M > 7:
        raise ValueError("exhaustive mode supports M <= 7")
    uni = _labels(M)
    rng = np.random.default_rng(seed)
    cases = failures = 0
    bad = []
    for target in uni.labels:
        fixed = {key: target for key in uni.pairs() if target in key}
        free = [key for key in uni.pairs() if target not in key]
        if mode == "exhaustive":
            assignments = itertools.product((0, 1), repeat=len(free))
        elif mode == "sampled":
            assignments = (rng.integers(0, 2, size=len(free)) for _ in range(trials))
        else:
            raise ValueError(f"unknown mode {mode!r}")
        for bits in assignments:
            verdicts = dict(fixed)
            verdicts.update({key: key[b] for key, b in zip(free, bits)})
            cases += 1
            if vote_decision(uni, verdicts).final != target:
                failures += 1
                if len(bad) < 10:
                    bad.append(verdicts)
    return VerificationReport(M, mode, cases, failures, tuple(bad))


def check_membership(M, mode="exhaustive", trials=100_000, seed=0):
    """Count verdict maps whose final label falls outside the top-count set."""
    uni = _labels(M)
    pairs = uni.pairs()
    if mode == "exhaustive":
        assignments = itertools.product((0, 1), repeat=len(pairs))
    else:
        rng = np.random.default_rng(seed)
        table = rng.integers(0, 2, size=(trials, len(pairs)))
        assignments = iter(table)
    cases = failures = 0
    for bits in assignments:
        tally = vote_decision(uni, {key: key[b] for key, b in zip(pairs, bits)})
        cases += 1
        if tally.final not in tally.e_max or sum(tally.counts.values()) != len(pairs):
            failures += 1
    return VerificationReport(M, mode, cases, failures)


# ---------------------------------------------------------------------------
# Persistence


def _pair_filename(i, key):
    safe = lambda s: "".join(ch if ch.isalnum() else "_" for ch in s)
    return f"pair_{i:02d}_{safe(key[0])}__{safe(key[1])}.json"


def save_ensemble(ensemble, directory, extra=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, key in enumerate(ensemble.universe.pairs()):
        pm = ensemble.models[key]
        name = _pair_filename(i, key)
        doc = model_to_json(pm.model, pm.scaler, pm.subspace)
        doc["pair"] = list(key)
        (directory / name).write_text(json.dumps(doc) + "\n", encoding="utf-8")
        entries.append({"pair": list(key), "file": name})
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "universe": list(ensemble.universe.labels),
        "n_features": ensemble.n_features,
        "pairs": entries,
        "metadata": ensemble.metadata,
        **(extra or {}),
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_ensemble(directory):
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"unsupported ensemble schema_version {manifest.get('schema_version')}")
    uni = LabelUniverse(tuple(manifest["universe"]))
    models = {}
    for entry in manifest["pairs"]:
        key = tuple(entry["pair"])
        doc = json.loads((directory / entry["file"]).read_text(encoding="utf-8"))
        model, scaler, subspace = model_from_json(doc)
        models[key] = PairModel(key, model, scaler, None if subspace is None else tuple(subspace))
    return PairwiseEnsemble(uni, models, manifest["n_features"], manifest.get("metadata", {}))
