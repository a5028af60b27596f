import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emopair.classifiers import TrainConfig
from emopair.dataset import LabelUniverse
from emopair.pairvote import (
    VoteError,
    check_membership,
    classify,
    classify_batch,
    load_ensemble,
    pairwise_verdicts,
    save_ensemble,
    train_ensemble,
    verify_theorem,
    vote_decision,
)
from emopair.synthetic import SynthSpec, make_synthetic


def brute_force_vote(labels, verdicts):
    """Independent restatement: count wins, then walk the top set in label order."""
    wins = {l: sum(1 for w in verdicts.values() if w == l) for l in labels}
    best = max(wins.values())
    tied = [l for l in labels if wins[l] == best]
    champ = tied[0]
    for other in tied[1:]:
        champ = verdicts.get((champ, other), verdicts.get((other, champ)))
    return champ


@st.composite
def verdict_maps(draw, max_m=7):
    M = draw(st.integers(2, max_m))
    labels = tuple(f"L{i}" for i in range(M))
    uni = LabelUniverse(labels)
    bits = draw(st.lists(st.booleans(), min_size=len(uni.pairs()), max_size=len(uni.pairs())))
    return uni, {p: p[int(b)] for p, b in zip(uni.pairs(), bits)}


# --- hand-traced cases ---------------------------------------------------------


def test_single_pair():
    uni = LabelUniverse(("A", "B"))
    tally = vote_decision(uni, {("A", "B"): "A"})
    assert tally.final == "A" and tally.counts == {"A": 1, "B": 0}


def test_three_cycle_competition_trace():
    uni = LabelUniverse(("A", "B", "C"))
    tally = vote_decision(uni, {("A", "B"): "A", ("B", "C"): "B", ("A", "C"): "C"})
    assert tally.counts == {"A": 1, "B": 1, "C": 1}
    assert tally.e_max == ("A", "B", "C")
    assert tally.trace == (("A", "B", "A"), ("A", "C", "C"))
    assert tally.final == "C"


def test_reversed_pair_keys_accepted():
    uni = LabelUniverse(("A", "B", "C"))
    a = vote_decision(uni, {("B", "A"): "A", ("C", "B"): "B", ("C", "A"): "C"})
    assert a.final == "C"


def test_invalid_verdict_maps():
    uni = LabelUniverse(("A", "B", "C"))
    with pytest.raises(VoteError, match="incomplete"):
        vote_decision(uni, {("A", "B"): "A"})
    with pytest.raises(VoteError, match="not a member"):
        vote_decision(uni, {("A", "B"): "C", ("B", "C"): "B", ("A", "C"): "C"})
    with pytest.raises(VoteError, match="more than once"):
        vote_decision(uni, {("A", "B"): "A", ("B", "A"): "B", ("B", "C"): "B", ("A", "C"): "C"})


# --- properties -----------------------------------------------------------------


@settings(max_examples=300, deadline=None)
@given(verdict_maps())
def test_tally_invariants_and_brute_force_agreement(case):
    uni, verdicts = case
    tally = vote_decision(uni, verdicts)
    M = len(uni)
    assert sum(tally.counts.values()) == math.comb(M, 2)
    assert tally.final in tally.e_max
    assert tally.final == brute_force_vote(uni.labels, verdicts)


@settings(max_examples=200, deadline=None)
@given(verdict_maps(), st.randoms(use_true_random=False))
def test_iteration_order_does_not_matter(case, rnd):
    uni, verdicts = case
    items = list(verdicts.items())
    rnd.shuffle(items)
    assert vote_decision(uni, dict(items)) == vote_decision(uni, verdicts)


@settings(max_examples=200, deadline=None)
@given(verdict_maps(), st.randoms(use_true_random=False))
def test_relabeling_equivariance(case, rnd):
    # Renaming labels (keeping universe positions) renames the final label.
    uni, verdicts = case
    names = [f"x{i}" for i in range(len(uni))]
    rnd.shuffle(names)
    rename = dict(zip(uni.labels, names))
    uni2 = LabelUniverse(tuple(rename[l] for l in uni.labels))
    verdicts2 = {(rename[a], rename[b]): rename[w] for (a, b), w in verdicts.items()}
    assert vote_decision(uni2, verdicts2).final == rename[vote_decision(uni, verdicts).final]


@settings(max_examples=200, deadline=None)
@given(verdict_maps(), st.data())
def test_unanimous_pair_winner_is_returned(case, data):
    uni, verdicts = case
    target = data.draw(st.sampled_from(uni.labels))
    for key in uni.pairs():
        if target in key:
            verdicts[key] = target
    assert vote_decision(uni, verdicts).final == target


@pytest.mark.parametrize("M,cases", [(2, 2), (3, 6), (4, 32), (5, 320)])
def test_verify_theorem_case_counts(M, cases):
    rep = verify_theorem(M)
    assert rep.cases == cases == M * 2 ** math.comb(M - 1, 2)
    assert rep.failures == 0


def test_verify_theorem_sampled_and_membership():
    rep = verify_theorem(6, "sampled", trials=200, seed=1)
    assert rep.cases == 6 * 200 and rep.failures == 0
    assert check_membership(4).cases == 2**6 and check_membership(4).failures == 0
    assert check_membership(7, "sampled", trials=2000).failures == 0


def test_verify_theorem_rejects_bad_arguments():
    with pytest.raises(ValueError):
        verify_theorem(1)
    with pytest.raises(ValueError):
        verify_theorem(8)


# --- ensembles -----------------------------------------------------------------


def synth(n_classes, seed=0):
    return make_synthetic(SynthSpec(n_classes=n_classes, per_class=30, noise_dims=4, separation=6.0, seed=seed))


def first_dims(ds):
    k = 3
    return {pair: tuple(range(i * k, (i + 1) * k)) for i, pair in enumerate(ds.universe.pairs())}


def test_ensemble_sizes_and_class_order():
    for M, size in ((2, 1), (7, 21)):
        ds = synth(M)
        ens = train_ensemble(ds, first_dims(ds), "lr", TrainConfig(max_epochs=50))
        assert len(ens) == size
        assert all(pm.model.class_order == key for key, pm in ens.models.items())


def test_missing_subspace_rejected():
    ds = synth(3)
    with pytest.raises(VoteError):
        train_ensemble(ds, {}, "lr")


def test_verdicts_and_batch_classify():
    ds = synth(4)
    ens = train_ensemble(ds, first_dims(ds), "svm", TrainConfig(max_epochs=100))
    x = ds.features[5]
    v = pairwise_verdicts(ens, x)
    assert len(v) == 6 and all(w in key for key, w in v.items())
    assert pairwise_verdicts(ens, x.copy()) == v
    assert classify(ens, x) == vote_decision(ens.universe, v)
    batch = classify_batch(ens, ds.features[:20])
    assert batch == [classify(ens, row) for row in ds.features[:20]]
    acc = np.mean([t.final == l for t, l in zip(classify_batch(ens, ds.features), ds.labels)])
    assert acc >= 0.95


def test_nn_ensemble_has_no_subspace():
    ds = synth(3)
    ens = train_ensemble(ds, None, "nn", TrainConfig(max_epochs=30), hidden_dim=5)
    assert all(pm.subspace is None and pm.model.W1.shape == (ds.n_features, 5) for pm in ens.models.values())


def test_ensemble_persistence_roundtrip(tmp_path):
    ds = synth(4, seed=2)
    ens = train_ensemble(ds, first_dims(ds), "lr", TrainConfig(max_epochs=50))
    save_ensemble(ens, tmp_path / "e", extra={"seed": 3})
    back = load_ensemble(tmp_path / "e")
    assert back.universe == ens.universe
    assert classify_batch(back, ds.features) == classify_batch(ens, ds.features)
    manifest = json.loads((tmp_path / "e" / "manifest.json").read_text())
    assert manifest["schema_version"] == 1 and manifest["seed"] == 3
