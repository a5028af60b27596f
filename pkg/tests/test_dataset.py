import itertools
import textwrap

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emopair.dataset import (
    DataError,
    Dataset,
    LabelUniverse,
    attach_emodb_metadata,
    fit_scaler,
    load_dataset,
    make_speaker_folds,
    parse_arff,
    parse_csv,
    parse_emodb_name,
    parse_manifest,
    restrict,
    save_dataset,
    standardize,
    write_manifest,
)

EMOTIONS = ("neutral", "anger", "boredom", "happiness", "sadness", "disgust", "fear")


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text).lstrip())
    return p


def small_dataset(n=42, d=3, speakers=10, labels=EMOTIONS, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(
        utterance_ids=[f"u{i}" for i in range(n)],
        features=rng.normal(size=(n, d)),
        labels=[labels[i % len(labels)] for i in range(n)],
        speakers=[f"s{i % speakers:02d}" for i in range(n)],
        universe=LabelUniverse(labels),
    )


# --- ARFF -------------------------------------------------------------------


def test_arff_small_roundtrip(tmp_path):
    p = write(
        tmp_path,
        "tiny.arff",
        """
        @relation tiny
        % a comment
        @attribute name string
        @attribute f1 numeric
        @attribute f2 real
        @attribute f3 numeric
        @attribute class {anger,neutral}

        @data
        'a1',1.5,-2,3e-1,anger
        'a2',4,5.25,6,neutral
        """,
    )
    ds = parse_arff(p)
    assert ds.utterance_ids == ("a1", "a2")
    assert ds.feature_names == ("f1", "f2", "f3")
    np.testing.assert_array_equal(ds.features, [[1.5, -2.0, 0.3], [4.0, 5.25, 6.0]])
    assert ds.labels == ("anger", "neutral")
    assert ds.universe.labels == ("anger", "neutral")


def test_arff_opensmile_sized(tmp_path):
    # 988 numeric attributes and 535 rows, the size of the EmoDB feature set.
    rng = np.random.default_rng(1)
    X = rng.normal(size=(535, 988))
    lines = ["@relation openSMILE_features", "@attribute name string"]
    lines += [f"@attribute f{i} numeric" for i in range(988)]
    lines += ["@attribute class {W,N}", "@data"]
    for r in range(535):
        lines.append(f"'u{r}'," + ",".join(repr(float(v)) for v in X[r]) + ("," + ("W" if r % 2 else "N")))
    p = tmp_path / "big.arff"
    p.write_text("\n".join(lines) + "\n")
    ds = parse_arff(p)
    assert ds.features.shape == (535, 988)
    np.testing.assert_array_equal(ds.features, X)


def test_arff_empty_data(tmp_path):
    p = write(tmp_path, "e.arff", "@relation e\n@attribute a numeric\n@data\n")
    with pytest.raises(DataError, match="empty"):
        parse_arff(p)


def test_arff_bad_header_reports_line(tmp_path):
    p = write(tmp_path, "b.arff", "@relation b\n@attribute a numeric\n@attribute\n@data\n1\n")
    with pytest.raises(DataError, match=r":3:"):
        parse_arff(p)


def test_arff_row_arity(tmp_path):
    p = write(tmp_path, "r.arff", "@relation r\n@attribute a numeric\n@attribute b numeric\n@data\n1,2\n3\n")
    with pytest.raises(DataError, match="row 2"):
        parse_arff(p)


@pytest.mark.parametrize("token", ["nan", "inf", "?"])
def test_arff_non_finite_rejected(tmp_path, token):
    p = write(tmp_path, "n.arff", f"@relation n\n@attribute a numeric\n@data\n1\n{token}\n")
    with pytest.raises(DataError):
        parse_arff(p)


def test_csv_features(tmp_path):
    p = write(tmp_path, "f.csv", "utterance_id,x,y\nu1,1,2\nu2,3,4\n")
    ds = parse_csv(p)
    assert ds.utterance_ids == ("u1", "u2")
    np.testing.assert_array_equal(ds.features, [[1, 2], [3, 4]])


# --- manifest ---------------------------------------------------------------


def test_manifest_ten_speakers(tmp_path):
    ds = small_dataset(n=535)
    stripped = Dataset(ds.utterance_ids, ds.features)
    write_manifest(ds, tmp_path / "m.csv")
    out = parse_manifest(tmp_path / "m.csv", stripped)
    assert len(set(out.speakers)) == 10
    assert out.labels == ds.labels


def test_manifest_row_count_mismatch(tmp_path):
    ds = Dataset(["a", "b", "c"], np.zeros((3, 1)))
    write(tmp_path, "m.csv", "utterance_id,speaker_id,label\na,s1,x\nb,s2,y\n")
    with pytest.raises(DataError, match="2 rows"):
        parse_manifest(tmp_path / "m.csv", ds)


def test_manifest_missing_and_duplicate_ids(tmp_path):
    ds = Dataset(["a", "b"], np.zeros((2, 1)))
    write(tmp_path, "m.csv", "utterance_id,speaker_id,label\na,s1,x\na,s2,y\n")
    with pytest.raises(DataError, match="duplicate"):
        parse_manifest(tmp_path / "m.csv", ds)
    write(tmp_path, "m2.csv", "utterance_id,speaker_id,label\na,s1,x\nz,s2,y\n")
    with pytest.raises(DataError, match="'b'"):
        parse_manifest(tmp_path / "m2.csv", ds)


def test_manifest_fixed_universe_rejects_unknown(tmp_path):
    ds = Dataset(["a", "b"], np.zeros((2, 1)))
    write(tmp_path, "m.csv", "utterance_id,speaker_id,label\na,s1,x\nb,s2,q\n")
    with pytest.raises(DataError, match="q"):
        parse_manifest(tmp_path / "m.csv", ds, universe=("x", "y"))


def test_emodb_filename_code():
    assert parse_emodb_name("03a01Wa") == ("03", "anger", "M")
    assert parse_emodb_name("16b10Td.wav") == ("16", "sadness", "F")
    with pytest.raises(DataError):
        parse_emodb_name("hello")


def test_emodb_attach():
    ds = Dataset(["03a01Wa", "08a02Nb"], np.zeros((2, 1)))
    out = attach_emodb_metadata(ds)
    assert out.speakers == ("03", "08")
    assert out.labels == ("anger", "neutral")
    assert out.speaker_sex == {"03": "M", "08": "F"}


# --- folds ------------------------------------------------------------------


def test_folds_one_male_one_female():
    ds = small_dataset(n=100)
    sex = {f"s{i:02d}": ("M" if i < 5 else "F") for i in range(10)}
    ds = Dataset(ds.utterance_ids, ds.features, ds.labels, ds.speakers, universe=ds.universe, speaker_sex=sex)
    plan = make_speaker_folds(ds, 5, seed=3)
    assert len(plan) == 5
    for train, test in plan:
        assert len(test) == 2 and len(train) == 8
        assert sorted(sex[s] for s in test) == ["F", "M"]


def test_folds_two_speakers():
    ds = small_dataset(n=14, speakers=2)
    plan = make_speaker_folds(ds, 2, seed=0)
    assert [len(t) for _, t in plan] == [1, 1]


def test_folds_too_few_speakers():
    with pytest.raises(DataError):
        make_speaker_folds(small_dataset(n=14, speakers=3), 5)


@settings(max_examples=40, deadline=None)
@given(n_speakers=st.integers(2, 15), n_folds=st.integers(2, 6), seed=st.integers(0, 2**32))
def test_fold_plan_partitions_speakers(n_speakers, n_folds, seed):
    if n_folds > n_speakers:
        return
    ds = small_dataset(n=3 * n_speakers, speakers=n_speakers)
    plan = make_speaker_folds(ds, n_folds, seed)
    tests = [t for _, t in plan]
    assert frozenset().union(*tests) == ds.speaker_set()
    for a, b in itertools.combinations(tests, 2):
        assert not a & b
    for k, (train, test) in enumerate(plan):
        tr, te = plan.split(ds, k)
        assert not {ds.speakers[i] for i in tr} & test
        assert {ds.speakers[i] for i in te} <= test
    assert make_speaker_folds(ds, n_folds, seed) == plan


# --- scaling ----------------------------------------------------------------


def test_standardize_two_values():
    ds = Dataset(["a", "b"], [[2.0], [4.0]])
    std, _, scaler = standardize(ds)
    np.testing.assert_array_equal(std.features[:, 0], [-1.0, 1.0])
    assert scaler.mean[0] == 3.0


def test_standardize_constant_column():
    ds = Dataset(["a", "b", "c"], [[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]])
    std, (other,), _ = standardize(ds, [Dataset(["d"], [[7.0, 2.0]])])
    assert np.all(std.features[:, 0] == 0.0)
    assert other.features[0, 0] == 0.0


def test_stored_scaler_reproduces_train():
    ds = small_dataset()
    std, _, scaler = standardize(ds)
    np.testing.assert_array_equal(scaler.apply(ds).features, std.features)


def test_standardize_idempotent():
    std, _, _ = standardize(small_dataset(d=6))
    again, _, _ = standardize(std)
    np.testing.assert_allclose(again.features, std.features, atol=1e-12, rtol=0)
    np.testing.assert_allclose(fit_scaler(std.features).mean, 0.0, atol=1e-12)


# --- restrict ---------------------------------------------------------------


def test_restrict_pair():
    ds = small_dataset()
    sub = restrict(ds, ("neutral", "anger"))
    assert set(sub.labels) == {"neutral", "anger"}
    assert sub.universe.labels == ("neutral", "anger")


def test_restrict_same_label():
    with pytest.raises(DataError):
        restrict(small_dataset(), ("anger", "anger"))


def test_restrict_row_count_sum():
    ds = small_dataset(n=100)
    total = sum(len(restrict(ds, p)) for p in ds.universe.pairs())
    assert len(ds.universe.pairs()) == 21
    assert total == 6 * len(ds)


def test_restrict_order_invariant():
    ds = small_dataset()
    a = restrict(ds, ("fear", "anger"))
    b = restrict(ds, ("anger", "fear"))
    assert set(a.utterance_ids) == set(b.utterance_ids)


# --- persistence ------------------------------------------------------------


def test_dataset_json_roundtrip_bit_exact(tmp_path):
    ds = small_dataset(d=7)
    X = ds.features.copy()
    X[0, 0] = 0.1 + 0.2
    X[1, 1] = 1e-310
    ds = Dataset(ds.utterance_ids, X, ds.labels, ds.speakers, universe=ds.universe)
    save_dataset(ds, tmp_path / "d.json")
    back = load_dataset(tmp_path / "d.json")
    assert back.features.tobytes() == ds.features.tobytes()
    assert back.labels == ds.labels and back.speakers == ds.speakers
    assert back.universe == ds.universe


def test_dataset_invariants():
    with pytest.raises(DataError, match="duplicate"):
        Dataset(["a", "a"], np.zeros((2, 1)))
    with pytest.raises(DataError, match="non-finite"):
        Dataset(["a"], [[np.nan]])
    with pytest.raises(DataError):
        Dataset(["a"], np.zeros((1, 0)))
