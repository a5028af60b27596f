"""Utterance-level feature datasets: loading, validation, speaker folds, scaling.

Feature files are ARFF (openSMILE style) or CSV with a header row; speaker and
label metadata come from a separate manifest CSV with the columns
``utterance_id,speaker_id,label`` and an optional ``sex`` column.
"""

from __future__ import annotations

import csv
import hashlib
import json
import re
from dataclasses import dataclass, replace
from itertools import combinations
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

SCHEMA_VERSION = 1


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass(frozen=True)
class LabelUniverse:
    """Ordered set of class labels; a label's index never changes."""

    labels: tuple

    def __post_init__(self):
        labels = tuple(str(l) for l in self.labels)
        if len(set(labels)) != len(labels):
            raise DataError(f"duplicate labels in universe: {labels}")
        if len(labels) < 2:
            raise DataError("a label universe needs at least 2 labels")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "_index", {l: i for i, l in enumerate(labels)})

    def __len__(self):
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def __contains__(self, label):
        return label in self._index

    def index(self, label):
        try:
            return self._index[label]
        except KeyError:
            raise DataError(f"label {label!r} not in universe {self.labels}") from None

    def pairs(self):
        """All unordered label pairs, each in canonical (universe index) order."""
        return list(combinations(self.labels, 2))

    def canonical_pair(self, a, b):
        if a == b:
            raise DataError(f"a pair needs two distinct labels, got ({a!r}, {a!r})")
        return (a, b) if self.index(a) < self.index(b) else (b, a)


@dataclass(frozen=True)
class Dataset:
    """Immutable feature matrix with per-row ids, labels and speakers."""

    utterance_ids: tuple
    features: np.ndarray
    labels: Optional[tuple] = None
    speakers: Optional[tuple] = None
    feature_names: Optional[tuple] = None
    universe: Optional[LabelUniverse] = None
    speaker_sex: Optional[dict] = None

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64, copy=True)
        if X.ndim != 2:
            raise DataError(f"features must be a 2-D matrix, got shape {X.shape}")
        if X.shape[1] < 1:
            raise DataError("features need at least one column")
        n = X.shape[0]
        if not np.all(np.isfinite(X)):
            row, col = map(int, np.argwhere(~np.isfinite(X))[0])
            raise DataError(f"non-finite feature value at row {row}, column {col}")
        X.flags.writeable = False
        object.__setattr__(self, "features", X)

        ids = tuple(str(u) for u in self.utterance_ids)
        if len(ids) != n:
            raise DataError(f"{len(ids)} utterance ids for {n} rows")
        if len(set(ids)) != n:
            seen, dup = set(), []
            for u in ids:
                if u in seen:
                    dup.append(u)
                seen.add(u)
            raise DataError(f"duplicate utterance ids: {sorted(set(dup))}")
        object.__setattr__(self, "utterance_ids", ids)

        if self.feature_names is not None:
            names = tuple(str(f) for f in self.feature_names)
            if len(names) != X.shape[1]:
                raise DataError(f"{len(names)} feature names for {X.shape[1]} columns")
            object.__setattr__(self, "feature_names", names)

        if self.labels is not None:
            labels = tuple(str(l) for l in self.labels)
            if len(labels) != n:
                raise DataError(f"{len(labels)} labels for {n} rows")
            universe = self.universe
            if universe is None:
                universe = LabelUniverse(tuple(dict.fromkeys(labels)))
            unknown = sorted(set(labels) - set(universe.labels))
            if unknown:
                raise DataError(f"labels outside the universe: {unknown}")
            object.__setattr__(self, "labels", labels)
            object.__setattr__(self, "universe", universe)
        elif self.universe is not None:
            raise DataError("a universe was given without labels")

        if self.speakers is not None:
            speakers = tuple(str(s) for s in self.speakers)
            if len(speakers) != n:
                raise DataError(f"{len(speakers)} speaker ids for {n} rows")
            object.__setattr__(self, "speakers", speakers)
        if self.speaker_sex is not None:
            object.__setattr__(self, "speaker_sex", dict(sorted(self.speaker_sex.items())))

    def __len__(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def label_indices(self):
        """Row labels as integer indices into the universe."""
        self._require_labels()
        return np.array([self.universe.index(l) for l in self.labels], dtype=np.int64)

    def _require_labels(self):
        if self.labels is None:
            raise DataError("dataset has no labels; attach a manifest first")

    def subset(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        pick = lambda seq: None if seq is None else tuple(seq[i] for i in rows)
        return replace(
            self,
            utterance_ids=pick(self.utterance_ids),
            features=self.features[rows],
            labels=pick(self.labels),
            speakers=pick(self.speakers),
        )

    def with_features(self, features, feature_names=None):
        return replace(self, features=features, feature_names=feature_names)

    def project(self, indices):
        idx = list(indices)
        names = None if self.feature_names is None else tuple(self.feature_names[i] for i in idx)
        return self.with_features(self.features[:, idx], names)

    def speaker_set(self):
        if self.speakers is None:
            raise DataError("dataset has no speaker ids; attach a manifest first")
        return frozenset(self.speakers)

    def fingerprint(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.features).tobytes())
        h.update(json.dumps([self.labels, self.universe and self.universe.labels]).encode())
        return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# ARFF / CSV ingestion

_ATTR_RE = re.compile(r"^@attribute\s+('(?:[^']|\\')*'|\"[^\"]*\"|\S+)\s+(.+)$", re.IGNORECASE)
_NUMERIC_TYPES = {"numeric", "real", "integer"}


def _unquote(text):
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
        return text[1:-1]
    return text


def _parse_float(token, where):
    token = token.strip()
    if token == "?":
        raise DataError(f"{where}: missing value '?' is not allowed")
    try:
        value = float(token)
    except ValueError:
        raise DataError(f"{where}: cannot parse {token!r} as a number") from None
    if not np.isfinite(value):
        raise DataError(f"{where}: non-finite value {token!r}")
    return value


def parse_arff(path):
    """Read an ARFF file of numeric attributes into a :class:`Dataset`.

    At most one ``string`` attribute is allowed and becomes the utterance id.
    A nominal attribute named ``class`` (or the last nominal one) becomes the
    labels, with its declared value order as the label universe.
    """
    path = Path(path)
    attrs = []  # (name, kind, nominal values)
    rows = []
    in_data = False
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("%"):
                continue
            if not in_data:
                low = line.lower()
                if low.startswith("@relation"):
                    continue
                if low.startswith("@attribute"):
                    m = _ATTR_RE.match(line)
                    if m is None:
                        raise DataError(f"{path}:{lineno}: malformed attribute declaration")
                    name, kind = _unquote(m.group(1)), m.group(2).strip()
                    if kind.startswith("{"):
                        if not kind.endswith("}"):
                            raise DataError(f"{path}:{lineno}: unterminated nominal value list")
                        values = [_unquote(v) for v in kind[1:-1].split(",") if v.strip()]
                        attrs.append((name, "nominal", values))
                    elif kind.lower() in _NUMERIC_TYPES:
                        attrs.append((name, "numeric", None))
                    elif kind.lower() == "string":
                        attrs.append((name, "string", None))
                    else:
                        raise DataError(f"{path}:{lineno}: unsupported attribute type {kind!r}")
                    continue
                if low.startswith("@data"):
                    in_data = True
                    continue
                raise DataError(f"{path}:{lineno}: unexpected header line {line[:40]!r}")
            if line.startswith("{"):
                raise DataError(f"{path}:{lineno}: sparse ARFF rows are not supported")
            tokens = next(csv.reader([line], quotechar="'", skipinitialspace=True))
            if len(tokens) != len(attrs):
                raise DataError(
                    f"{path}:{lineno}: data row {len(rows) + 1} has {len(tokens)} values, "
                    f"expected {len(attrs)}"
                )
            rows.append((lineno, tokens))

    if not attrs:
        raise DataError(f"{path}: no @attribute declarations")
    if not in_data:
        raise DataError(f"{path}: missing @data section")
    if not rows:
        raise DataError(f"{path}: dataset is empty (no data rows)")

    string_cols = [i for i, a in enumerate(attrs) if a[1] == "string"]
    if len(string_cols) > 1:
        raise DataError(f"{path}: more than one string attribute")
    nominal_cols = [i for i, a in enumerate(attrs) if a[1] == "nominal"]
    class_col = None
    if nominal_cols:
        named = [i for i in nominal_cols if attrs[i][0].lower() == "class"]
        class_col = named[0] if named else nominal_cols[-1]
    numeric_cols = [i for i, a in enumerate(attrs) if a[1] == "numeric"]
    if not numeric_cols:
        raise DataError(f"{path}: no numeric attributes")

    X = np.empty((len(rows), len(numeric_cols)))
    ids, labels = [], []
    for r, (lineno, tokens) in enumerate(rows):
        for c, col in enumerate(numeric_cols):
            X[r, c] = _parse_float(tokens[col], f"{path}:{lineno} ({attrs[col][0]})")
        ids.append(_unquote(tokens[string_cols[0]]) if string_cols else f"row{r:05d}")
        if class_col is not None:
            value = _unquote(tokens[class_col])
            if value not in attrs[class_col][2]:
                raise DataError(f"{path}:{lineno}: class value {value!r} not declared")
            labels.append(value)

    universe = None
    if class_col is not None:
        used = [v for v in attrs[class_col][2] if v in set(labels)]
        universe = LabelUniverse(tuple(used)) if len(used) >= 2 else None
    return Dataset(
        utterance_ids=ids,
        features=X,
        labels=labels if universe is not None else None,
        feature_names=[attrs[i][0] for i in numeric_cols],
        universe=universe,
    )


def parse_csv(path, id_column="utterance_id", label_column=None):
    """Read a header-row CSV feature file; every non-id, non-label column is numeric."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        body = [(i + 2, row) for i, row in enumerate(reader) if row]
    if not body:
        raise DataError(f"{path}: dataset is empty (no data rows)")
    id_idx = header.index(id_column) if id_column in header else None
    label_idx = header.index(label_column) if label_column and label_column in header else None
    if label_column and label_idx is None:
        raise DataError(f"{path}: label column {label_column!r} not in header")
    numeric = [i for i in range(len(header)) if i not in (id_idx, label_idx)]
    X = np.empty((len(body), len(numeric)))
    ids, labels = [], []
    for r, (lineno, row) in enumerate(body):
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: row {r + 1} has {len(row)} fields, expected {len(header)}")
        for c, col in enumerate(numeric):
            X[r, c] = _parse_float(row[col], f"{path}:{lineno} ({header[col]})")
        ids.append(row[id_idx] if id_idx is not None else f"row{r:05d}")
        if label_idx is not None:
            labels.append(row[label_idx])
    return Dataset(
        utterance_ids=ids,
        features=X,
        labels=labels or None,
        feature_names=[header[i] for i in numeric],
    )


def load_features(path, **kwargs):
    path = Path(path)
    if path.suffix.lower() == ".arff":
        return parse_arff(path)
    return parse_csv(path, **kwargs)


# ---------------------------------------------------------------------------
# Manifest and EmoDB names

MANIFEST_COLUMNS = ("utterance_id", "speaker_id", "label")


def parse_manifest(path, dataset, universe=None):
    """Attach speaker ids and labels from a manifest CSV to ``dataset``.

    The label universe is taken from ``universe`` when given, otherwise in order
    of first appearance in the manifest.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing_cols = [c for c in MANIFEST_COLUMNS if c not in (reader.fieldnames or [])]
        if missing_cols:
            raise DataError(f"{path}: manifest lacks columns {missing_cols}")
        records = list(reader)
    if len(records) != len(dataset):
        raise DataError(f"{path}: manifest has {len(records)} rows, dataset has {len(dataset)}")
    by_id = {}
    dups = []
    for rec in records:
        uid = rec["utterance_id"]
        if uid in by_id:
            dups.append(uid)
        by_id[uid] = rec
    if dups:
        raise DataError(f"{path}: duplicate utterance ids in manifest: {sorted(set(dups))}")
    absent = [u for u in dataset.utterance_ids if u not in by_id]
    if absent:
        raise DataError(f"{path}: utterance ids missing from manifest: {absent[:20]}")

    ordered = [by_id[u] for u in dataset.utterance_ids]
    labels = [rec["label"] for rec in ordered]
    if universe is not None:
        universe = universe if isinstance(universe, LabelUniverse) else LabelUniverse(tuple(universe))
        unknown = sorted(set(labels) - set(universe.labels))
        if unknown:
            raise DataError(f"{path}: labels not in the fixed universe: {unknown}")
    else:
        universe = LabelUniverse(tuple(dict.fromkeys(labels)))
    sex = None
    if "sex" in (reader.fieldnames or []):
        sex = {}
        for rec in ordered:
            s = (rec.get("sex") or "").strip().upper()
            if s:
                if sex.setdefault(rec["speaker_id"], s) != s:
                    raise DataError(f"{path}: speaker {rec['speaker_id']} has conflicting sex")
        sex = sex or None
    return replace(
        dataset,
        labels=tuple(labels),
        speakers=tuple(rec["speaker_id"] for rec in ordered),
        universe=universe,
        speaker_sex=sex,
    )


def write_manifest(dataset, path):
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = list(MANIFEST_COLUMNS) + (["sex"] if dataset.speaker_sex else [])
        w.writerow(cols)
        for uid, spk, lab in zip(dataset.utterance_ids, dataset.speakers, dataset.labels):
            row = [uid, spk, lab]
            if dataset.speaker_sex:
                row.append(dataset.speaker_sex.get(spk, ""))
            w.writerow(row)


# Emotion letter codes and speaker sexes of the Berlin database.
EMODB_EMOTIONS = {
    "W": "anger",
    "L": "boredom",
    "E": "disgust",
    "A": "fear",
    "F": "happiness",
    "T": "sadness",
    "N": "neutral",
}
EMODB_SPEAKER_SEX = {
    "03": "M", "08": "F", "09": "F", "10": "M", "11": "M",
    "12": "M", "13": "F", "14": "F", "15": "M", "16": "F",
}
_EMODB_RE = re.compile(r"^(\d\d)([ab]\d\d)([WLEATFN])([a-z])$")


def parse_emodb_name(name):
    """Split an EmoDB file code like ``03a01Wa`` into ``(speaker, label, sex)``."""
    stem = Path(str(name)).stem
    m = _EMODB_RE.match(stem)
    if m is None:
        raise DataError(f"{name!r} is not an EmoDB file code")
    speaker = m.group(1)
    return speaker, EMODB_EMOTIONS[m.group(3)], EMODB_SPEAKER_SEX.get(speaker)


def attach_emodb_metadata(dataset, universe=None):
    """Opt-in alternative to a manifest: derive speakers/labels from EmoDB ids."""
    parsed = [parse_emodb_name(u) for u in dataset.utterance_ids]
    labels = [p[1] for p in parsed]
    if universe is None:
        universe = LabelUniverse(tuple(dict.fromkeys(labels)))
    sex = {p[0]: p[2] for p in parsed if p[2]}
    return replace(
        dataset,
        labels=tuple(labels),
        speakers=tuple(p[0] for p in parsed),
        universe=universe if isinstance(universe, LabelUniverse) else LabelUniverse(tuple(universe)),
        speaker_sex=sex or None,
    )


# ---------------------------------------------------------------------------
# Persistence


def save_dataset(dataset, path, meta=None):
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "dataset",
        "meta": meta or {},
        "utterance_ids": list(dataset.utterance_ids),
        "feature_names": None if dataset.feature_names is None else list(dataset.feature_names),
        "labels": None if dataset.labels is None else list(dataset.labels),
        "speakers": None if dataset.speakers is None else list(dataset.speakers),
        "speaker_sex": dataset.speaker_sex,
        "universe": None if dataset.universe is None else list(dataset.universe.labels),
        "features": dataset.features.tolist(),
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n", encoding="utf-8")


def load_dataset(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("kind") != "dataset":
        raise DataError(f"{path}: not a dataset file")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"{path}: unsupported schema_version {doc.get('schema_version')}")
    return Dataset(
        utterance_ids=doc["utterance_ids"],
        features=np.array(doc["features"], dtype=np.float64).reshape(len(doc["utterance_ids"]), -1),
        labels=doc["labels"],
        speakers=doc["speakers"],
        feature_names=doc["feature_names"],
        universe=None if doc["universe"] is None else LabelUniverse(tuple(doc["universe"])),
        speaker_sex=doc["speaker_sex"],
    )


# ---------------------------------------------------------------------------
# Speaker folds


@dataclass(frozen=True)
class SpeakerFoldPlan:
    """Each fold is a ``(train_speakers, test_speakers)`` pair of frozensets."""

    folds: tuple
    seed: int = 0

    def __post_init__(self):
        tests = [f[1] for f in self.folds]
        for train, test in self.folds:
            if train & test:
                raise DataError(f"fold shares speakers between train and test: {sorted(train & test)}")
        for a, b in combinations(tests, 2):
            if a & b:
                raise DataError(f"test sets overlap: {sorted(a & b)}")

    def __len__(self):
        return len(self.folds)

    def __iter__(self):
        return iter(self.folds)

    def split(self, dataset, fold):
        """Row indices ``(train_rows, test_rows)`` of ``dataset`` for fold number ``fold``."""
        train, test = self.folds[fold]
        spk = dataset.speakers
        tr = [i for i, s in enumerate(spk) if s in train]
        te = [i for i, s in enumerate(spk) if s in test]
        return np.array(tr, dtype=np.int64), np.array(te, dtype=np.int64)

    def to_json(self):
        return [
            {"train": sorted(train), "test": sorted(test)} for train, test in self.folds
        ]


def make_speaker_folds(dataset, n_folds=5, seed=0):
    """Partition speakers into ``n_folds`` test groups.

    When speaker sex is known the sexes are dealt out separately, so ten
    speakers (5 M, 5 F) in five folds give one male and one female per test set.
    """
    speakers = sorted(dataset.speaker_set())
    if n_folds < 1:
        raise DataError("n_folds must be >= 1")
    if len(speakers) < n_folds:
        raise DataError(f"{len(speakers)} speakers cannot fill {n_folds} folds")
    rng = np.random.default_rng(seed)
    groups = [[] for _ in range(n_folds)]
    sex = dataset.speaker_sex or {}
    if sex and all(s in sex for s in speakers):
        strata = [sorted(s for s in speakers if sex[s] == v) for v in sorted(set(sex[s] for s in speakers))]
    else:
        strata = [speakers]
    offset = 0
    for stratum in strata:
        order = [stratum[i] for i in rng.permutation(len(stratum))]
        for k, spk in enumerate(order):
            groups[(offset + k) % n_folds].append(spk)
        offset += len(order)
    all_spk = frozenset(speakers)
    if n_folds == 1:
        # Degenerate protocol: train and test on disjoint halves of the speakers.
        half = frozenset(sorted(groups[0])[: max(1, len(speakers) // 2)])
        if half == all_spk:
            raise DataError("a single fold needs at least 2 speakers")
        return SpeakerFoldPlan(((all_spk - half, half),), seed=seed)
    folds = tuple((all_spk - frozenset(g), frozenset(g)) for g in groups)
    return SpeakerFoldPlan(folds, seed=seed)


# ---------------------------------------------------------------------------
# Scaling and pair restriction


@dataclass(frozen=True)
class Scaler:
    """Column affine map ``(x - mean) * inv_std``; zero-variance columns map to 0."""

    mean: np.ndarray
    inv_std: np.ndarray

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.mean.shape[0]:
            raise DataError(f"scaler expects {self.mean.shape[0]} features, got {X.shape[-1]}")
        return (X - self.mean) * self.inv_std

    def apply(self, dataset):
        return dataset.with_features(self.transform(dataset.features), dataset.feature_names)

    def to_json(self):
        return {"mean": self.mean.tolist(), "inv_std": self.inv_std.tolist()}

    @classmethod
    def from_json(cls, doc):
        return cls(np.array(doc["mean"], dtype=np.float64), np.array(doc["inv_std"], dtype=np.float64))


def fit_scaler(X):
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        raise DataError("cannot fit a scaler on zero rows")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    with np.errstate(divide="ignore"):
        inv = np.where(std > 0, 1.0 / np.where(std > 0, std, 1.0), 0.0)
    return Scaler(mean, inv)


def standardize(train, others: Sequence[Dataset] = ()):
    """Standardize ``train`` with its own column statistics and apply the map to ``others``."""
    if len(train) == 0:
        raise DataError("cannot standardize an empty training set")
    scaler = fit_scaler(train.features)
    return scaler.apply(train), [scaler.apply(d) for d in others], scaler


def restrict(dataset, pair):
    """Rows whose label is one of the two labels in ``pair``."""
    a, b = pair
    uni = dataset.universe
    if uni is None:
        raise DataError("dataset has no labels")
    a, b = uni.canonical_pair(a, b)
    keep = [i for i, l in enumerate(dataset.labels) if l == a or l == b]
    if not keep:
        raise DataError(f"no rows for pair ({a}, {b})")
    sub = dataset.subset(keep)
    return replace(sub, universe=LabelUniverse((a, b)))
