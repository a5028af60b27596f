"""Seed derivation and config fingerprints."""

import dataclasses
import hashlib
import json

import numpy as np


def derive_seed(master, *purpose):
    """Stable 63-bit seed from a master seed and a purpose path."""
    text = json.dumps([int(master), *[str(p) for p in purpose]])
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def rng_for(master, *purpose):
    return np.random.default_rng(derive_seed(master, *purpose))


def _plain(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def fingerprint(obj):
    """Short hash of a dataclass/dict config; identical configs hash identically."""
    text = json.dumps(_plain(obj), sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def as_plain(obj):
    return _plain(obj)
