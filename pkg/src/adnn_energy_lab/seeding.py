"""Deterministic random-stream derivation.

Every random draw in the package comes from a generator derived here. A root
seed plus a list of string/int labels maps to an independent stream, so stages
can be re-run in any order without perturbing each other's randomness.
"""

import hashlib

import numpy as np


def _label_entropy(label):
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFFFFFFFFFF
    if isinstance(label, bytes):
        digest = hashlib.sha256(label).digest()
    else:
        digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def derive_rng(seed, *labels):
    """Generator for the stream identified by (seed, labels)."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_label_entropy(l) for l in labels]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def array_fingerprint(arr):
    """Stable content hash of an array, used to key per-input noise streams."""
    a = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
    digest = hashlib.sha256(a.tobytes()).digest()
    return int.from_bytes(digest[:8], "big")
