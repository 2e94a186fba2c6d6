"""Deterministic random-stream derivation.

A single root seed fans out into independent named substreams so that
adding parallelism or reordering work never changes any result. Streams
are derived by hashing string labels into SeedSequence spawn keys.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_words(label: str) -> list[int]:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


def derive_seed_sequence(root_seed: int, *labels: object) -> np.random.SeedSequence:
    """Build a SeedSequence for the substream named by `labels`.

    Integer labels are used directly as entropy words; everything else is
    stringified and hashed. The same (root_seed, labels) pair always yields
    the same stream.
    """
    entropy: list[int] = [int(root_seed) & 0xFFFFFFFFFFFFFFFF]
    for label in labels:
        if isinstance(label, (int, np.integer)) and not isinstance(label, bool):
            entropy.append(int(label) & 0xFFFFFFFFFFFFFFFF)
        else:
            entropy.extend(_label_words(str(label)))
    return np.random.SeedSequence(entropy)


def derive_rng(root_seed: int, *labels: object) -> np.random.Generator:
    """Generator for the substream named by `labels`."""
    return np.random.default_rng(derive_seed_sequence(root_seed, *labels))


def as_rng(rng_or_seed: np.random.Generator | int | None) -> np.random.Generator:
    """Coerce a Generator, an integer seed, or None into a Generator."""
    if isinstance(rng_or_seed, np.random.Generator):
        return rng_or_seed
    return np.random.default_rng(rng_or_seed)
