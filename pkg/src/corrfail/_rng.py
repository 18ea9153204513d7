"""Deterministic random-stream derivation.

Every stochastic routine in the package takes a single integer seed and
derives independent sub-streams from (seed, tag, index, ...) paths, so a
pipeline rerun with the same top-level seed reproduces every stage even
when intermediate stages are skipped or re-ordered.
"""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _tag_words(tags):
    words = []
    for tag in tags:
        if isinstance(tag, str):
            digest = hashlib.sha256(tag.encode("utf-8")).digest()
            words.append(int.from_bytes(digest[:8], "little"))
        else:
            words.append(int(tag) & _MASK64)
    return words


def seed_sequence(seed, *tags):
    """SeedSequence for the sub-stream identified by a (seed, *tags) path."""
    return np.random.SeedSequence([int(seed) & _MASK64] + _tag_words(tags))


def spawn_rng(seed, *tags):
    """Independent Generator for the given derivation path."""
    return np.random.default_rng(seed_sequence(seed, *tags))


def spawn_seed(seed, *tags):
    """64-bit integer seed for the given derivation path.

    Used when a sub-routine wants a plain integer seed of its own (e.g.
    per-iteration sampler seeds inside a training loop).
    """
    return int(seed_sequence(seed, *tags).generate_state(1, np.uint64)[0])
