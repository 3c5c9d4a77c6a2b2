"""Counter-based random streams with named, reproducible substreams.

Every stochastic stage (probing solves, error-check probes, randomized SVD)
draws from its own substream derived by hashing a label into the Philox key,
so re-running any stage with the same master seed reproduces its numbers
independently of execution order.
"""

import hashlib

import numpy as np

__all__ = ["substream", "master"]


def _label_words(label: str) -> tuple[int, ...]:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return tuple(int.from_bytes(digest[8 * i : 8 * (i + 1)], "little") for i in range(4))


def master(seed: int) -> np.random.Generator:
    """Top-level generator for a 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=seed & 0xFFFFFFFFFFFFFFFF))


def substream(seed: int, *labels) -> np.random.Generator:
    """Generator for the substream named by ``labels`` under ``seed``.

    Labels may be strings, ints, or tuples; they are flattened into a single
    text label before hashing.  Distinct labels give statistically
    independent Philox streams.
    """
    text = "/".join(str(x) for x in labels)
    w = _label_words(text)
    key = ((seed & 0xFFFFFFFFFFFFFFFF) ^ w[0]) | (w[1] << 64)
    counter = w[2] | (w[3] << 64)
    bitgen = np.random.Philox(counter=counter, key=key)
    return np.random.Generator(bitgen)
