"""Hashed token features shared by the trainable scorer and refiner."""

from __future__ import annotations

import re
import zlib
from functools import lru_cache

import numpy as np

DEFAULT_FEATURE_BITS = 14

_NAME_SPLIT = re.compile(r"[^0-9a-z]+")


def bucket(key: str, bits: int) -> int:
    """Stable hash bucket for a feature key (crc32, not process-salted)."""
    return zlib.crc32(key.encode("utf-8")) & ((1 << bits) - 1)


def name_tokens(name: str) -> frozenset[str]:
    """Lowercase alphanumeric tokens of a relation or entity name."""
    return frozenset(t for t in _NAME_SPLIT.split(name.lower()) if t)


@lru_cache(maxsize=16384)
def question_features(question: tuple[str, ...], bits: int = DEFAULT_FEATURE_BITS):
    """Hashed token counts for a question.

    Each token contributes a plain feature and a position-tagged feature.
    Plain bag-of-words cannot distinguish "a of b" from "b of a", and the
    order of mentioned relations decides which hop comes first, so the
    position tag is load-bearing.  Returns aligned (indices, counts) arrays
    with unique, sorted indices.
    """
    counts: dict[int, float] = {}
    for i, tok in enumerate(question):
        t = tok.lower()
        for key in (t, f"{i}|{t}"):
            b = bucket(key, bits)
            counts[b] = counts.get(b, 0.0) + 1.0
    if not counts:
        idx = np.zeros(0, dtype=np.int64)
        val = np.zeros(0, dtype=np.float64)
    else:
        idx = np.fromiter(sorted(counts), dtype=np.int64, count=len(counts))
        val = np.array([counts[int(i)] for i in idx], dtype=np.float64)
    idx.setflags(write=False)
    val.setflags(write=False)
    return idx, val


def overlap_count(question: tuple[str, ...], rel_tokens: frozenset[str]) -> float:
    """Number of question tokens that appear in a relation's surface name."""
    return float(sum(1 for tok in question if tok.lower() in rel_tokens))
