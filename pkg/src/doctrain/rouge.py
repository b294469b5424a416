"""ROUGE-L similarity via dynamic-programming longest common subsequence."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


def lcs_length(a: list, b: list) -> int:
    """Length of the longest common subsequence, by dynamic programming.

    Row recurrence cur[j] = max(prev[j], prev[j-1] + eq(i, j), cur[j-1]); the
    relaxed three-way max is equivalent to the textbook case split, and the
    cur[j-1] chain then resolves to a running maximum, which lets each row
    update run vectorized.
    """
    if not a or not b:
        return 0
    # map tokens of b onto ints once so row comparisons are array ops
    lookup: dict = {}
    for tok in a:
        lookup.setdefault(tok, len(lookup))
    b_ids = np.array([lookup.get(tok, -1) for tok in b], dtype=np.int64)
    prev = np.zeros(len(b) + 1, dtype=np.int64)
    cur = np.zeros(len(b) + 1, dtype=np.int64)
    for tok in a:
        eq = b_ids == lookup[tok]
        np.maximum(prev[1:], prev[:-1] + eq, out=cur[1:])
        np.maximum.accumulate(cur, out=cur)
        prev, cur = cur, prev
    return int(prev[-1])


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float


def rouge_l(a_tokens: list[str], b_tokens: list[str]) -> RougeScore:
    """ROUGE-L of two token sequences.

    With L the LCS length: precision = L/|b|, recall = L/|a|, f1 their
    harmonic mean (0 when the LCS is empty). An empty side scores all zeros
    and records a warning.
    """
    if not a_tokens or not b_tokens:
        log.warning("rouge_l called with an empty token sequence")
        return RougeScore(0.0, 0.0, 0.0)
    lcs = lcs_length(a_tokens, b_tokens)
    if lcs == 0:
        return RougeScore(0.0, 0.0, 0.0)
    p = lcs / len(b_tokens)
    r = lcs / len(a_tokens)
    return RougeScore(p, r, 2.0 * p * r / (p + r))
