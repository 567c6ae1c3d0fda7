"""Independent reference implementations used to check the fast paths.

Everything here is deliberately naive: exhaustive span scans, cell-by-cell
rule application, per-label counting. None of it shares code with the
package internals it verifies.
"""

from __future__ import annotations

import numpy as np

from propner.kbstore import KnowledgeBase, normalize_surface
from propner.matcher import EntityMatch


def brute_force_candidates(kb: KnowledgeBase, tokens: list[str]) -> list[tuple[int, int, str, str]]:
    """Every (start, end, surface, qid) whose normalized span is an index key,
    found by scanning all O(n^2) token spans."""
    found = []
    n = len(tokens)
    for start in range(n):
        for end in range(start + 1, n + 1):
            surface = normalize_surface(" ".join(tokens[start:end]))
            if surface and surface in kb.surface_index:
                for qid in kb.surface_index[surface]:
                    found.append((start, end, surface, qid))
    return sorted(found)


def spans_overlap(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return a[0] < b[1] and b[0] < a[1]


def check_selection(candidates: list[EntityMatch], selected: list[EntityMatch]) -> None:
    """Assert the overlap-resolution contract.

    Distinct selected spans never overlap, and every discarded candidate
    overlaps some selected span of a different extent (so in particular no
    discarded candidate is longer than a selected match while being
    disjoint from all of them).
    """
    spans = {(m.start, m.end) for m in selected}
    span_list = sorted(spans)
    for i, a in enumerate(span_list):
        for b in span_list[i + 1 :]:
            assert not spans_overlap(a, b), f"selected spans {a} and {b} overlap"
    selected_keys = {(m.start, m.end, m.qid) for m in selected}
    for cand in candidates:
        if (cand.start, cand.end, cand.qid) in selected_keys:
            continue
        blockers = [s for s in spans if spans_overlap(s, (cand.start, cand.end)) and s != (cand.start, cand.end)]
        assert blockers, f"candidate {(cand.start, cand.end, cand.qid)} was discarded without a conflict"


def rule_mask(n_sentence: int, size: int, segments, mode: str) -> np.ndarray:
    """Build the attention mask by evaluating the masking rules per cell."""
    entity_of = [-1] * size
    context_of = [-1] * size
    for index, seg in enumerate(segments):
        for pos in seg.entity_positions:
            entity_of[pos] = index
        for pos in seg.context_positions:
            context_of[pos] = index
    block = n_sentence + 2
    bits = np.zeros((size, size), dtype=np.uint8)
    for i in range(size):
        for j in range(size):
            if i < block and j < block:
                value = 1
            elif entity_of[i] >= 0 and context_of[j] == entity_of[i]:
                value = 1
            elif mode == "default" and context_of[i] >= 0 and entity_of[j] == context_of[i]:
                value = 1
            elif mode == "default" and context_of[i] >= 0 and context_of[j] == context_of[i]:
                value = 1
            elif mode == "default" and i == j and i >= block and context_of[i] < 0:
                value = 1
            else:
                value = 0
            bits[i, j] = value
    return bits


def reference_softmax_row(scores: np.ndarray, allowed: list[int]) -> np.ndarray:
    """Softmax over an explicit subset of key positions, computed directly."""
    out = np.zeros(scores.shape[0])
    sub = scores[allowed]
    exp = np.exp(sub - sub.max())
    out[allowed] = exp / exp.sum()
    return out


def counting_vote(labels: list[str], fold_votes: list[list[str]], weights: list[float]) -> str:
    """Weighted plurality over hard per-fold votes for one token."""
    totals = {label: 0.0 for label in labels}
    for vote, weight in zip(fold_votes, weights):
        totals[vote] += weight
    best = max(totals.values())
    return min(label for label, total in totals.items() if total == best)
