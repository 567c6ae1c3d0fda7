"""Input assembly and the entity-aware attention mask.

The augmented sequence is laid out as

    [CLS] <sentence tokens> [SEP] <segment_0> $ <segment_1> $ ...

where each segment echoes the matched entity's tokens and then its context
string split on whitespace (the "|" between property labels stays a token
of its own). The binary mask M lets the whole sentence block attend itself
and links each entity span to its own segment only: contexts of different
entities can never see each other.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from propner.matcher import EntityMatch, Sentence

CLS_TOKEN = "[CLS]"
SEP_TOKEN = "[SEP]"
SEGMENT_SEPARATOR = "$"

MASK_MODES = ("default", "strict-paper")


class SentenceTooLongError(ValueError):
    """The sentence alone does not fit the length budget; it is never truncated."""


@dataclass(frozen=True)
class Segment:
    """Sequence positions of one kept pair: entity span (in the sentence copy)
    and its appended segment (entity echo plus context tokens)."""

    entity_positions: frozenset[int]
    context_positions: frozenset[int]


@dataclass
class AttentionMask:
    size: int
    bits: np.ndarray  # (size, size) uint8, bits[i, j] = 1 iff query i may attend key j

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AttentionMask):
            return NotImplemented
        return self.size == other.size and np.array_equal(self.bits, other.bits)


@dataclass
class AugmentedInput:
    tokens: list[str]
    n_sentence: int
    segments: list[Segment]
    mask: AttentionMask
    label_alignment: list[str | None]
    sentence_id: str = ""
    mask_mode: str = "default"


def _segment_suffix(sentence: Sentence, pair: EntityMatch) -> list[str]:
    return sentence.tokens[pair.start : pair.end] + pair.context.split()


def assemble(sentence: Sentence, pairs: list[EntityMatch], max_len: int, mask_mode: str = "default") -> AugmentedInput:
    """Build the augmented token sequence, segment layout and mask.

    Pairs are kept all-or-nothing in priority order (entity span length
    desc, start asc) while the total length stays within ``max_len``; kept
    pairs are then laid out in sentence order. Gold tags, when present, are
    aligned to positions 1..n; every other position is ignored by the loss.
    """
    if mask_mode not in MASK_MODES:
        raise ValueError(f"unknown mask mode {mask_mode!r}")
    n = len(sentence.tokens)
    if max_len < n + 2:
        raise SentenceTooLongError(
            f"sentence {sentence.id!r} needs {n + 2} positions but max_len is {max_len}"
        )
    for prev, cur in zip(pairs, pairs[1:]):
        if cur.start < prev.end:
            raise ValueError("pairs must be non-overlapping and start-sorted")

    by_priority = sorted(pairs, key=lambda m: (m.start - m.end, m.start))
    kept = []
    total = n + 2
    for pair in by_priority:
        cost = len(_segment_suffix(sentence, pair)) + (1 if kept else 0)
        if total + cost <= max_len:
            kept.append(pair)
            total += cost
    kept.sort(key=lambda m: m.start)

    tokens = [CLS_TOKEN, *sentence.tokens, SEP_TOKEN]
    segments = []
    for index, pair in enumerate(kept):
        if index:
            tokens.append(SEGMENT_SEPARATOR)
        seg_start = len(tokens)
        tokens.extend(_segment_suffix(sentence, pair))
        segments.append(
            Segment(
                entity_positions=frozenset(range(pair.start + 1, pair.end + 1)),
                context_positions=frozenset(range(seg_start, len(tokens))),
            )
        )

    label_alignment: list[str | None] = [None] * len(tokens)
    if sentence.gold_tags is not None:
        label_alignment[1 : n + 1] = sentence.gold_tags

    mask = _mask_from_layout(len(tokens), n, segments, mask_mode)
    return AugmentedInput(
        tokens=tokens,
        n_sentence=n,
        segments=segments,
        mask=mask,
        label_alignment=label_alignment,
        sentence_id=sentence.id,
        mask_mode=mask_mode,
    )


def _mask_from_layout(size: int, n_sentence: int, segments: list[Segment], mode: str) -> AttentionMask:
    bits = np.zeros((size, size), dtype=np.uint8)
    block = n_sentence + 2
    bits[:block, :block] = 1
    in_segment = set()
    for seg in segments:
        ent = sorted(seg.entity_positions)
        ctx = sorted(seg.context_positions)
        in_segment.update(ctx)
        bits[np.ix_(ent, ctx)] = 1
        if mode == "default":
            bits[np.ix_(ctx, ent)] = 1
            bits[np.ix_(ctx, ctx)] = 1
    if mode == "default":
        # "$" separators are the appended positions owned by no segment;
        # self-attention keeps their softmax rows defined.
        for pos in range(block, size):
            if pos not in in_segment:
                bits[pos, pos] = 1
    return AttentionMask(size=size, bits=bits)


def build_attention_mask(aug: AugmentedInput, mode: str = "default") -> AttentionMask:
    """Entity-aware mask for an assembled input.

    Both modes set the full sentence block (queries and keys below
    n_sentence+2) and let each entity span attend its own segment. The
    strict-paper mode stops there, leaving segment positions with all-zero
    query rows; the default mode additionally mirrors entity<->segment
    attention, lets a segment attend itself, and gives "$" separators
    diagonal self-attention, so every query row has at least one key.
    """
    if mode not in MASK_MODES:
        raise ValueError(f"unknown mask mode {mode!r}")
    return _mask_from_layout(len(aug.tokens), aug.n_sentence, aug.segments, mode)


def _ranges(positions: frozenset[int]) -> list[int]:
    return [min(positions), max(positions) + 1]


def to_json_dict(aug: AugmentedInput) -> dict:
    """JSON-serializable form. The all-ones sentence block is implicit; only
    set bits outside it are listed, keeping files compact and reproducible."""
    block = aug.n_sentence + 2
    rows, cols = np.nonzero(aug.mask.bits)
    extra_bits = [[int(i), int(j)] for i, j in zip(rows, cols) if i >= block or j >= block]
    gold = aug.label_alignment[1 : aug.n_sentence + 1]
    return {
        "id": aug.sentence_id,
        "tokens": list(aug.tokens),
        "n_sentence": aug.n_sentence,
        "segments": [
            {"entity": _ranges(seg.entity_positions), "context": _ranges(seg.context_positions)}
            for seg in aug.segments
        ],
        "mask_mode": aug.mask_mode,
        "mask_bits": extra_bits,
        "gold_tags": None if any(tag is None for tag in gold) else list(gold),
    }


def from_json_dict(data: dict) -> AugmentedInput:
    tokens = list(data["tokens"])
    n = int(data["n_sentence"])
    segments = [
        Segment(
            entity_positions=frozenset(range(seg["entity"][0], seg["entity"][1])),
            context_positions=frozenset(range(seg["context"][0], seg["context"][1])),
        )
        for seg in data["segments"]
    ]
    size = len(tokens)
    bits = np.zeros((size, size), dtype=np.uint8)
    bits[: n + 2, : n + 2] = 1
    for i, j in data["mask_bits"]:
        bits[i, j] = 1
    label_alignment: list[str | None] = [None] * size
    if data.get("gold_tags") is not None:
        label_alignment[1 : n + 1] = data["gold_tags"]
    return AugmentedInput(
        tokens=tokens,
        n_sentence=n,
        segments=segments,
        mask=AttentionMask(size=size, bits=bits),
        label_alignment=label_alignment,
        sentence_id=data.get("id", ""),
        mask_mode=data.get("mask_mode", "default"),
    )


def write_jsonl(augs: list[AugmentedInput], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        for aug in augs:
            handle.write(json.dumps(to_json_dict(aug), sort_keys=True, ensure_ascii=False) + "\n")


def read_jsonl(path) -> list[AugmentedInput]:
    augs = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                augs.append(from_json_dict(json.loads(line)))
    return augs
