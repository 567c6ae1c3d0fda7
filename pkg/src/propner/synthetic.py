"""Self-contained A/B experiment: does property knowledge help a tagger?

The generated corpus makes person names type-ambiguous on purpose. Every
entity is a first/last name pair dropped into a class-neutral filler
template, and its fine-grained class (scientist, politician, musician) is
decided by a coin flip that only the knowledge base records, via the
entity's occupation property. Test entities are unseen name combinations,
so a model without knowledge can at best guess the class, while a model
that reads the retrieved context sees the occupation word directly.

Both models share seeds, architecture and training schedule; the only
difference is whether retrieved pairs are appended to the input. Dropping
the occupation property from the knowledge base removes the class signal
and collapses the gap, mirroring the property-ablation experiment at desk
scale.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from propner.augmenter import assemble
from propner.encoder import TrainConfig, predict_tags, train
from propner.evaluator import score
from propner.kbstore import FULL_PROPERTY_MASK, PROPERTY_KINDS, DumpErrorReport, build_knowledge_base, parse_dump
from propner.matcher import Sentence, build_matcher, retrieve

FIRST_NAMES = (
    "Alice", "Brian", "Clara", "David", "Elena", "Felix", "Grace", "Henry", "Irene", "Jonas",
    "Karen", "Leo", "Mara", "Nils", "Olga", "Peter", "Quinn", "Rosa", "Simon", "Tessa",
    "Ulrich", "Vera", "Walter", "Xenia", "Yusuf", "Zoe", "Anton", "Bella", "Carl", "Dora",
)

LAST_NAMES = (
    "Stone", "Rivers", "Walsh", "Becker", "Fontaine", "Novak", "Ortega", "Lindgren", "Okafor", "Tanaka",
    "Moretti", "Dubois", "Eriksen", "Farkas", "Grimaldi", "Haller", "Ivanov", "Jansen", "Kovacs", "Laurent",
    "Meyer", "Nakamura", "Olsen", "Petrov", "Quirke", "Rossi", "Schmidt", "Takacs", "Ueda", "Vogel",
)

# Filler vocabulary is disjoint from the name pools and from every
# knowledge-base label, so the only retrievable spans are the names.
TEMPLATES = (
    "<NAME> arrived in the capital on monday",
    "reporters met <NAME> outside the old library",
    "the committee thanked <NAME> for the short visit",
    "<NAME> spoke briefly after the ceremony ended",
    "a crowd waited for <NAME> near the station",
    "the interview with <NAME> ran past midnight",
    "<NAME> left early despite the heavy rain",
    "organizers seated <NAME> beside the main stage",
)

#: (BIO type, occupation label, occupation qid)
PERSON_CLASSES = (
    ("SCIENTIST", "scientist", "Q901"),
    ("POLITICIAN", "politician", "Q902"),
    ("MUSICIAN", "musician", "Q903"),
)

HUMAN_QID = "Q5"


@dataclass(frozen=True)
class SyntheticConfig:
    n_train_entities: int = 90
    n_test_entities: int = 45
    sentences_per_train_entity: int = 3
    sentences_per_test_entity: int = 1
    epochs: int = 50
    lr: float = 0.05
    d_model: int = 32
    n_heads: int = 4
    n_layers: int = 2
    ff_dim: int = 64
    max_len: int = 64


def _entity_pairs(rng: np.random.Generator, n_train: int, n_test: int) -> tuple[list, list]:
    """Distinct (first, last) pairs; train pairs cover every individual name
    (when n_train allows), test pairs are unseen combinations of seen names."""
    perm = rng.permutation(len(LAST_NAMES))
    chosen = [(FIRST_NAMES[i], LAST_NAMES[int(perm[i])]) for i in range(len(FIRST_NAMES))]
    used = set(chosen)
    for flat in rng.permutation(len(FIRST_NAMES) * len(LAST_NAMES)):
        if len(chosen) >= n_train + n_test:
            break
        pair = (FIRST_NAMES[flat // len(LAST_NAMES)], LAST_NAMES[flat % len(LAST_NAMES)])
        if pair not in used:
            used.add(pair)
            chosen.append(pair)
    if len(chosen) < n_train + n_test:
        raise ValueError("name pools too small for requested entity counts")
    return chosen[:n_train], chosen[n_train : n_train + n_test]


def _assign_classes(rng: np.random.Generator, entities: list) -> dict:
    """Balanced class assignment in a seeded shuffled order."""
    assignment = {}
    for position, idx in enumerate(rng.permutation(len(entities))):
        assignment[entities[int(idx)]] = position % len(PERSON_CLASSES)
    return assignment


def _dump_lines(entities: list, class_of: dict) -> list[str]:
    lines = [json.dumps({"id": HUMAN_QID, "labels": {"en": "human"}})]
    for _, label, qid in PERSON_CLASSES:
        lines.append(json.dumps({"id": qid, "labels": {"en": label}}))
    for index, pair in enumerate(entities):
        occupation_qid = PERSON_CLASSES[class_of[pair]][2]
        lines.append(
            json.dumps(
                {
                    "id": f"Q{1000 + index}",
                    "labels": {"en": f"{pair[0]} {pair[1]}"},
                    "claims": {"P31": [HUMAN_QID], "P106": [occupation_qid]},
                }
            )
        )
    return lines


def _sentences(rng: np.random.Generator, entities: list, class_of: dict, per_entity: int, prefix: str) -> list[Sentence]:
    sentences = []
    for index, pair in enumerate(entities):
        bio_type = PERSON_CLASSES[class_of[pair]][0]
        for copy in range(per_entity):
            template = TEMPLATES[int(rng.integers(len(TEMPLATES)))]
            tokens: list[str] = []
            tags: list[str] = []
            for word in template.split():
                if word == "<NAME>":
                    tokens.extend(pair)
                    tags.extend([f"B-{bio_type}", f"I-{bio_type}"])
                else:
                    tokens.append(word)
                    tags.append("O")
            sentences.append(Sentence(f"{prefix}{index:04d}-{copy}", tokens, tags))
    return sentences


def run_synthetic_ab(
    seed: int,
    properties: frozenset[str] = FULL_PROPERTY_MASK,
    mask_mode: str = "default",
    config: SyntheticConfig | None = None,
) -> dict:
    """Train baseline and knowledge-augmented taggers on one seeded corpus.

    Returns a report with both held-out entity-level micro F1 scores and
    their gap. The corpus depends only on the seed, so runs with different
    property masks or mask modes compare models on identical data.
    """
    cfg = config or SyntheticConfig()
    rng = np.random.default_rng(seed)

    train_entities, test_entities = _entity_pairs(rng, cfg.n_train_entities, cfg.n_test_entities)
    class_of = _assign_classes(rng, train_entities)
    class_of.update(_assign_classes(rng, test_entities))
    train_sents = _sentences(rng, train_entities, class_of, cfg.sentences_per_train_entity, "train-")
    test_sents = _sentences(rng, test_entities, class_of, cfg.sentences_per_test_entity, "test-")

    errors = DumpErrorReport()
    records = list(parse_dump(_dump_lines(train_entities + test_entities, class_of), errors))
    if len(errors):
        raise AssertionError(f"synthetic dump produced parse errors: {errors.errors[:3]}")
    kb = build_knowledge_base(records, "en", properties)
    matcher = build_matcher(kb)

    def with_knowledge(sentences):
        return [assemble(s, retrieve(kb, matcher, s), cfg.max_len, mask_mode) for s in sentences]

    def without_knowledge(sentences):
        return [assemble(s, [], cfg.max_len, mask_mode) for s in sentences]

    train_config = TrainConfig(
        d_model=cfg.d_model,
        n_heads=cfg.n_heads,
        n_layers=cfg.n_layers,
        ff_dim=cfg.ff_dim,
        max_len=cfg.max_len,
        lr=cfg.lr,
        epochs=cfg.epochs,
        seed=seed,
    )
    augmented_model = train(with_knowledge(train_sents), train_config)
    baseline_model = train(without_knowledge(train_sents), train_config)

    gold = [list(s.gold_tags) for s in test_sents]
    augmented_pred = [predict_tags(augmented_model, aug) for aug in with_knowledge(test_sents)]
    baseline_pred = [predict_tags(baseline_model, aug) for aug in without_knowledge(test_sents)]
    augmented_f1 = score(gold, augmented_pred).micro_f1
    baseline_f1 = score(gold, baseline_pred).micro_f1

    return {
        "seed": seed,
        "mask_mode": mask_mode,
        "properties": [kind for kind in PROPERTY_KINDS if kind in properties],
        "n_train_sentences": len(train_sents),
        "n_test_sentences": len(test_sents),
        "epochs": cfg.epochs,
        "baseline_micro_f1": baseline_f1,
        "augmented_micro_f1": augmented_f1,
        "gap": augmented_f1 - baseline_f1,
    }
