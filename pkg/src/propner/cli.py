"""Command-line entry point and dataset I/O.

Dataset files are CoNLL-style: sentence blocks separated by blank lines,
an optional ``# id <string>`` header per block, and token lines
``token _ _ TAG`` (the tag column is absent for unlabeled data). Every
subcommand accepts ``--config FILE`` with ``key = value`` lines supplying
any flag; explicit command-line flags win.

Exit codes: 0 success, 1 validation or parse error, 2 internal invariant
violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from propner import augmenter
from propner.encoder import (
    TrainConfig,
    TrainingDivergedError,
    load_model,
    predict,
    predict_tags,
    save_model,
    train,
)
from propner.ensemble import WeightedPredictions, kfold_split, weighted_vote
from propner.evaluator import score
from propner.kbstore import (
    FULL_PROPERTY_MASK,
    DumpErrorReport,
    KnowledgeBaseInconsistencyError,
    build_knowledge_base,
    coverage_rate,
    load_kb,
    parse_dump,
    save_kb,
)
from propner.matcher import Sentence, build_matcher, retrieve
from propner.synthetic import SyntheticConfig, run_synthetic_ab

logger = logging.getLogger(__name__)


class ConllParseError(ValueError):
    pass


def read_conll(path) -> list[Sentence]:
    """Parse a dataset file into sentences; block index becomes the id when
    no ``# id`` header is present."""
    sentences: list[Sentence] = []
    tokens: list[str] = []
    tags: list[str] = []
    sentence_id: str | None = None
    has_tags: bool | None = None

    def flush() -> None:
        nonlocal tokens, tags, sentence_id, has_tags
        if tokens:
            sid = sentence_id if sentence_id is not None else str(len(sentences))
            sentences.append(Sentence(sid, tokens, tags if has_tags else None))
        elif sentence_id is not None:
            raise ConllParseError(f"header for id {sentence_id!r} has no token lines")
        tokens, tags, sentence_id, has_tags = [], [], None, None

    with open(path, "r", encoding="utf-8") as handle:
        for line_number, raw in enumerate(handle, start=1):
            stripped = raw.strip()
            if not stripped:
                flush()
                continue
            if stripped.startswith("#"):
                if tokens:
                    raise ConllParseError(f"line {line_number}: comment inside a sentence block")
                parts = stripped[1:].split()
                if len(parts) < 2 or parts[0] != "id":
                    raise ConllParseError(f"line {line_number}: header must look like '# id <string>'")
                sentence_id = parts[1]
                continue
            fields = stripped.split()
            if len(fields) == 4:
                token, tag = fields[0], fields[3]
            elif len(fields) == 3:
                token, tag = fields[0], None
            else:
                raise ConllParseError(f"line {line_number}: expected 3 or 4 columns, got {len(fields)}")
            tagged = tag is not None
            if has_tags is None:
                has_tags = tagged
            elif has_tags != tagged:
                raise ConllParseError(f"line {line_number}: mixed labeled and unlabeled lines in one block")
            tokens.append(token)
            if tagged:
                tags.append(tag)
    flush()
    return sentences


def write_conll(sentences: list[Sentence], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        for sentence in sentences:
            handle.write(f"# id {sentence.id}\n")
            for i, token in enumerate(sentence.tokens):
                if sentence.gold_tags is not None:
                    handle.write(f"{token} _ _ {sentence.gold_tags[i]}\n")
                else:
                    handle.write(f"{token} _ _\n")
            handle.write("\n")


def _write_tagged(rows: list[tuple[str, list[str], list[str]]], path) -> None:
    """Prediction output: '# id' headers and token<TAB>tag lines."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        for sid, tokens, tags in rows:
            handle.write(f"# id {sid}\n")
            for token, tag in zip(tokens, tags):
                handle.write(f"{token}\t{tag}\n")
            handle.write("\n")


def _read_tag_sequences(path) -> list[list[str]]:
    """Tag sequences from either prediction output (2 columns) or dataset
    format (4 columns with tags)."""
    result: list[list[str]] = []
    tags: list[str] = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, raw in enumerate(handle, start=1):
            stripped = raw.strip()
            if not stripped:
                if tags:
                    result.append(tags)
                    tags = []
                continue
            if stripped.startswith("#"):
                continue
            fields = stripped.split()
            if len(fields) == 2 or len(fields) == 4:
                tags.append(fields[-1])
            else:
                raise ConllParseError(f"line {line_number}: expected 2 or 4 columns, got {len(fields)}")
    if tags:
        result.append(tags)
    return result


def _parse_properties(text: str) -> frozenset[str]:
    kinds = frozenset(part.strip() for part in text.split(",") if part.strip())
    if not kinds:
        raise argparse.ArgumentTypeError("property list is empty")
    unknown = kinds - FULL_PROPERTY_MASK
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown property kinds: {sorted(unknown)}")
    return kinds


def _parse_weights(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad weight list {text!r}: {exc}")


def _dump_json(data, path: str | None) -> None:
    text = json.dumps(data, sort_keys=True, ensure_ascii=False, indent=2) + "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_build_kb(args) -> int:
    report = DumpErrorReport()
    with open(args.dump, "rb") as handle:
        kb = build_knowledge_base(parse_dump(handle, report), args.lang, args.properties, qid_cap=args.qid_cap)
    save_kb(kb, args.out)
    for error in report:
        logger.warning("dump line %d skipped: %s", error.line_number, error.message)
    print(f"built kb: {len(kb.surface_index)} surfaces, {len(kb.contexts)} entities, {len(report)} bad lines")
    return 0


def cmd_coverage(args) -> int:
    kb = load_kb(args.kb)
    dataset = read_conll(args.data)
    print(json.dumps({"coverage_rate": coverage_rate(kb, dataset)}, sort_keys=True))
    return 0


def cmd_retrieve(args) -> int:
    kb = load_kb(args.kb)
    matcher = build_matcher(kb)
    with open(args.out, "w", encoding="utf-8", newline="") as handle:
        for sentence in read_conll(args.data):
            pairs = retrieve(kb, matcher, sentence)
            row = {
                "id": sentence.id,
                "pairs": [
                    {"start": m.start, "end": m.end, "qid": m.qid, "context": m.context} for m in pairs
                ],
            }
            handle.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")
    return 0


def cmd_augment(args) -> int:
    kb = load_kb(args.kb)
    matcher = build_matcher(kb)
    augs = []
    for sentence in read_conll(args.data):
        pairs = retrieve(kb, matcher, sentence)
        augs.append(augmenter.assemble(sentence, pairs, args.max_len, args.mask_mode))
    augmenter.write_jsonl(augs, args.out)
    return 0


def cmd_train(args) -> int:
    dataset = augmenter.read_jsonl(args.aug)
    config = TrainConfig(
        d_model=args.d_model,
        n_heads=args.heads,
        n_layers=args.layers,
        ff_dim=args.ff_dim,
        max_len=args.max_len,
        lr=args.lr,
        epochs=args.epochs,
        seed=args.seed,
    )
    model = train(dataset, config)
    save_model(model, args.out)
    print(f"trained {args.epochs} epochs, final loss {model.epoch_losses[-1]:.6f}" if model.epoch_losses else "trained")
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.model)
    rows = []
    sidecar_rows = []
    for aug in augmenter.read_jsonl(args.aug):
        tags = predict_tags(model, aug)
        sentence_tokens = aug.tokens[1 : aug.n_sentence + 1]
        rows.append((aug.sentence_id, sentence_tokens, tags))
        sidecar_rows.append(
            {
                "id": aug.sentence_id,
                "tokens": sentence_tokens,
                "labels": model.labels,
                "dist": predict(model, aug).tolist(),
            }
        )
    _write_tagged(rows, args.out)
    with open(str(args.out) + ".dist.jsonl", "w", encoding="utf-8", newline="") as handle:
        for row in sidecar_rows:
            handle.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")
    return 0


def cmd_split(args) -> int:
    plan = kfold_split(read_conll(args.data), args.k, args.seed)
    _dump_json({"k": plan.k, "seed": plan.seed, "assignments": plan.assignments}, args.out)
    return 0


def _read_sidecar(path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def cmd_vote(args) -> int:
    folds = [_read_sidecar(path) for path in args.preds]
    if len(args.weights) != len(folds):
        raise ValueError(f"{len(args.weights)} weights for {len(folds)} prediction files")
    first = folds[0]
    labels = first[0]["labels"] if first else []
    for fold_index, fold in enumerate(folds):
        if [row["id"] for row in fold] != [row["id"] for row in first]:
            raise ValueError(f"prediction file {args.preds[fold_index]} covers different sentences")
        for row in fold:
            if row["labels"] != labels:
                raise ValueError("label sets differ across prediction files")
    preds = WeightedPredictions(
        labels=labels,
        weights=args.weights,
        distributions=[[np.asarray(row["dist"], dtype=np.float64) for row in fold] for fold in folds],
    )
    voted = weighted_vote(preds, hard=args.hard)
    rows = [(row["id"], row["tokens"], tags) for row, tags in zip(first, voted)]
    _write_tagged(rows, args.out)
    return 0


def cmd_score(args) -> int:
    gold_sentences = read_conll(args.gold)
    if any(s.gold_tags is None for s in gold_sentences):
        raise ValueError("gold file contains unlabeled sentences")
    gold = [list(s.gold_tags) for s in gold_sentences]
    pred = _read_tag_sequences(args.pred)
    report = score(gold, pred)
    if args.report == "json":
        _dump_json(report.to_dict(), None)
    else:
        for name, cs in sorted(report.per_class.items()):
            print(f"{name}: P={cs.precision:.4f} R={cs.recall:.4f} F1={cs.f1:.4f} (tp={cs.tp} fp={cs.fp} fn={cs.fn})")
        print(f"micro: P={report.micro_precision:.4f} R={report.micro_recall:.4f} F1={report.micro_f1:.4f}")
        print(f"macro F1: {report.macro_f1:.4f}")
    return 0


def cmd_synthetic_ab(args) -> int:
    config = SyntheticConfig(epochs=args.epochs) if args.epochs is not None else SyntheticConfig()
    report = run_synthetic_ab(args.seed, properties=args.properties, mask_mode=args.mask_mode, config=config)
    _dump_json(report, args.out)
    return 0


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="key = value file supplying defaults for any flag")
    sub.add_argument("--verbose", action="store_true", help="log at INFO level")


def _build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="propner", description=__doc__.splitlines()[0])
    commands = parser.add_subparsers(dest="command", required=True)
    subs: dict[str, argparse.ArgumentParser] = {}

    def command(name: str, help_text: str, fn) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=help_text)
        sub.set_defaults(func=fn)
        _add_common(sub)
        subs[name] = sub
        return sub

    sub = command("build-kb", "compile a dump into a knowledge base directory", cmd_build_kb)
    sub.add_argument("--dump", required=True, help="JSON-lines entity dump")
    sub.add_argument("--lang", required=True, help="language code for names and labels")
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--properties", type=_parse_properties, default=FULL_PROPERTY_MASK,
                     help="comma list of instanceof,subclassof,occupation")
    sub.add_argument("--qid-cap", type=int, default=4, help="max qids kept per surface")

    sub = command("coverage", "fraction of gold mentions found in the kb", cmd_coverage)
    sub.add_argument("--kb", required=True)
    sub.add_argument("--data", required=True)

    sub = command("retrieve", "entity/context pairs per sentence as JSON lines", cmd_retrieve)
    sub.add_argument("--kb", required=True)
    sub.add_argument("--data", required=True)
    sub.add_argument("--out", required=True)

    sub = command("augment", "assemble model inputs with entity-aware masks", cmd_augment)
    sub.add_argument("--kb", required=True)
    sub.add_argument("--data", required=True)
    sub.add_argument("--out", required=True)
    sub.add_argument("--max-len", type=int, default=256)
    sub.add_argument("--mask-mode", choices=augmenter.MASK_MODES, default="default")

    sub = command("train", "train the tagger on augmented inputs", cmd_train)
    sub.add_argument("--aug", required=True)
    sub.add_argument("--out", required=True)
    sub.add_argument("--seed", type=int, required=True)
    sub.add_argument("--epochs", type=int, default=50)
    sub.add_argument("--lr", type=float, default=0.05)
    sub.add_argument("--d-model", type=int, default=32)
    sub.add_argument("--heads", type=int, default=4)
    sub.add_argument("--layers", type=int, default=2)
    sub.add_argument("--ff-dim", type=int, default=64)
    sub.add_argument("--max-len", type=int, default=256)

    sub = command("predict", "tag augmented inputs; writes tags plus a .dist.jsonl sidecar", cmd_predict)
    sub.add_argument("--model", required=True)
    sub.add_argument("--aug", required=True)
    sub.add_argument("--out", required=True)

    sub = command("split", "deterministic k-fold assignment", cmd_split)
    sub.add_argument("--data", required=True)
    sub.add_argument("--k", type=int, default=8)
    sub.add_argument("--seed", type=int, required=True)
    sub.add_argument("--out", help="plan file; stdout when omitted")

    sub = command("vote", "F1-weighted vote over prediction sidecars", cmd_vote)
    sub.add_argument("--preds", nargs="+", required=True, help="one .dist.jsonl file per fold")
    sub.add_argument("--weights", type=_parse_weights, required=True, help="comma list, one weight per fold")
    sub.add_argument("--hard", action="store_true", help="one-hot votes instead of distributions")
    sub.add_argument("--out", required=True)

    sub = command("score", "entity-level micro/macro F1", cmd_score)
    sub.add_argument("--gold", required=True)
    sub.add_argument("--pred", required=True)
    sub.add_argument("--report", choices=("json", "text"), default="text")

    sub = command("synthetic-ab", "baseline vs knowledge-augmented A/B on a seeded corpus", cmd_synthetic_ab)
    sub.add_argument("--seed", type=int, required=True)
    sub.add_argument("--out", help="report file; stdout when omitted")
    sub.add_argument("--properties", type=_parse_properties, default=FULL_PROPERTY_MASK)
    sub.add_argument("--mask-mode", choices=augmenter.MASK_MODES, default="default")
    sub.add_argument("--epochs", type=int, default=None)

    return parser, subs


def _scan_config_path(argv: list[str]) -> str | None:
    for i, item in enumerate(argv):
        if item == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if item.startswith("--config="):
            return item.split("=", 1)[1]
    return None


def _apply_config_defaults(sub: argparse.ArgumentParser, path: str) -> None:
    by_flag = {}
    for action in sub._actions:
        for option in action.option_strings:
            if option.startswith("--"):
                by_flag[option[2:]] = action
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{line_number}: expected 'key = value'")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            action = by_flag.get(key)
            if action is None or key in ("config", "help"):
                raise ValueError(f"{path}:{line_number}: unknown config key {key!r}")
            if action.nargs == 0 and action.const is True:
                converted: object = value.lower() in ("1", "true", "yes", "on")
            elif action.nargs not in (None, 1):
                converted = [action.type(part) if action.type else part for part in value.split()]
            elif action.type is not None:
                converted = action.type(value)
            else:
                converted = value
            sub.set_defaults(**{action.dest: converted})
            action.required = False


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser, subs = _build_parser()

    config_path = _scan_config_path(argv)
    if config_path is not None and argv and argv[0] in subs:
        try:
            _apply_config_defaults(subs[argv[0]], config_path)
        except (OSError, ValueError, argparse.ArgumentTypeError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1

    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING)
    try:
        return int(args.func(args) or 0)
    except (KnowledgeBaseInconsistencyError, AssertionError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, TrainingDivergedError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry_point() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry_point()
