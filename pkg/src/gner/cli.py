"""Command-line entry points: train, evaluate, predict, serve, split-oov."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .corpus import (
    CorpusError,
    combined_schema,
    conll_schema,
    germeval_schema,
    build_char_vocab,
    iob_to_bio,
    parse_conll03,
    parse_germeval,
    write_germeval,
    Sentence,
)
from .embeddings import EmbeddingError, load_store
from .evaluation import evaluate_bio, germeval_combined, split_oov_iv
from .model import ModelConfig, ModelError, ModelFormatError, build_model, load_model, predict, save_model
from .service import ModelRegistry, ServiceError, map_sentence_labels_combined, serve
from .training import TrainConfig, TrainingError, train_two_stage

ENV_BIND = "GNER_BIND"
ENV_PORT = "GNER_PORT"

_SCHEMAS = {"germeval": germeval_schema, "conll": conll_schema, "combined": combined_schema}


def _parse_corpus(path: str | Path, fmt: str) -> list[Sentence]:
    if fmt == "germeval":
        return parse_germeval(path)
    if fmt == "conll":
        sentences = parse_conll03(path)
        return [
            Sentence(s.tokens, iob_to_bio(s.outer_labels), None, s.source_id) for s in sentences
        ]
    raise CorpusError(f"unknown corpus format {fmt!r}")


def _map_combined(sentences: list[Sentence]) -> list[Sentence]:
    return [
        Sentence(
            s.tokens,
            map_sentence_labels_combined(s.outer_labels),
            None,
            s.source_id,
        )
        for s in sentences
    ]


def _cmd_train(args) -> int:
    config_path = Path(args.config)
    spec = json.loads(config_path.read_text(encoding="utf-8"))
    base = config_path.parent

    fmt = spec.get("format", "germeval")
    schema_name = spec.get("schema", "combined" if spec.get("combined_mapping") else fmt)
    schema = _SCHEMAS[schema_name]()

    def load_split(key):
        # Entries are paths (using the global format) or {"path", "format"}
        # objects, so one run can mix both corpus formats.
        entries = spec[key] if isinstance(spec[key], list) else [spec[key]]
        out = []
        for entry in entries:
            if isinstance(entry, dict):
                out += _parse_corpus(base / entry["path"], entry.get("format", fmt))
            else:
                out += _parse_corpus(base / entry, fmt)
        return out

    train_sents = load_split("train_path")
    dev_sents = load_split("dev_path")
    if spec.get("combined_mapping"):
        train_sents = _map_combined(train_sents)
        dev_sents = _map_combined(dev_sents)

    emb_spec = spec["embeddings"]
    store = load_store(base / emb_spec["path"], emb_spec.get("kind", "plain"))

    model_kwargs = {"embedding_kind": emb_spec.get("kind", "plain"), "word_dim": store.dim}
    model_kwargs.update(spec.get("model", {}))
    model_cfg = ModelConfig(label_schema=schema, **model_kwargs)
    train_cfg = TrainConfig(**spec.get("training", {}))
    vocab = build_char_vocab(train_sents) if model_cfg.char_variant != "none" else None
    model = build_model(model_cfg, vocab, seed=train_cfg.seed)

    best, report = train_two_stage(
        model, train_sents, dev_sents, store, train_cfg,
        checkpoint_dir=args.checkpoints,
    )
    save_model(best, args.out)
    if args.report:
        report.save(args.report)
    best_row = max((r for r in report.rows if r.stage == 2), key=lambda r: r.dev_f1)
    print(f"saved {args.out}; best dev F1 {best_row.dev_f1:.4f} ({best_row.checkpoint_id})")
    return 0


def _cmd_evaluate(args) -> int:
    gold = _parse_corpus(args.gold, args.format)
    pred = _parse_corpus(args.pred, args.format)
    if len(gold) != len(pred):
        print(f"error: {len(gold)} gold sentences vs {len(pred)} predicted", file=sys.stderr)
        return 1
    if args.level == "combined":
        report = germeval_combined(
            [s.outer_labels for s in gold],
            [s.labels("inner") for s in gold],
            [s.outer_labels for s in pred],
            [s.labels("inner") for s in pred],
            strict=args.strict,
        )
    else:
        report = evaluate_bio(
            [s.labels(args.level) for s in gold],
            [s.labels(args.level) for s in pred],
            strict=args.strict,
        )
    print(report.render_table())
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    return 0


def _cmd_predict(args) -> int:
    model = load_model(args.model)
    store = load_store(args.embeddings, args.embedding_kind)
    for line in sys.stdin:
        tokens = line.split()
        if not tokens:
            print()
            continue
        print(" ".join(predict(model, store, tokens)))
    return 0


def resolve_bind(bind_flag: str | None, port_flag: int | None) -> tuple[str, int]:
    """CLI flags win over GNER_BIND/GNER_PORT, which win over defaults."""
    bind = bind_flag or os.environ.get(ENV_BIND, "127.0.0.1")
    port = port_flag if port_flag is not None else int(os.environ.get(ENV_PORT, "8080"))
    return bind, port


def _cmd_serve(args) -> int:
    registry = ModelRegistry.load(args.registry)
    bind, port = resolve_bind(args.bind, args.port)
    server = serve(registry, bind, port)
    print(f"serving {registry.names()} on http://{bind}:{port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


def _cmd_split_oov(args) -> int:
    sentences = _parse_corpus(args.data, args.format)
    store = load_store(args.embeddings, args.embedding_kind)
    iv, oov = split_oov_iv(sentences, store)
    write_germeval(iv, f"{args.out_prefix}.iv.tsv")
    write_germeval(oov, f"{args.out_prefix}.oov.tsv")
    print(f"iv: {len(iv)} sentences, oov: {len(oov)} sentences")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gner", description="BiLSTM-CRF named-entity recognition")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a JSON run configuration")
    p.add_argument("--config", required=True, help="JSON file with corpus paths, embeddings and overrides")
    p.add_argument("--out", required=True, help="output model path")
    p.add_argument("--report", help="write the epoch report as JSON lines")
    p.add_argument("--checkpoints", help="directory for per-epoch checkpoints")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("evaluate", help="score a prediction file against gold")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--format", choices=("germeval", "conll"), default="germeval")
    p.add_argument("--level", choices=("outer", "inner", "combined"), default="outer")
    p.add_argument("--strict", action="store_true", help="discard stray I- chunks instead of opening new ones")
    p.add_argument("--out", help="also write the report as JSON")
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("predict", help="label space-tokenized sentences from stdin, one per line")
    p.add_argument("--model", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--embedding-kind", choices=("plain", "fasttext"), default="plain")
    p.set_defaults(fn=_cmd_predict)

    p = sub.add_parser("serve", help="run the JSON inference service")
    p.add_argument("--registry", required=True, help="JSON registry of models to expose")
    p.add_argument("--bind", help=f"bind address (or ${ENV_BIND})")
    p.add_argument("--port", type=int, help=f"port (or ${ENV_PORT})")
    p.set_defaults(fn=_cmd_serve)

    p = sub.add_parser("split-oov", help="split a corpus by embedding vocabulary coverage")
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=("germeval", "conll"), default="germeval")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--embedding-kind", choices=("plain", "fasttext"), default="plain")
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(fn=_cmd_split_oov)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (CorpusError, EmbeddingError, ModelError, ModelFormatError, TrainingError, ServiceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc.filename}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
