"""Command-line entry point: ``phideid <subcommand> ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .corpus import (
    PHI_TYPES, CorpusError, Document, format_ann, generate_synthetic_corpus, load_corpus, parse_ann, split_corpus,
    type_support, write_corpus,
)
from .embedding import Config, EmbeddingError
from .evaluation import format_tsv, full_report, write_report
from .features import FeatureError, Resources, build_schema, feature_matrix, fired_names
from .neural.checkpoint import CheckpointError
from .tagger import SchemaMismatchError, Tagger, TaggerError, tag_document
from .tokenizer import conll_lines, project_labels, tokenize_document
from .training import TrainingError, prepare_documents, run_experiment, write_manifest

FEATURE_MODES = {"none": "none", "ehr": "ehr_only", "all": "all"}


class CliError(Exception):
    pass


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phideid", description="De-identification of clinical notes.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="write a synthetic annotated corpus")
    p.add_argument("--n", type=_positive_int, required=True, help="number of notes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("feature-dump", help="print fired features (or gold CoNLL labels) per token")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--features", choices=sorted(FEATURE_MODES), default="all")
    p.add_argument("--doc", help="restrict to one document id")
    p.add_argument("--conll", action="store_true", help="print surface, offsets and gold label instead")
    p.add_argument("--out", type=Path, help="output file (default stdout)")

    p = sub.add_parser("train", help="train one model per seed and write a manifest")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--embeddings", type=Path, help="word-vector text file")
    p.add_argument("--features", choices=sorted(FEATURE_MODES), default="all")
    p.add_argument("--criterion", choices=("f1", "recall"), default="f1")
    seeds = p.add_mutually_exclusive_group()
    seeds.add_argument("--seed", type=int)
    seeds.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--max-epochs", type=_positive_int)
    p.add_argument("--config", type=Path, help="JSON file of Config overrides")
    p.add_argument("--out", type=Path, required=True)

    for name, help_text in (("predict", "write predicted .ann files"),
                            ("evaluate", "score predictions against gold annotations"),
                            ("deidentify", "write notes with PHI replaced by placeholders")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--corpus", type=Path, required=True)
        p.add_argument("--model", type=Path, required=name != "evaluate")
        p.add_argument("--features", choices=sorted(FEATURE_MODES),
                       help="expected feature mode; must match the model")
        p.add_argument("--out", type=Path, required=True)
        if name == "evaluate":
            p.add_argument("--pred", type=Path, help="directory of predicted .ann files instead of --model")
    return parser


# --- subcommands -----------------------------------------------------------------

def cmd_gen_corpus(args) -> int:
    docs = generate_synthetic_corpus(args.n, args.seed)
    write_corpus(docs, args.out)
    support = type_support(docs)
    print(f"wrote {len(docs)} notes to {args.out}")
    for t in PHI_TYPES:
        print(f"{t.value}\t{support[t]}")
    return 0


def cmd_feature_dump(args) -> int:
    docs = load_corpus(args.corpus, require_annotations=False)
    if args.doc:
        docs = [d for d in docs if d.doc_id == args.doc]
        if not docs:
            raise CliError(f"document {args.doc!r} not found")
    chunks = []
    if args.conll:
        for doc in docs:
            seqs = tokenize_document(doc.text, doc_id=doc.doc_id)
            chunks.append(conll_lines(seqs, [project_labels(s, doc.annotations) for s in seqs]))
    else:
        schema = build_schema(FEATURE_MODES[args.features])
        resources = Resources.load() if len(schema) else None
        for doc in docs:
            for seq in tokenize_document(doc.text, doc_id=doc.doc_id):
                m = feature_matrix(seq, doc.metadata, schema, resources)
                chunks.extend(f"{tok.surface}\t{','.join(fired_names(row, schema))}\n"
                              for tok, row in zip(seq.tokens, m))
                chunks.append("\n")
    text = "".join(chunks)
    if args.out:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def effective_config(args) -> Config:
    cfg = Config.from_file(args.config) if args.config else Config()
    if args.max_epochs is not None:
        cfg = replace(cfg, max_epochs=args.max_epochs)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def cmd_train(args) -> int:
    if args.embeddings is not None and not args.embeddings.is_file():
        raise CliError(f"embeddings file {args.embeddings} not found")
    cfg = effective_config(args)
    seeds = args.seeds or [cfg.seed]
    schema = build_schema(FEATURE_MODES[args.features])
    docs = load_corpus(args.corpus)
    split = split_corpus(docs, seed=args.split_seed)
    by_id = {d.doc_id: d for d in docs}
    resources = Resources.load() if len(schema) else None
    parts = [prepare_documents([by_id[i] for i in ids], resources, schema)
             for ids in (split.train, split.validation, split.test)]
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "split.json").write_text(split.to_json())
    runs = run_experiment(cfg, schema, *parts, seeds=seeds, criterion=args.criterion, out_dir=args.out,
                          embeddings=args.embeddings, source_schema=schema)
    manifest = runs.manifest(cfg, schema, {
        "features": args.features,
        "corpus": str(args.corpus),
        "embeddings": str(args.embeddings) if args.embeddings else None,
        "split_seed": args.split_seed,
    })
    write_manifest(args.out / "manifest.json", manifest)
    for r in runs.runs:
        m = r.selected.validation["binary-hipaa"]
        print(f"seed {r.seed}: selected epoch {r.selected.epoch} by {args.criterion} "
              f"(val P {m.precision:.2f} R {m.recall:.2f} F1 {m.f1:.2f}) -> {r.selected.checkpoint}")
    mean = runs.mean["binary-hipaa"]
    print(f"mean test binary-hipaa: P {mean.precision:.2f} R {mean.recall:.2f} F1 {mean.f1:.2f}")
    return 0


def _load_model(args) -> Tagger:
    if not args.model.is_file():
        raise CliError(f"model {args.model} not found")
    model = Tagger.load(args.model)
    if args.features is not None:
        expected = build_schema(FEATURE_MODES[args.features])
        if expected.hash != model.schema.hash:
            raise SchemaMismatchError(
                f"--features {args.features} does not match the model's feature schema ({len(model.schema)} features)")
    return model


def _tag_corpus(model: Tagger, docs: Sequence[Document]):
    resources = Resources.load() if len(model.schema) else None
    for doc in docs:
        yield doc, tag_document(model, doc.text, doc.metadata, resources, doc.doc_id)


def cmd_predict(args) -> int:
    model = _load_model(args)
    docs = load_corpus(args.corpus, require_annotations=False)
    args.out.mkdir(parents=True, exist_ok=True)
    for doc, (_, _, spans) in _tag_corpus(model, docs):
        (args.out / f"{doc.doc_id}.ann").write_text(format_ann(spans), encoding="utf-8")
    print(f"predicted {len(docs)} notes into {args.out}")
    return 0


def redact(text: str, spans) -> str:
    out, pos = [], 0
    for a in sorted(spans, key=lambda a: a.start):
        out.append(text[pos:a.start])
        out.append(f"[**{a.phi_type.value.upper()}**]")
        pos = a.end
    out.append(text[pos:])
    return "".join(out)


def cmd_deidentify(args) -> int:
    model = _load_model(args)
    docs = load_corpus(args.corpus, require_annotations=False)
    args.out.mkdir(parents=True, exist_ok=True)
    for doc, (_, _, spans) in _tag_corpus(model, docs):
        with open(args.out / f"{doc.doc_id}.txt", "w", encoding="utf-8", newline="") as fh:
            fh.write(redact(doc.text, spans))
    print(f"de-identified {len(docs)} notes into {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    docs = load_corpus(args.corpus)
    gold, pred = [], []
    if args.pred is not None:
        for doc in docs:
            path = args.pred / f"{doc.doc_id}.ann"
            if not path.exists():
                raise CliError(f"no prediction for {doc.doc_id} in {args.pred}")
            spans = parse_ann(doc.doc_id, path.read_text(encoding="utf-8"))
            for seq in tokenize_document(doc.text, doc_id=doc.doc_id):
                gold.append(project_labels(seq, doc.annotations))
                pred.append(project_labels(seq, spans))
    elif args.model is not None:
        model = _load_model(args)
        for doc, (seqs, labels, _) in _tag_corpus(model, docs):
            gold.extend(project_labels(s, doc.annotations) for s in seqs)
            pred.extend(labels)
    else:
        raise CliError("evaluate needs --pred or --model")
    report = full_report(gold, pred)
    args.out.mkdir(parents=True, exist_ok=True)
    write_report(report, args.out / "report.tsv", args.out / "report.json")
    sys.stdout.write(format_tsv(report))
    return 0


COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "feature-dump": cmd_feature_dump,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "deidentify": cmd_deidentify,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (CliError, CorpusError, FeatureError, EmbeddingError, TaggerError, TrainingError,
            CheckpointError, OSError) as exc:
        print(f"phideid {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
