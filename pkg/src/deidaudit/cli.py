"""Command-line surface.

Subcommands map to one pipeline stage each; ``audit`` runs the whole
pipeline. ``audit`` with a given seed produces byte-identical outputs to the
staged ``generate`` / ``run`` / ``score`` / ``report`` sequence with the
same config.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .audit import (
    AuditConfig,
    AuditError,
    EXIT_FATAL,
    EXIT_OK,
    EXIT_PARTIAL,
    compute_result,
    emit_report,
    load_inputs,
    run_audit,
    verify_audit,
)
from .backends import BackendRun, run_backend
from .names import polysemy_catalog
from .scoring import evaluate_corpus, score
from .serialize import (
    dumps_report,
    note_record,
    dumps_record,
    read_corpus,
    read_predictions,
    write_corpus,
    write_outcomes,
    write_predictions,
)
from .templates import (
    build_finetune_corpus,
    generate_corpus,
    generate_polysemy_corpus,
    load_template_dir,
)

log = logging.getLogger(__name__)


def _load_config(path: str) -> AuditConfig:
    return AuditConfig.from_file(path)


def cmd_generate(args) -> int:
    if args.config:
        config = _load_config(args.config)
    else:
        if args.seed is None:
            print("error: --seed is required (no implicit entropy)", file=sys.stderr)
            return EXIT_FATAL
        config = AuditConfig(
            seed=args.seed,
            backends=[_null_backend()],
            catalog=args.catalog,
            templates=args.templates,
            reps=args.reps,
            analyses={a: False for a in ("polysemy",)},
        )
    catalog, templates = load_inputs(config)
    corpus = generate_corpus(catalog, templates, config.reps, config.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_corpus(corpus, out / "corpus.ndjson")
    if config.enabled("polysemy"):
        poly = generate_polysemy_corpus(
            catalog, polysemy_catalog(config.polysemy_asian_five),
            templates, config.reps, config.seed,
        )
        write_corpus(poly, out / "polysemy_corpus.ndjson")
        print(f"polysemy notes: {len(poly.notes)}  mentions: {poly.mention_count()}")
    print(f"notes: {len(corpus.notes)}  mentions: {corpus.mention_count()}")
    return EXIT_OK


def _null_backend():
    from .backends import BackendDescriptor

    return BackendDescriptor(name="unused", kind="reference", settings={"lexicon": []})


def cmd_run(args) -> int:
    config = _load_config(args.config)
    descriptor = next((b for b in config.backends if b.name == args.backend), None)
    if descriptor is None:
        print(f"error: backend {args.backend!r} not in config", file=sys.stderr)
        return EXIT_FATAL
    catalog, _ = load_inputs(config)
    corpus = read_corpus(args.corpus)
    try:
        run = run_backend(
            descriptor, corpus, catalog=catalog,
            workers=args.workers or config.effective_workers,
            timeout=config.timeout_s,
        )
    except Exception as exc:
        # a dead backend degrades to an all-notes error ledger, exit 2
        print(f"error: backend failed to start: {exc}", file=sys.stderr)
        message = f"{type(exc).__name__}: {exc}"
        run = BackendRun(
            spans_by_note={n.note_id: [] for n in corpus.notes},
            errors={n.note_id: message for n in corpus.notes},
        )
    write_predictions(run.spans_by_note, run.errors, args.out,
                      ungroundable=run.ungroundable)
    if run.errors:
        print(f"completed with {len(run.errors)} per-note errors", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_score(args) -> int:
    if args.config and args.dir:
        out = Path(args.dir)
        config = _load_config(args.config)
        catalog, templates = load_inputs(config)
        corpus = read_corpus(out / "corpus.ndjson")
        corpus.origin_gender = {t.template_id: t.origin_gender for t in templates}
        poly_corpus = None
        if (out / "polysemy_corpus.ndjson").exists():
            poly_corpus = read_corpus(out / "polysemy_corpus.ndjson")
        runs = {}
        poly_runs = {}
        for descriptor in config.backends:
            spans, errors = read_predictions(
                out / "predictions" / f"{descriptor.name}.ndjson"
            )
            runs[descriptor.name] = BackendRun(spans_by_note=spans, errors=errors)
            poly_path = out / "predictions" / f"{descriptor.name}.polysemy.ndjson"
            if poly_path.exists():
                spans, errors = read_predictions(poly_path)
                poly_runs[descriptor.name] = BackendRun(spans_by_note=spans, errors=errors)
        result = compute_result(
            config, catalog, templates, corpus, runs, poly_corpus, poly_runs
        )
        for name, run in runs.items():
            outcomes = evaluate_corpus(corpus, run.spans_by_note)
            write_outcomes(outcomes, out / "outcomes" / f"{name}.ndjson")
        for name, run in poly_runs.items():
            outcomes = evaluate_corpus(poly_corpus, run.spans_by_note)
            write_outcomes(outcomes, out / "outcomes" / f"{name}.polysemy.ndjson")
        (out / "result.json").write_text(dumps_report(result), encoding="utf-8")
        print(f"result written to {out / 'result.json'}")
        return EXIT_OK
    if not (args.corpus and args.predictions and args.out):
        print("error: score needs either --config/--dir or "
              "--corpus/--predictions/--out", file=sys.stderr)
        return EXIT_FATAL
    # single-backend mode: corpus + predictions -> outcomes + overall score
    corpus = read_corpus(args.corpus)
    spans, errors = read_predictions(args.predictions)
    outcomes = evaluate_corpus(corpus, spans)
    triple = score(outcomes, spans, corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_outcomes(outcomes, out / "outcomes.ndjson")
    payload = {
        "precision": triple.precision,
        "recall": triple.recall,
        "f1": triple.f1,
        "tp": triple.tp,
        "fp": triple.fp,
        "fn": triple.fn,
        "precision_defined": triple.precision_defined,
        "errors": len(errors),
    }
    (out / "score.json").write_text(dumps_report(payload), encoding="utf-8")
    print(dumps_report(payload), end="")
    return EXIT_OK


def cmd_audit(args) -> int:
    config = _load_config(args.config)
    if args.workers is not None:
        config.workers = args.workers
    try:
        _, exit_code = run_audit(config, args.out)
    except AuditError as exc:
        print(f"fatal: {exc}", file=sys.stderr)
        return EXIT_FATAL
    print(f"report written to {args.out}")
    return exit_code


def cmd_report(args) -> int:
    result = json.loads(Path(args.result).read_text(encoding="utf-8"))
    formats = tuple(args.format.split(","))
    written = emit_report(result, args.out, formats=formats)
    for path in written:
        print(path)
    return EXIT_OK


def cmd_corpus(args) -> int:
    from .names import FullName, default_catalog, load_catalog

    catalog = load_catalog(args.catalog) if args.catalog else default_catalog()
    context_docs = load_template_dir(args.contexts)
    popular_pool = None
    if args.popular_pool:
        raw = json.loads(Path(args.popular_pool).read_text(encoding="utf-8"))
        popular_pool = [FullName(n["first"], n["last"], 0) for n in raw]
    corpus = build_finetune_corpus(
        context_docs,
        args.mode,
        catalog,
        popular_pool=popular_pool,
        sizes=(args.train_size, args.val_size),
        seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for split, notes in (("train", corpus.train), ("validation", corpus.validation)):
        with (out / f"{split}.ndjson").open("w", encoding="utf-8") as fh:
            for note in notes:
                fh.write(dumps_record(note_record(note)) + "\n")
    manifest = {
        "mode": corpus.name_mode,
        "sampled_names": {str(k): v for k, v in corpus.sampled_names.items()},
        "held_out_names": {str(k): v for k, v in corpus.held_out_names.items()},
        "train": len(corpus.train),
        "validation": len(corpus.validation),
    }
    (out / "manifest.json").write_text(dumps_report(manifest), encoding="utf-8")
    print(f"train: {len(corpus.train)}  validation: {len(corpus.validation)}")
    return EXIT_OK


def cmd_verify(args) -> int:
    mismatches = verify_audit(args.dir)
    if mismatches:
        for m in mismatches[:20]:
            print(f"MISMATCH {m}", file=sys.stderr)
        return EXIT_FATAL
    print("OK")
    return EXIT_OK


FILE_SCHEMAS = """\
file schemas (all offsets are Unicode code points; NDJSON = one JSON object per line):
  catalog          JSON array of {set_id: 1..16, gender, race, popularity, decade,
                   first_names[20], last_names[20]}; sets sharing a (race,
                   popularity, decade) stratum must share last_names
  template file    UTF-8 text; optional front matter '#origin_gender: male|female'
                   and '#template_id: N'; placeholders {{name:<k>:<part>}} or
                   {{name:<k>:<part>:ctx=<m|f>}} with part in first|last|full
  corpus           NDJSON {note_id, text, template_id, set_id, rep,
                   mentions: [{start, end, part, name_index, ctx, set_gender}]}
  predictions      NDJSON {note_id, spans: [{start, end}], error?}
  outcome dump     NDJSON {note_id, mention_index, recalled, covered_parts}
  line protocol    request {\"id\", \"text\"} -> response {\"id\", \"spans\": [...]}
                   or {\"id\", \"output\": \"Name, Name\"} for llm_grounded backends;
                   chunked requests use id \"<note_id>@<offset>\"
  audit config     JSON; see README for every key; 'seed' is mandatory
"""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deidaudit",
        description="Fairness audit harness for name de-identification systems.",
        epilog=FILE_SCHEMAS,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument(
        "--version", action="version", version=json.dumps(
            {"name": "deidaudit", "version": __version__}
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="populate templates into an evaluation corpus")
    p.add_argument("--config", help="audit config JSON (overrides the flags below)")
    p.add_argument("--catalog", help="name-set JSON file (default: bundled)")
    p.add_argument("--templates", help="template directory (default: bundled)")
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", help="drive one configured backend over a corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--backend", required=True, help="backend name from the config")
    p.add_argument("--corpus", required=True, help="corpus NDJSON file")
    p.add_argument("--out", required=True, help="predictions NDJSON file")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("score", help="match predictions against ground truth")
    p.add_argument("--config", help="with --dir: recompute the full result")
    p.add_argument("--dir", help="audit output directory (standard layout)")
    p.add_argument("--corpus", help="single-backend mode: corpus NDJSON")
    p.add_argument("--predictions", help="single-backend mode: predictions NDJSON")
    p.add_argument("--out", help="single-backend mode: output directory")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("audit", help="generate + run + score + report in one shot")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("report", help="emit tables from a result.json")
    p.add_argument("--result", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", default="csv", help="comma list: csv,json")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("corpus", help="assemble fine-tuning corpora")
    p.add_argument("--mode", choices=("diverse", "popular"), required=True)
    p.add_argument("--catalog")
    p.add_argument("--contexts", required=True, help="context template directory")
    p.add_argument("--popular-pool", help="JSON [{first, last}] for popular mode")
    p.add_argument("--train-size", type=int, default=1000)
    p.add_argument("--val-size", type=int, default=100)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_corpus)

    p = sub.add_parser("verify", help="re-derive a report and compare")
    p.add_argument("--dir", required=True, help="audit output directory")
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, AuditError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
