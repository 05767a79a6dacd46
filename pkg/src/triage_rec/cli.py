"""Command-line entry point wiring the modules into reproducible pipelines.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training failure.
Failures print one machine-parsable JSON line on stderr. All randomness
flows from the root --seed; --deterministic forces single-threaded runs so
artifacts are byte-reproducible.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict

import numpy as np

from . import __version__
from .audit import CausalityAudit
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config, resolve_threads
from .corpus import (
    IngestReport,
    SplitSpec,
    format_split_table,
    ingest,
    make_email_id,
    read_jsonl,
    split_emails,
)
from .errors import DataError, TriageError, UsageError
from .evaluation import auroc, contrast_histogram, ensemble, histogram_csv
from .experiments import ablation_cells, run_matrix
from .pipeline import CellSpec, PipelineContext, prepare_context, train_cell
from .synthgen import GeneratorConfig, default_split, generate, write_corpus


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="triage-rec", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="root random seed")
    common.add_argument("--threads", type=int, help="worker threads (env TRIAGE_REC_THREADS)")
    common.add_argument("--deterministic", action="store_true",
                        help="single-threaded, byte-reproducible artifacts")

    split = argparse.ArgumentParser(add_help=False)
    split.add_argument("--train-end", type=int, help="train partition upper bound (epoch s)")
    split.add_argument("--validation-end", type=int)
    split.add_argument("--test-end", type=int)
    split.add_argument("--manifest", help="synth manifest to take split bounds from")

    cell = argparse.ArgumentParser(add_help=False)
    cell.add_argument("--content", default="tfidf", help="tfidf | embed | cnn")
    cell.add_argument("--classifier", default="gbdt", help="lr | gbdt | mlp")
    cell.add_argument("--mode", default="posneg", help="received | pos | posneg")
    cell.add_argument("--history", type=int, default=10)
    cell.add_argument("--aggregation", default=None,
                      help="uniform | learned_global | dot | concat")
    cell.add_argument("--similarity", default="on", help="on | off")
    cell.add_argument("--vocab", help="reuse a saved vocabulary")
    cell.add_argument("--embeddings", help="reuse saved word vectors")
    cell.add_argument("--set", action="append", default=[],
                      help="hyperparameter override key=value (repeatable)")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic mailbox")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("ingest", parents=[common, split], help="ingest and report")
    p.add_argument("--corpus", required=True)
    p.add_argument("--report", help="write the ingestion report JSON here")

    p = sub.add_parser("vocab", parents=[common, split], help="build the n-gram vocabulary")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("embed", parents=[common, split], help="train skip-gram embeddings")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", parents=[common, split, cell], help="train one model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True, help="checkpoint output path")
    p.add_argument("--metrics", help="write metrics JSON here")
    p.add_argument("--audit", help="write a causality audit summary here")

    p = sub.add_parser("eval", parents=[common, split, cell],
                       help="run an experiment matrix (comma lists allowed on cell axes)")
    p.add_argument("--corpus", required=True)
    p.add_argument("--report", required=True, help="report CSV path")
    p.add_argument("--seeds", type=int, help="seeds per deep cell")
    p.add_argument("--histogram", action="store_true",
                   help="also emit the similarity-contrast histogram")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--audit", help="write a causality audit summary here")

    p = sub.add_parser("ablate", parents=[common, split, cell], help="one ablation axis")
    p.add_argument("--corpus", required=True)
    p.add_argument("--axis", required=True,
                   help="similarity | user_mode | history | aggregation | content")
    p.add_argument("--report", required=True)
    p.add_argument("--seeds", type=int)
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("ensemble", parents=[common, split, cell],
                       help="average predicted probabilities of saved models")
    p.add_argument("--corpus", required=True)
    p.add_argument("--models", required=True, help="comma-separated checkpoints")
    p.add_argument("--report", help="write ensemble metrics JSON here")

    p = sub.add_parser("predict", parents=[common, split, cell],
                       help="score new emails against a checkpoint")
    p.add_argument("--corpus", required=True, help="mailbox JSONL providing history")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="JSONL of new messages to score")
    p.add_argument("--out", required=True, help="probability CSV output")
    return parser


# -- helpers ----------------------------------------------------------------


def _load_cfg(args) -> dict:
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "deterministic", False):
        cfg["deterministic"] = True
    return cfg


def _split_spec(args, cfg) -> SplitSpec:
    vals = {}
    for key in ("train_end", "validation_end", "test_end"):
        flag = getattr(args, key, None)
        vals[key] = flag if flag is not None else cfg["split"].get(key)
    if any(v is None for v in vals.values()) and getattr(args, "manifest", None):
        with open(args.manifest, "r", encoding="utf-8") as fh:
            mani = json.load(fh)
        for key in vals:
            if vals[key] is None:
                vals[key] = mani.get("split", {}).get(key)
    if any(v is None for v in vals.values()):
        raise UsageError(
            "split boundaries missing: pass --train-end/--validation-end/--test-end, "
            "a config file, or --manifest"
        )
    return SplitSpec(int(vals["train_end"]), int(vals["validation_end"]), int(vals["test_end"]))


def _read_corpus(path: str, report: IngestReport) -> list:
    try:
        return list(read_jsonl(path, report))
    except OSError as exc:
        raise DataError(f"cannot read corpus {path}: {exc}") from exc


def _context(args, cfg, audit=None) -> PipelineContext:
    spec = _split_spec(args, cfg)
    report = IngestReport()
    messages = _read_corpus(args.corpus, report)
    ctx = prepare_context(messages, spec, cfg, audit=audit, report=report)
    if getattr(args, "vocab", None):
        from .textproc import Vocabulary

        ctx.vocab = Vocabulary.load(args.vocab)
    if getattr(args, "embeddings", None):
        from .embeddings import load_embeddings

        table, _ = load_embeddings(args.embeddings, ctx.unigrams)
        ctx.embeddings = table
    return ctx


def _parse_overrides(pairs: list[str]) -> dict:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise UsageError(f"--set expects key=value, got {pair!r}")
        key, val = pair.split("=", 1)
        try:
            out[key] = json.loads(val)
        except json.JSONDecodeError:
            out[key] = val
    return out


def _sim_flag(value: str) -> bool:
    if value not in ("on", "off"):
        raise UsageError(f"--similarity must be on or off, got {value!r}")
    return value == "on"


def _cells_from_args(args) -> list[CellSpec]:
    """Cross comma-separated axis values into the cell list."""
    contents = args.content.split(",")
    classifiers = args.classifier.split(",")
    modes = args.mode.split(",")
    sims = [_sim_flag(s) for s in args.similarity.split(",")]
    hists = [int(h) for h in str(args.history).split(",")]
    cells = []
    for c in contents:
        for cl in classifiers:
            for m in modes:
                for s in sims:
                    for h in hists:
                        cells.append(
                            CellSpec(
                                content=c,
                                user_mode=m,
                                classifier=cl,
                                similarity=s,
                                history_len=h,
                                aggregation=args.aggregation,
                            )
                        )
    return cells


# -- subcommands --------------------------------------------------------------


def cmd_synth(args) -> int:
    import os

    cfg = _load_cfg(args)
    overrides = dict(cfg.get("synth") or {})
    if args.seed is not None:
        overrides["seed"] = args.seed
    gen_cfg = GeneratorConfig(**overrides)
    corpus = generate(gen_cfg)
    os.makedirs(args.out, exist_ok=True)
    jsonl = os.path.join(args.out, "corpus.jsonl")
    manifest = os.path.join(args.out, "manifest.json")
    write_corpus(corpus, jsonl, manifest)
    spec = default_split(gen_cfg)
    with open(manifest, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    doc["split"] = asdict(spec)
    with open(manifest, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(json.dumps({
        "corpus": jsonl,
        "manifest": manifest,
        "messages": len(corpus.messages),
        "positive_ratio": corpus.positive_ratio,
        "bayes_auroc": corpus.bayes,
    }, sort_keys=True))
    return 0


def cmd_ingest(args) -> int:
    cfg = _load_cfg(args)
    spec = _split_spec(args, cfg)
    report = IngestReport()
    messages = _read_corpus(args.corpus, report)
    index, report = ingest(messages, spec, report)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
            fh.write("\n")
    print(format_split_table(report.splits))
    empty = [k for k, v in report.splits.items() if v["count"] == 0]
    if empty:
        print(f"warning: empty partition(s): {', '.join(empty)}", file=sys.stderr)
    print(json.dumps({k: v for k, v in report.__dict__.items() if k != "splits"},
                     sort_keys=True))
    return 0


def cmd_vocab(args) -> int:
    cfg = _load_cfg(args)
    ctx = _context(args, cfg)
    ctx.vocab.save(args.out)
    print(json.dumps({"terms": len(ctx.vocab), "n_docs": ctx.vocab.n_docs, "out": args.out},
                     sort_keys=True))
    return 0


def cmd_embed(args) -> int:
    from .embeddings import save_embeddings

    cfg = _load_cfg(args)
    ctx = _context(args, cfg)
    table = ctx.embeddings
    save_embeddings(args.out, table, ctx.unigrams)
    print(json.dumps({"tokens": len(ctx.unigrams.tokens), "dim": table.dim, "out": args.out},
                     sort_keys=True))
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    audit = CausalityAudit(()) if args.audit else None
    ctx = _context(args, cfg, audit=audit)
    cell = CellSpec(
        content=args.content,
        classifier=args.classifier,
        user_mode=args.mode,
        similarity=_sim_flag(args.similarity),
        history_len=args.history,
        aggregation=args.aggregation,
        seed=cfg["seed"],
    )
    run = train_cell(ctx, cell, _parse_overrides(args.set))
    save_checkpoint(args.model, run.model, run.train_config, cfg["seed"])
    metrics = {
        "cell": cell.name(),
        "val_auroc": None if not np.isfinite(run.val_auroc) else run.val_auroc,
        "test_auroc": run.test_auroc,
        "seconds": run.seconds,
        "model": args.model,
    }
    if args.metrics:
        with open(args.metrics, "w", encoding="utf-8") as fh:
            json.dump(metrics, fh, sort_keys=True, indent=2)
            fh.write("\n")
    if audit is not None:
        with open(args.audit, "w", encoding="utf-8") as fh:
            fh.write(audit.to_json())
            fh.write("\n")
    print(json.dumps(metrics, sort_keys=True))
    return 0


def _maybe_histogram(args, cfg, report, base_path) -> None:
    if not getattr(args, "histogram", False):
        return
    bins = int(cfg["evaluation"]["histogram_bins"])
    for result in report.results:
        if not (result.cell.similarity and result.cell.user_mode == "posneg" and result.runs):
            continue
        run = result.runs[0]
        if run.sim_features is None:
            continue
        rows = contrast_histogram(run.sim_features[:, 2], run.test_labels, bins)
        csv_path = f"{base_path}.contrast.{result.cell.name()}.csv"
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write(histogram_csv(rows))
        if not getattr(args, "no_figures", False) and cfg["evaluation"]["figures"]:
            from .plots import render_contrast_histogram

            render_contrast_histogram(rows, csv_path.replace(".csv", ".png"))


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    audit = CausalityAudit(()) if args.audit else None
    ctx = _context(args, cfg, audit=audit)
    threads = 1 if cfg["deterministic"] else resolve_threads(args.threads, cfg)
    cells = _cells_from_args(args)
    report = run_matrix(ctx, cells, seeds=args.seeds, overrides=_parse_overrides(args.set),
                        threads=threads)
    json_path = args.report.replace(".csv", "") + ".json"
    report.save(args.report, json_path)
    if not args.no_figures and cfg["evaluation"]["figures"]:
        from .plots import render_matrix_figure

        render_matrix_figure([r.to_json() for r in report.results],
                             args.report.replace(".csv", "") + ".png")
    _maybe_histogram(args, cfg, report, args.report.replace(".csv", ""))
    if audit is not None:
        with open(args.audit, "w", encoding="utf-8") as fh:
            fh.write(audit.to_json())
            fh.write("\n")
    print(report.to_csv(), end="")
    failed = [r for r in report.results if r.status != "ok"]
    return 3 if len(failed) == len(report.results) and report.results else 0


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    ctx = _context(args, cfg)
    threads = 1 if cfg["deterministic"] else resolve_threads(args.threads, cfg)
    base = CellSpec(
        content=args.content,
        classifier=args.classifier,
        user_mode=args.mode,
        similarity=_sim_flag(args.similarity),
        history_len=args.history,
        aggregation=args.aggregation,
        seed=cfg["seed"],
    )
    cells = ablation_cells(base, args.axis, cfg)
    report = run_matrix(ctx, cells, seeds=args.seeds, overrides=_parse_overrides(args.set),
                        threads=threads)
    report.save(args.report, args.report.replace(".csv", "") + ".json")
    if not args.no_figures and cfg["evaluation"]["figures"]:
        from .plots import render_history_sweep, render_matrix_figure

        fig_path = args.report.replace(".csv", "") + ".png"
        rows = [r.to_json() for r in report.results]
        if args.axis == "history":
            render_history_sweep(rows, fig_path)
        else:
            render_matrix_figure(rows, fig_path)
    print(report.to_csv(), end="")
    return 0


def cmd_ensemble(args) -> int:
    cfg = _load_cfg(args)
    ctx = _context(args, cfg)
    paths = args.models.split(",")
    if len(paths) < 2:
        raise UsageError("--models needs at least two comma-separated checkpoints")
    prob_lists, labels, component = [], None, []
    for path in paths:
        model, doc = load_checkpoint(path)
        probs, labs = _score_test_partition(ctx, model, doc)
        prob_lists.append(probs)
        if labels is None:
            labels = labs
        component.append({"model": path, "test_auroc": auroc(probs, labs)})
    combined = ensemble(prob_lists)
    result = {
        "components": component,
        "ensemble_auroc": auroc(combined, labels),
        "n_examples": int(labels.size),
    }
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(result, fh, sort_keys=True, indent=2)
            fh.write("\n")
    print(json.dumps(result, sort_keys=True))
    return 0


def _cell_from_checkpoint(model, doc) -> CellSpec:
    """Recover the cell a checkpoint was trained for, from its saved name."""
    name = (doc.get("train_config") or {}).get("cell")
    if not name:
        raise DataError("checkpoint carries no cell metadata")
    try:
        content, classifier, mode, sim, hpart = name.split("-")
        return CellSpec(
            content=content,
            classifier=classifier,
            user_mode=mode,
            similarity=sim == "sim",
            history_len=int(hpart.lstrip("h")),
        )
    except (ValueError, TypeError) as exc:
        raise DataError(f"unparseable cell name {name!r} in checkpoint") from exc


def _score_test_partition(ctx: PipelineContext, model, doc):
    """Probabilities for the test partition under a loaded checkpoint."""
    from .gbdt import GbdtModel
    from .learners import JointModel, LrModel, MlpModel

    cell = _cell_from_checkpoint(model, doc)
    if isinstance(model, JointModel):
        jds = ctx.joint_datasets(cell)
        return model.predict_proba(jds["test"], ctx.embeddings), jds["test"].labels
    ds = ctx.datasets(cell)
    fm = ds["test"].matrix
    if isinstance(model, MlpModel):
        return model.predict_proba(fm.to_dense()), fm.labels
    if isinstance(model, (LrModel, GbdtModel)):
        return model.predict_proba(fm), fm.labels
    raise DataError("unsupported model type in checkpoint")


def cmd_predict(args) -> int:
    cfg = _load_cfg(args)
    ctx = _context(args, cfg)
    model, doc = load_checkpoint(args.model)
    report = IngestReport()
    new_messages = _read_corpus(args.input, report)
    rows = []
    for msg in new_messages:
        if msg.reply_to or not msg.recipients or msg.timestamp is None:
            continue
        for rcpt in dict.fromkeys(msg.recipients):
            rows.append((msg, rcpt))
    if not rows:
        raise DataError("no scoreable messages in the input")
    probs = _score_new(ctx, model, doc, rows)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("email_id,recipient,timestamp,probability\n")
        for (msg, rcpt), p in zip(rows, probs):
            fh.write(f"{make_email_id(msg.message_id, rcpt)},{rcpt},{msg.timestamp},{p!r}\n")
    print(json.dumps({"scored": len(rows), "out": args.out}, sort_keys=True))
    return 0


def _score_new(ctx: PipelineContext, model, doc, rows):
    """Assemble features for (message, recipient) pairs and score them."""
    from .corpus import Email
    from .features import build_dataset, build_joint_dataset
    from .learners import JointModel, MlpModel
    from .userrep import HistoryConfig

    cell = _cell_from_checkpoint(model, doc)
    emails = [
        Email(
            email_id=make_email_id(m.message_id, r),
            source_message_id=m.message_id,
            recipient_id=r,
            timestamp=m.timestamp,
            sender_id=m.sender,
            subject=m.subject,
            body=m.body,
        )
        for m, r in rows
    ]
    hist = HistoryConfig(cell.user_mode, cell.history_len)
    if isinstance(model, JointModel):
        jd = build_joint_dataset(ctx.index, emails, ctx.sequence, hist,
                                 ctx.rates, ctx.default_rate)
        return model.predict_proba(jd, ctx.embeddings)
    provider = ctx.provider(cell.content)
    attn = ctx.attention(cell, provider.dim)
    ds = build_dataset(ctx.index, emails, provider, hist, attn, cell.similarity,
                       ctx.rates, ctx.default_rate)
    if isinstance(model, MlpModel):
        return model.predict_proba(ds.matrix.to_dense())
    return model.predict_proba(ds.matrix)


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "vocab": cmd_vocab,
    "embed": cmd_embed,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "ensemble": cmd_ensemble,
    "predict": cmd_predict,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except TriageError as exc:
        print(json.dumps({"error": str(exc), "kind": exc.kind}), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(json.dumps({"error": str(exc), "kind": "data"}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
