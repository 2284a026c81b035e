"""Command-line entry point.

    buglistener ingest chat_angular.jsonl chat_docker.jsonl --out work
    buglistener disentangle work/corpus/*.jsonl --gold-links ... --labels labels.jsonl --out work
    buglistener train-bri work/dialogs/*.jsonl --out work
    buglistener predict-bri work/dialogs/*.jsonl --checkpoint work/checkpoints/bri --out work
    buglistener train-brs --external ext.jsonl --sentences chat.jsonl --out work
    buglistener synthesize work/predictions/*.jsonl --checkpoint work/checkpoints/brs --out work
    buglistener eval work/predictions/*.jsonl --out work

Every command prints one JSON summary line on success. Failures print a JSON
error record on stderr and exit with a code specific to the error class.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import re
import sys
import tempfile

import numpy as np
import torch

from . import __version__
from .errors import (
    BugListenerError,
    CheckpointNotFoundError,
    ConfigError,
    InsufficientContentError,
    ParseError,
    SchemaError,
    ShapeError,
    ValidationError,
)

logger = logging.getLogger("buglistener")

EXIT_CODES = {
    ParseError: 3,
    ValidationError: 4,
    ShapeError: 5,
    ConfigError: 6,
    SchemaError: 7,
    CheckpointNotFoundError: 8,
    InsufficientContentError: 9,
}


class InputNotFoundError(BugListenerError):
    code = "input_not_found"


EXIT_CODES[InputNotFoundError] = 10


# ---------------------------------------------------------------------------
# file helpers

def write_atomic(path: str, text: str) -> str:
    """Write through a temp file in the target directory, then rename."""
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def require_files(paths) -> None:
    for p in paths:
        if not os.path.isfile(p):
            raise InputNotFoundError(f"input file {p} does not exist")


def project_name(path: str) -> str:
    stem = os.path.splitext(os.path.basename(path))[0]
    return re.sub(r"^(chat|dialogs|predictions)_", "", stem)


def safe_name(name: str) -> str:
    return re.sub(r"[^\w.\-~]+", "_", name) or "_"


def dumps(data) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def read_jsonl(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ParseError(f"{path}: malformed JSON ({exc.msg})", lineno) from None
    return out


def _set_seed(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)


# ---------------------------------------------------------------------------
# commands

def cmd_ingest(args, cfg) -> dict:
    from .corpus import dump_chat_log, parse_chat_log

    require_files(args.inputs)
    if args.project and len(args.inputs) > 1:
        raise ValidationError("--project needs exactly one input file")
    written = []
    for path in args.inputs:
        log = parse_chat_log(path)
        name = args.project or project_name(path)
        target = os.path.join(cfg.output_dir, "corpus", f"{safe_name(name)}.jsonl")
        written.append(write_atomic(target, dump_chat_log(log)))
    return {"outputs": written}


def _word_vectors(cfg):
    from .disentangler import WordVectors

    path = cfg.paths.get("word_vectors")
    if path:
        require_files([path])
        return WordVectors.load(path)
    return WordVectors(cfg.disentangle["word_dim"])


def _load_labels(path) -> dict:
    labels = {}
    for lineno, rec in enumerate(read_jsonl(path), start=1):
        if not isinstance(rec, dict) or "dialog_id" not in rec or "label" not in rec:
            raise SchemaError(f"{path} line {lineno}: label records need 'dialog_id' and 'label'")
        labels[str(rec["dialog_id"])] = rec["label"]
    return labels


def cmd_disentangle(args, cfg) -> dict:
    from .corpus import dump_dialogs, filter_dialogs, parse_chat_log
    from .disentangler import (cluster_dialogs, disentangle, links_from_log, load_gold_links, load_link_model,
                               save_link_model, train_link_model)

    require_files(args.corpora)
    gold = args.gold_links or []
    if gold and len(gold) != len(args.corpora):
        raise ValidationError("give one --gold-links file per corpus, in the same order")
    require_files(gold + [p for pair in args.train or [] for p in pair] + ([args.labels] if args.labels else []))
    link_cfg = cfg.link_config()
    model = None
    vectors = None
    if args.train:
        vectors = _word_vectors(cfg)
        examples = [(parse_chat_log(log), load_gold_links(links)) for log, links in args.train]
        model = train_link_model(examples, vectors, link_cfg)
        if args.save_link_model:
            save_link_model(args.save_link_model, model, link_cfg, vectors)
    elif args.link_model:
        model, manifest = load_link_model(args.link_model)
        vectors = _word_vectors(cfg)
        if vectors.dim != manifest["word_dim"]:
            raise SchemaError(f"link model expects {manifest['word_dim']}-d word vectors, got {vectors.dim}")
    labels = _load_labels(args.labels) if args.labels else {}
    filt = cfg.filter_config()
    written, counts = [], {}
    for k, path in enumerate(args.corpora):
        log = parse_chat_log(path)
        name = project_name(path)
        if gold:
            dialogs = cluster_dialogs(log, load_gold_links(gold[k]))
        elif model is not None:
            dialogs = disentangle(log, model, vectors, link_cfg.window)
        else:
            links = links_from_log(log)
            if not links and len(log) > 1:
                raise ValidationError(f"{path} has no reply_to_ids; pass --gold-links, --link-model or --train")
            dialogs = cluster_dialogs(log, links)
        dialogs = [dataclasses.replace(d, project=name, label=labels.get(d.id)) for d in dialogs]
        kept = dialogs if args.no_filter else filter_dialogs(dialogs, filt)
        counts[name] = {"dialogs": len(dialogs), "kept": len(kept)}
        target = os.path.join(cfg.output_dir, "dialogs", f"{safe_name(name)}.jsonl")
        written.append(write_atomic(target, dump_dialogs(kept)))
    return {"outputs": written, "counts": counts}


def _load_dialog_files(paths):
    from .corpus import parse_dialogs

    require_files(paths)
    dialogs = []
    for p in paths:
        for d in parse_dialogs(p):
            dialogs.append(d if d.project else dataclasses.replace(d, project=project_name(p)))
    return dialogs


def _balance(dialogs, aug_cfg):
    from .augmentor import balance_bri

    by_label = {"BR": [d for d in dialogs if d.label == "BR"], "NBR": [d for d in dialogs if d.label == "NBR"]}
    if not by_label["BR"] or not by_label["NBR"]:
        logger.warning("training side lacks one class; skipping balancing")
        return list(dialogs)
    grown = balance_bri(by_label, aug_cfg)
    return grown["BR"] + grown["NBR"]


def cmd_train_bri(args, cfg) -> dict:
    from .bri_model import LABELS, predict_bri, save_bri, train_bri, word_table_for
    from .encoder import ContextualEncoder
    from .eval_harness import compute_metrics, cross_project_split, format_table

    dialogs = [d for d in _load_dialog_files(args.dialogs) if d.label is not None]
    if not dialogs:
        raise ValidationError("no labeled dialogs to train on")
    bri_cfg, aug_cfg, enc_cfg = cfg.bri_config(), cfg.augment_config(), cfg.encoder_config()
    _set_seed(cfg.seed)
    encoder = ContextualEncoder(enc_cfg)
    table: dict = {}
    rows, per_project = {}, {}
    if not args.skip_eval:
        for fold in cross_project_split(dialogs, augment=lambda tr: _balance(tr, aug_cfg)):
            word_table_for(fold.train + fold.test, encoder, table)
            model, _ = train_bri(fold.train, bri_cfg, encoder, word_table=table)
            preds = [p.label for p in predict_bri(fold.test, model, encoder, table)]
            report = compute_metrics(preds, [d.label for d in fold.test], labels=LABELS, positive="BR")
            rows[fold.name] = {"precision": report.precision, "recall": report.recall, "f1": report.f1}
            per_project[fold.name] = report.to_dict()
    final_train = _balance(dialogs, aug_cfg)
    word_table_for(final_train, encoder, table)
    model, history = train_bri(final_train, bri_cfg, encoder, word_table=table)
    metrics = {"task": "bri", "seed": cfg.seed, "projects": per_project,
               "average": {m: float(np.mean([r[m] for r in rows.values()])) for m in ("precision", "recall", "f1")}
               if rows else {}}
    mdir = os.path.join(cfg.output_dir, "metrics")
    outputs = [write_atomic(os.path.join(mdir, "bri_metrics.json"), dumps(metrics))]
    if rows:
        outputs.append(write_atomic(os.path.join(mdir, "bri_table.txt"), format_table(rows)))
    ckpt = args.checkpoint or os.path.join(cfg.checkpoint_dir, "bri")
    save_bri(ckpt, model, enc_cfg, encoder, metrics.get("average"))
    return {"outputs": outputs, "checkpoint": ckpt, "epochs": len(history)}


def cmd_predict_bri(args, cfg) -> dict:
    from .bri_model import load_bri, predict_bri
    from .corpus import dialog_to_record

    model, encoder, _ = load_bri(args.checkpoint)
    require_files(args.dialogs)
    dialogs = _load_dialog_files(args.dialogs)
    preds = predict_bri(dialogs, model, encoder) if dialogs else []
    by_project: dict = {}
    for d, p in zip(dialogs, preds):
        rec = dialog_to_record(d)
        rec["prediction"] = {"label": p.label, "p_br": p.p_br, "p_nbr": p.p_nbr}
        by_project.setdefault(d.project, []).append(json.dumps(rec, ensure_ascii=False) + "\n")
    written = [write_atomic(os.path.join(cfg.output_dir, "predictions", f"{safe_name(name)}.jsonl"), "".join(lines))
               for name, lines in sorted(by_project.items())]
    return {"outputs": written, "flagged": sum(p.label == "BR" for p in preds), "dialogs": len(dialogs)}


def _eda_augment(sentences, cfg, classes):
    from .augmentor import augment_sentences_eda
    from .brs_model import SENTENCE_LABELS

    by_class = {c: [s for s in sentences if s.label == c] for c in SENTENCE_LABELS}
    present = tuple(c for c in classes if by_class[c])
    grown = augment_sentences_eda(by_class, cfg, present) if present else by_class
    return [s for c in SENTENCE_LABELS for s in grown[c]]


def cmd_train_brs(args, cfg) -> dict:
    from .brs_model import (SENTENCE_LABELS, BrsModel, classify_sentences, fine_tune_stage1, fine_tune_stage2,
                            load_labeled_sentences, save_brs)
    from .encoder import ContextualEncoder
    from .eval_harness import compute_metrics, fold_train_test, format_table, kfold_split

    require_files([args.external, args.sentences])
    external = load_labeled_sentences(args.external)
    chat = load_labeled_sentences(args.sentences)
    aug_cfg = cfg.augment_config()
    classes = tuple(cfg.brs.get("eda_classes", ("OB", "EB", "SR")))
    s1_cfg, s2_cfg = cfg.stage1_config(), cfg.stage2_config()
    _set_seed(cfg.seed)
    model = BrsModel(ContextualEncoder(cfg.encoder_config()), head_seed=cfg.seed)
    model.freeze(s1_cfg.frozen_layers)
    stage1, hist1 = fine_tune_stage1(model, external, s1_cfg)
    items = _eda_augment(chat, aug_cfg, classes)
    metrics = {"task": "brs", "seed": cfg.seed, "stage1_epochs": len(hist1)}
    outputs = []
    if not args.skip_eval:
        folds = kfold_split(items, int(cfg.brs["folds"]), cfg.seed)
        gold, pred = [], []
        for i in range(len(folds)):
            train, test = fold_train_test(items, folds, i)
            if not test:
                continue
            tuned, _ = fine_tune_stage2(stage1, train, s2_cfg, head_seed=cfg.seed + 1 + i)
            pred.extend(label for label, _ in classify_sentences(tuned, test))
            gold.extend(s.label for s in test)
        report = compute_metrics(pred, gold, labels=SENTENCE_LABELS)
        metrics["folds"] = len(folds)
        metrics["cross_validation"] = report.to_dict()
        rows = {c: vars(report.per_class[c]) for c in ("OB", "EB", "SR")}
        table = format_table(rows, title="Class")
        outputs.append(write_atomic(os.path.join(cfg.output_dir, "metrics", "brs_table.txt"), table))
    final, _ = fine_tune_stage2(stage1, items, s2_cfg, head_seed=cfg.seed + 1)
    outputs.insert(0, write_atomic(os.path.join(cfg.output_dir, "metrics", "brs_metrics.json"), dumps(metrics)))
    ckpt = args.checkpoint or os.path.join(cfg.checkpoint_dir, "brs")
    summary = metrics.get("cross_validation", {}).get("macro")
    save_brs(ckpt, final, summary)
    return {"outputs": outputs, "checkpoint": ckpt}


def cmd_synthesize(args, cfg) -> dict:
    from .brs_model import load_brs, synthesize_report
    from .corpus import dialog_from_record

    model, _ = load_brs(args.checkpoint)
    require_files(args.dialogs)
    written, skipped = [], []
    for path in args.dialogs:
        for lineno, rec in enumerate(read_jsonl(path), start=1):
            d = dialog_from_record(rec, lineno)
            predicted = (rec.get("prediction") or {}).get("label", d.label)
            if predicted != "BR" and not args.all:
                continue
            project = d.project or project_name(path)
            try:
                report = synthesize_report(d, model)
            except InsufficientContentError as exc:
                skipped.append({"dialog_id": d.id, "reason": str(exc)})
                continue
            base = os.path.join(cfg.output_dir, "reports", safe_name(project), safe_name(d.id))
            written.append(write_atomic(base + ".md", report.to_markdown(args.issue_style)))
            sidecar = report.to_dict() | {"project": project}
            written.append(write_atomic(base + ".json", dumps(sidecar)))
    # relative paths keep the index identical across output locations
    root = os.path.join(cfg.output_dir, "reports")
    md = sorted(os.path.relpath(p, root) for p in written if p.endswith(".md"))
    write_atomic(os.path.join(root, "index.json"), dumps({"reports": md, "skipped": skipped}))
    return {"outputs": written, "skipped": len(skipped)}


def cmd_eval(args, cfg) -> dict:
    from .bri_model import LABELS
    from .eval_harness import compute_metrics, format_table

    require_files(args.predictions)
    by_project: dict = {}
    for path in args.predictions:
        for lineno, rec in enumerate(read_jsonl(path), start=1):
            if "prediction" not in rec or rec.get("label") is None:
                raise SchemaError(f"{path} line {lineno}: eval needs a gold 'label' and a 'prediction'")
            project = rec.get("project") or project_name(path)
            by_project.setdefault(project, ([], []))
            by_project[project][0].append(rec["prediction"]["label"])
            by_project[project][1].append(rec["label"])
    rows, detail = {}, {}
    for name, (pred, gold) in sorted(by_project.items()):
        report = compute_metrics(pred, gold, labels=LABELS, positive="BR")
        rows[name] = {"precision": report.precision, "recall": report.recall, "f1": report.f1}
        detail[name] = report.to_dict()
    mdir = os.path.join(cfg.output_dir, "metrics")
    out = [write_atomic(os.path.join(mdir, "eval.json"), dumps({"task": "bri", "projects": detail})),
           write_atomic(os.path.join(mdir, "eval_table.txt"), format_table(rows))]
    return {"outputs": out}


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file merged over the packaged defaults")
    common.add_argument("--seed", type=int, help="seed for every stochastic step")
    common.add_argument("--out", help="output directory (default: paths.output)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="buglistener", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="normalize chat exports")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--project", help="project name for a single input (default: file stem)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("disentangle", parents=[common], help="split chat logs into dialogs")
    p.add_argument("corpora", nargs="+")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--gold-links", action="append", help="gold link file, one per corpus")
    src.add_argument("--link-model", help="trained link model directory")
    src.add_argument("--train", nargs=2, action="append", metavar=("LOG", "LINKS"),
                     help="fit a link model on a log and its gold links (repeatable)")
    p.add_argument("--save-link-model", help="where to store the model fitted with --train")
    p.add_argument("--labels", help="JSON lines of {dialog_id, label}")
    p.add_argument("--no-filter", action="store_true", help="keep bot, non-English and code-only dialogs")
    p.set_defaults(func=cmd_disentangle)

    p = sub.add_parser("train-bri", parents=[common], help="cross-project evaluation and a final BRI model")
    p.add_argument("dialogs", nargs="+")
    p.add_argument("--checkpoint", help="checkpoint directory (default: <checkpoints>/bri)")
    p.add_argument("--skip-eval", action="store_true")
    p.set_defaults(func=cmd_train_bri)

    p = sub.add_parser("predict-bri", parents=[common], help="flag bug-report dialogs")
    p.add_argument("dialogs", nargs="+")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_predict_bri)

    p = sub.add_parser("train-brs", parents=[common], help="two-stage sentence classifier training")
    p.add_argument("--external", required=True, help="labeled sentences from an issue tracker")
    p.add_argument("--sentences", required=True, help="labeled chat sentences")
    p.add_argument("--checkpoint", help="checkpoint directory (default: <checkpoints>/brs)")
    p.add_argument("--skip-eval", action="store_true")
    p.set_defaults(func=cmd_train_brs)

    p = sub.add_parser("synthesize", parents=[common], help="write bug reports for flagged dialogs")
    p.add_argument("dialogs", nargs="+", help="prediction or dialog files")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--all", action="store_true", help="ignore predictions and synthesize every dialog")
    p.add_argument("--issue-style", action="store_true")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("eval", parents=[common], help="BRI metrics from prediction files")
    p.add_argument("predictions", nargs="+")
    p.set_defaults(func=cmd_eval)
    return parser


def error_record(exc: BaseException, command: str | None) -> tuple[int, dict]:
    code = EXIT_CODES.get(type(exc)) or next((c for cls, c in EXIT_CODES.items() if isinstance(exc, cls)), 1)
    name = getattr(exc, "code", "internal_error") if isinstance(exc, BugListenerError) else "internal_error"
    return code, {"error": name, "message": str(exc), "command": command, "exit_code": code}


def main(argv=None) -> int:
    from .config import PipelineConfig

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = PipelineConfig.load(args.config, seed=args.seed, output=args.out)
        result = args.func(args, cfg)
    except (BugListenerError, OSError) as exc:
        if isinstance(exc, FileNotFoundError) and not isinstance(exc, BugListenerError):
            exc = InputNotFoundError(str(exc))
        code, record = error_record(exc, args.command)
        print(json.dumps(record), file=sys.stderr)
        return code
    print(json.dumps({"command": args.command, "status": "ok", **result}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
