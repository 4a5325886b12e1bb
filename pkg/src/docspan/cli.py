"""Command-line entry point.

Subcommands: gen-data, import-cord, pretrain, train, eval, decode,
visualize. Every run writes a run_manifest.json (config + seed + version)
into --out so it can be reproduced.

Exit codes: 0 success, 1 usage/config error (including a violated
--threshold-micro), 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .cord import load_cord
from .datasets import Dataset, load_jsonl, save_jsonl
from .docmodel import Vocabulary
from .encoder import EncoderConfig
from .errors import AnnotationError, ConfigError, DataError, NumericError
from .figures import plot_field_f1, plot_pretrain_losses, plot_training_history
from .metrics import EvalReport, compare_report
from .models import (
    SEQLABEL,
    SPAN,
    SeqLabelModel,
    SpanModel,
    load_model,
    load_pretrained_metadata,
    transfer_encoder,
)
from .seqlabel import TagSet
from .synth import gen_synthetic, synth_config_from_dict
from .training import OptimizerConfig, evaluate, pretrain_spans, train_model
from .visualize import render_document_svg


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


@dataclass
class RunConfig:
    """Validated contents of the --config file for train/pretrain runs."""

    model_type: str
    encoder: dict
    optimizer: OptimizerConfig
    epochs: int
    batch_size: int
    seed: int
    data: dict
    pretrain_datasets: list[str]
    pretrain_epochs: int
    max_span_len: int
    max_chain_len: int
    max_steps: int | None
    raw: dict

    DEFAULT_TRAIN_EPOCHS = 50
    DEFAULT_PRETRAIN_EPOCHS = 100

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path, "r", encoding="utf-8") as f:
                raw = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not valid JSON ({e})")
        model = dict(raw.get("model", {}))
        model_type = model.pop("type", SPAN)
        if model_type not in (SPAN, SEQLABEL):
            raise ConfigError(f"model.type must be 'span' or 'seqlabel', got {model_type!r}")
        max_span_len = int(model.pop("max_span_len", 30))
        max_chain_len = int(model.pop("max_chain_len", 32))
        opt = raw.get("optimizer", {})
        training = raw.get("training", {})
        pretrain = raw.get("pretrain", {})
        cfg = cls(
            model_type=model_type,
            encoder=model,
            optimizer=OptimizerConfig(
                lr=float(opt.get("lr", 5e-5)),
                beta1=float(opt.get("beta1", 0.9)),
                beta2=float(opt.get("beta2", 0.999)),
                eps=float(opt.get("eps", 1e-8)),
            ),
            epochs=int(training.get("epochs", cls.DEFAULT_TRAIN_EPOCHS)),
            batch_size=int(training.get("batch_size", 8)),
            seed=int(training.get("seed", 0)),
            data=dict(raw.get("data", {})),
            pretrain_datasets=list(pretrain.get("datasets", [])),
            pretrain_epochs=int(pretrain.get("epochs", cls.DEFAULT_PRETRAIN_EPOCHS)),
            max_span_len=max_span_len,
            max_chain_len=max_chain_len,
            max_steps=int(training["max_steps"]) if "max_steps" in training else None,
            raw=raw,
        )
        if cfg.epochs < 1 or cfg.batch_size < 1:
            raise ConfigError("training.epochs and training.batch_size must be >= 1")
        if cfg.optimizer.lr <= 0:
            raise ConfigError("optimizer.lr must be positive")
        return cfg

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(vocab_size=vocab_size, **self.encoder)


def _write_manifest(out_dir: Path, command: str, args, config: dict | None, seed: int | None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "argv": [a for a in vars(args).items() if not callable(a[1])],
        "config": config,
        "seed": seed,
        "version": __version__,
    }
    manifest["argv"] = {k: (str(v) if isinstance(v, Path) else v) for k, v in manifest["argv"]}
    with open(out_dir / "run_manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=1, sort_keys=True, default=str)


def _load_dataset_arg(data: str | Path, split: str | None) -> Dataset:
    path = Path(data)
    if path.is_dir():
        if not split:
            raise ConfigError(f"--data {path} is a directory; pass --split to pick a file")
        hits = sorted(path.glob(f"*-{split}.jsonl")) + sorted(path.glob(f"{split}.jsonl"))
        if not hits:
            raise DataError(f"no *-{split}.jsonl under {path}")
        path = hits[0]
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    ds = load_jsonl(path)
    if split and ds.split != split:
        raise DataError(f"{path}: split is {ds.split!r}, expected {split!r}")
    return ds


def _write_history_csv(history: list[dict], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(history[0].keys()))
        writer.writeheader()
        writer.writerows(history)


def _write_report(report: EvalReport, out_dir: Path, stem: str) -> None:
    rows = report.rows()
    with open(out_dir / f"{stem}.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["field_id", "tp", "fp", "fn", "precision", "recall", "f1"])
        for r in rows:
            writer.writerow(
                [r["field_id"], r["tp"], r["fp"], r["fn"], f"{r['precision']:.6f}", f"{r['recall']:.6f}", f"{r['f1']:.6f}"]
            )
        writer.writerow(["micro", "", "", "", f"{report.micro_precision:.6f}", f"{report.micro_recall:.6f}", f"{report.micro_f1:.6f}"])
        writer.writerow(["macro", "", "", "", "", "", f"{report.macro_f1:.6f}"])
    lines = [f"{'field':40s} {'P':>8s} {'R':>8s} {'F1':>8s}"]
    for r in rows:
        lines.append(f"{r['field_id']:40s} {r['precision']:8.4f} {r['recall']:8.4f} {r['f1']:8.4f}")
    lines.append(f"{'micro':40s} {report.micro_precision:8.4f} {report.micro_recall:8.4f} {report.micro_f1:8.4f}")
    lines.append(f"{'macro':40s} {'':8s} {'':8s} {report.macro_f1:8.4f}")
    (out_dir / f"{stem}.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    plot_field_f1(report, out_dir / f"{stem}.png", title=stem)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    with open(args.config, "r", encoding="utf-8") as f:
        cfg = json.load(f)
    out_dir = Path(args.out)
    _write_manifest(out_dir, "gen-data", args, cfg, args.seed)
    splits = cfg.get("splits", {"train": {"num_docs": int(cfg.get("num_docs", 100)), "seed": 0}})
    for k, (split, spec) in enumerate(splits.items()):
        seed = args.seed + k if args.seed is not None else int(spec.get("seed", k))
        sconf = synth_config_from_dict(cfg, split, int(spec["num_docs"]), seed)
        dataset = gen_synthetic(sconf)
        path = out_dir / f"{cfg['dataset_id']}-{split}.jsonl"
        save_jsonl(dataset, path)
        print(f"wrote {len(dataset)} documents to {path}")
    return 0


def cmd_import_cord(args) -> int:
    page_size = None
    if args.page_width or args.page_height:
        if not (args.page_width and args.page_height):
            raise ConfigError("--page-width and --page-height must be given together")
        page_size = (args.page_width, args.page_height)
    dataset = load_cord(args.root, args.split, page_size=page_size)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_jsonl(dataset, out)
    print(f"imported {len(dataset)} receipts ({args.split}) to {out}")
    return 0


def _build_vocab(datasets: list[Dataset]) -> Vocabulary:
    texts = []
    for ds in datasets:
        texts.extend(ds.token_texts())
    return Vocabulary.build(texts)


def cmd_pretrain(args) -> int:
    cfg = RunConfig.load(args.config)
    seed = args.seed if args.seed is not None else cfg.seed
    if not cfg.pretrain_datasets:
        raise ConfigError("config needs pretrain.datasets: a list of dataset files")
    datasets = [_load_dataset_arg(p, None) for p in cfg.pretrain_datasets]
    out_dir = Path(args.out)
    _write_manifest(out_dir, "pretrain", args, cfg.raw, seed)

    vocab = _build_vocab(datasets)
    model = SpanModel(
        cfg.encoder_config(len(vocab)),
        vocab,
        seed=seed,
        max_span_len=cfg.max_span_len,
        max_chain_len=cfg.max_chain_len,
    )
    rows = pretrain_spans(
        datasets, model, cfg.optimizer, cfg.pretrain_epochs, cfg.batch_size, seed, log=print
    )
    ckpt = out_dir / "pretrained.ckpt"
    model.save(ckpt)
    if rows:
        with open(out_dir / "pretrain_losses.csv", "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=["epoch", "dataset", "mean_loss"])
            writer.writeheader()
            writer.writerows(rows)
        plot_pretrain_losses(rows, out_dir / "pretrain_losses.png")
    print(f"saved pre-trained checkpoint to {ckpt}")
    return 0


def _fresh_or_pretrained_model(cfg: RunConfig, model_type: str, train_ds: Dataset, seed: int, init_from):
    if init_from is None:
        vocab = _build_vocab([train_ds])
        enc = cfg.encoder_config(len(vocab))
        if model_type == SPAN:
            return SpanModel(enc, vocab, seed=seed, max_span_len=cfg.max_span_len, max_chain_len=cfg.max_chain_len)
        return SeqLabelModel(enc, vocab, TagSet(train_ds.schema.field_ids), seed=seed)

    enc, vocab, tensors = load_pretrained_metadata(init_from)
    base = load_model(init_from, trainable=True, seed=seed)
    if base.model_type == model_type:
        return base
    # Head types differ: keep the pretrained encoder, attach a fresh head.
    if model_type == SEQLABEL:
        model = SeqLabelModel(enc, vocab, TagSet(train_ds.schema.field_ids), seed=seed)
    else:
        model = SpanModel(enc, vocab, seed=seed, max_span_len=cfg.max_span_len, max_chain_len=cfg.max_chain_len)
    copied = transfer_encoder(model, tensors)
    print(f"transferred {copied} encoder tensors from {init_from}")
    return model


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config)
    model_type = args.model or cfg.model_type
    seed = args.seed if args.seed is not None else cfg.seed
    if "train" not in cfg.data or "dev" not in cfg.data:
        raise ConfigError("config needs data.train and data.dev paths")
    train_ds = _load_dataset_arg(cfg.data["train"], None)
    dev_ds = _load_dataset_arg(cfg.data["dev"], None)
    out_dir = Path(args.out)
    _write_manifest(out_dir, "train", args, cfg.raw, seed)

    model = _fresh_or_pretrained_model(cfg, model_type, train_ds, seed, args.init_from)
    ckpt = out_dir / "best.ckpt"
    history = train_model(
        model,
        train_ds,
        dev_ds,
        cfg.optimizer,
        cfg.epochs,
        cfg.batch_size,
        seed,
        checkpoint_path=ckpt,
        max_steps=cfg.max_steps,
        log=print,
    )
    _write_history_csv(history, out_dir / "metrics.csv")
    plot_training_history(history, out_dir / "metrics.png")
    best = max(h["dev_micro"] for h in history)
    print(f"best dev micro F1 {best:.4f}; checkpoint at {ckpt}")
    return 0


def cmd_eval(args) -> int:
    dataset = _load_dataset_arg(args.data, args.split)
    out_dir = Path(args.out)
    _write_manifest(out_dir, "eval", args, None, None)
    named_reports = []
    for ckpt in args.checkpoint:
        model = load_model(ckpt, trainable=False)
        report = evaluate(model, dataset)
        name = f"{Path(ckpt).stem}-{model.model_type}"
        named_reports.append((name, report))
        _write_report(report, out_dir, f"report-{name}")
        print(f"{name}: micro={report.micro_f1:.4f} macro={report.macro_f1:.4f}")
    if len(named_reports) > 1:
        table = compare_report(named_reports)
        (out_dir / "comparison.txt").write_text(table.to_text(), encoding="utf-8")
        (out_dir / "comparison.csv").write_text(table.to_csv(), encoding="utf-8")
        print(table.to_text(), end="")
    if args.threshold_micro is not None:
        worst = min(rep.micro_f1 for _, rep in named_reports)
        if worst < args.threshold_micro:
            print(f"micro F1 {worst:.4f} below threshold {args.threshold_micro}", file=sys.stderr)
            return 1
    return 0


def cmd_decode(args) -> int:
    dataset = _load_dataset_arg(args.data, args.split)
    model = load_model(args.checkpoint, trainable=False)
    out_dir = Path(args.out)
    _write_manifest(out_dir, "decode", args, None, None)
    out_path = out_dir / "predictions.jsonl"
    with open(out_path, "w", encoding="utf-8") as f:
        for doc in dataset.documents:
            if model.model_type == SPAN:
                _, chains = model.predict_doc(doc, dataset.schema.field_ids)
                for fid in dataset.schema.field_ids:
                    chain = chains[fid]
                    rec = {
                        "doc_id": doc.doc_id,
                        "field_id": fid,
                        "spans": chain.as_tuples(),
                        "termination_reason": chain.termination_reason,
                    }
                    f.write(json.dumps(rec, sort_keys=True) + "\n")
            else:
                entities = model.predict_doc(doc)
                rec = {"doc_id": doc.doc_id, "entities": [list(e) for e in entities]}
                f.write(json.dumps(rec, sort_keys=True) + "\n")
    print(f"wrote predictions to {out_path}")
    return 0


def cmd_visualize(args) -> int:
    dataset = _load_dataset_arg(args.data, args.split)
    doc = dataset.documents[0]
    if args.doc_id:
        matches = [d for d in dataset.documents if d.doc_id == args.doc_id]
        if not matches:
            raise DataError(f"doc_id {args.doc_id!r} not in dataset")
        doc = matches[0]
    model = load_model(args.checkpoint, trainable=False)
    if model.model_type == SPAN:
        _, chains = model.predict_doc(doc, dataset.schema.field_ids)
        chain_tuples = {
            fid: chain.as_tuples() for fid, chain in chains.items() if chain.spans
        }
    else:
        entities = model.predict_doc(doc)
        chain_tuples = {}
        for fid, s, e in entities:
            chain_tuples.setdefault(fid, []).append((s, e))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    render_document_svg(doc, chain_tuples, out)
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="docspan", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"docspan {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("import-cord", help="convert CORD ground truth to the internal format")
    p.add_argument("--root", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--page-width", type=int, default=None)
    p.add_argument("--page-height", type=int, default=None)
    p.set_defaults(func=cmd_import_cord)

    p = sub.add_parser("pretrain", help="span-extraction pre-training over several datasets")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="fine-tune a model on one dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--model", choices=[SPAN, SEQLABEL], default=None)
    p.add_argument("--init-from", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate checkpoint(s) on a dataset")
    p.add_argument("--checkpoint", action="append", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold-micro", type=float, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("decode", help="decode chains/entities for every document")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("visualize", help="render one document with predictions as SVG")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--doc-id", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_visualize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except (DataError, AnnotationError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
