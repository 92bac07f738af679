"""Command-line entry points: gen-data, train, eval, chat, serve."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import torch

from . import data as data_mod
from . import harness as harness_mod
from . import kb as kb_mod
from . import model as model_mod
from . import train as train_mod
from .decode import DecodeConfig, DecodeMode
from .history import DialogHistory
from .pipeline import PipelineConfig, respond

log = logging.getLogger("convrec")

USAGE_ERROR = 1
RUNTIME_ERROR = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


def _setup_logging():
    level = os.environ.get("CORECOG_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="convrec")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic KB and dialog corpus")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.add_argument("--n-dialogs", type=int, default=300)
    p.add_argument("--entities-per-type", type=int, default=10)
    p.add_argument("--chitchat-ratio", type=float, default=0.5)
    p.add_argument("--attribute-overlap", type=float, default=0.25)

    p = sub.add_parser("train", help="train a model on a generated corpus")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--decoder", choices=[m.value for m in DecodeMode], default="hopskip")
    p.add_argument("--ablate", default="", help="comma list from {rt, tc}")
    p.add_argument("--split", default="test", choices=["train", "dev", "test"])
    p.add_argument("--report", default=None)

    p = sub.add_parser("chat", help="interactive terminal chat")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--decoder", choices=[m.value for m in DecodeMode], default="hopskip")

    p = sub.add_parser("serve", help="run the HTTP chat service")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--decoder", choices=[m.value for m in DecodeMode], default="hopskip")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--allow-origin", default=None)
    return parser


def _cmd_gen_data(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = data_mod.CorpusConfig(
        seed=args.seed,
        n_dialogs=args.n_dialogs,
        n_entities_per_type=args.entities_per_type,
        chitchat_ratio=args.chitchat_ratio,
        attribute_overlap=args.attribute_overlap,
    )
    kb, splits = data_mod.generate_corpus(cfg)
    kb_mod.save_kb(kb, out / "kb.json")
    for name, dialogs in splits.items():
        data_mod.save_dialogs(dialogs, out / f"{name}.jsonl")
    log.info("wrote kb.json and %s to %s",
             ", ".join(f"{k}.jsonl" for k in splits), out)
    return 0


def _load_data_dir(path):
    data_dir = Path(path)
    if not data_dir.is_dir():
        raise FileNotFoundError(f"data directory {data_dir} does not exist")
    kb = kb_mod.load_kb(data_dir / "kb.json")
    splits = {
        name: data_mod.load_dialogs(data_dir / f"{name}.jsonl")
        for name in ("train", "dev", "test")
    }
    return kb, splits


def _cmd_train(args) -> int:
    kb, splits = _load_data_dir(args.data)
    file_cfg = {}
    if args.config:
        with open(args.config) as f:
            file_cfg = json.load(f)
    train_kwargs = dict(file_cfg.get("train", {}))
    model_kwargs = dict(file_cfg.get("model", {}))
    if args.epochs is not None:
        train_kwargs["epochs"] = args.epochs
    if args.lr is not None:
        train_kwargs["lr"] = args.lr
    if args.seed is not None:
        train_kwargs["seed"] = args.seed
    tcfg = train_mod.TrainConfig(**train_kwargs)

    vocab = data_mod.build_vocab(kb)
    torch.manual_seed(tcfg.seed)
    mcfg = model_mod.ModelConfig(
        vocab_size=len(vocab), n_types=len(kb.types),
        n_entities=len(kb.entities), **model_kwargs)
    model = model_mod.ModelBundle(mcfg, vocab)
    model, report = train_mod.train(model, splits["train"], kb, tcfg,
                                    dev_dialogs=splits["dev"])
    for i, epoch in enumerate(report.epochs):
        print(f"epoch {i}: " + "  ".join(f"{k}={v:.4f}" for k, v in epoch.items()))
    model_mod.save_checkpoint(model, args.out)
    report_path = Path(args.out).with_suffix(".report.json")
    with open(report_path, "w") as f:
        json.dump(report.to_json(), f, indent=1)
    log.info("checkpoint written to %s, report to %s", args.out, report_path)
    return 0


def _pipeline_config(decoder: str, ablate: str = "") -> PipelineConfig:
    flags = {f.strip() for f in ablate.split(",") if f.strip()}
    unknown = flags - {"rt", "tc"}
    if unknown:
        raise ValueError(f"unknown ablation flags: {sorted(unknown)}")
    return PipelineConfig(
        use_trigger="rt" not in flags,
        use_type_filter="tc" not in flags,
        decoder=DecodeConfig(mode=DecodeMode(decoder)),
    )


def _load_bundle(ckpt, data_dir):
    model = model_mod.load_checkpoint(ckpt)
    kb, splits = _load_data_dir(data_dir)
    if model.config.n_entities != len(kb.entities) or model.config.n_types != len(kb.types):
        raise ValueError("checkpoint was trained on a different KB")
    emb = kb_mod.precompute_embeddings(kb, model)
    return model, kb, splits, emb


def _cmd_eval(args) -> int:
    model, kb, splits, emb = _load_bundle(args.ckpt, args.data)
    cfg = _pipeline_config(args.decoder, args.ablate)
    report, extras = harness_mod.evaluate(model, kb, emb, splits[args.split], cfg)
    doc = report.to_json()
    print(f"{'metric':<12} value")
    for key, value in doc.items():
        print(f"{key:<12} {value:.4f}" if isinstance(value, float) else f"{key:<12} {value}")
    print(f"{'trigger_f1':<12} {extras.trigger_f1:.4f}")
    print(f"{'type_acc':<12} {extras.type_accuracy:.4f}")
    print(f"{'sat_rate':<12} {extras.constraint_rate:.4f}")
    if args.report:
        with open(args.report, "w") as f:
            json.dump(doc, f, indent=1)
        log.info("report written to %s", args.report)
    return 0


def _cmd_chat(args) -> int:
    model, kb, _, emb = _load_bundle(args.ckpt, args.data)
    cfg = _pipeline_config(args.decoder)
    turns = []
    trace = False
    print("convrec chat; :quit exits, :trace toggles decision dumps")
    from .pipeline import user_turn_from_text
    from .history import Turn
    from .model import tokenize_words
    while True:
        try:
            line = input("you> ").strip()
        except EOFError:
            break
        if not line:
            continue
        if line == ":quit":
            break
        if line == ":trace":
            trace = not trace
            print(f"trace {'on' if trace else 'off'}")
            continue
        decision = respond(model, kb, emb, DialogHistory(turns), line, cfg)
        reply = decision.utterance
        if decision.triggered and decision.chosen is not None:
            reply += f" [rec: {kb.entities[decision.chosen].name}]"
        print(f"bot> {reply}")
        if trace:
            dump = dataclasses.asdict(decision)
            dump["decoder_used"] = decision.decoder_used.value
            print(json.dumps(dump, indent=1))
        turns.append(user_turn_from_text(line, model.vocab, kb))
        words = tokenize_words(decision.utterance)
        turns.append(Turn(
            speaker="agent",
            tokens=tuple(model.vocab.index.get(w, model.vocab.unk_id) for w in words),
            entity_mentions=tuple(kb_mod.link_mentions(words, kb))))
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import checkpoint_sha256, create_app

    model, kb, _, emb = _load_bundle(args.ckpt, args.data)
    cfg = _pipeline_config(args.decoder)
    app = create_app(model, kb, emb, cfg,
                     checkpoint_hash=checkpoint_sha256(args.ckpt),
                     allow_origin=args.allow_origin)
    try:
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    except (OSError, SystemExit) as exc:
        raise RuntimeError(f"server failed to start: {exc}") from exc
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "chat": _cmd_chat,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    _setup_logging()
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError, kb_mod.KBError,
            data_mod.DialogFormatError, data_mod.CorpusError,
            model_mod.CheckpointError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
