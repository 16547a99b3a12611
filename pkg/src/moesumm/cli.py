"""Command-line entry point: train, finetune, generate, eval.

User errors exit nonzero with a single-line diagnostic; all randomness
flows from the config seed (--seed overrides). MOESUMM_LOG controls
verbosity (error|info|debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig
from .data import (CorpusError, SyntheticSpec, Vocabulary, corpus_hash,
                   generate_synthetic, load_jsonl, make_synthetic_vocab)
from .decoding import beam_decode, greedy_decode
from .metrics import expertise_report, write_report_csvs, write_report_json
from .training import (TrainingError, finetune_deputy, param_report,
                       train_mixed, write_loss_csv)

log = logging.getLogger("moesumm")

_USER_ERRORS = (ConfigError, CorpusError, CheckpointError, TrainingError,
                ValueError, OSError)


def _setup_logging():
    level = {"error": logging.ERROR, "info": logging.INFO,
             "debug": logging.DEBUG}.get(os.environ.get("MOESUMM_LOG", "info"),
                                         logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(message)s")


def _vocab_from_files(paths, max_size):
    texts = []
    for path in paths:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as e:
                    raise CorpusError(f"{path}:{lineno}: malformed JSON ({e.msg})")
                texts.extend(str(obj.get(k, "")) for k in ("source", "summary"))
    from .data import build_vocab
    return build_vocab(texts, max_size=max_size)


def _load_corpora(rc, vocab=None):
    """Resolve the run config's corpora into (vocab, [(dataset_id, examples)])."""
    model = rc.model
    if rc.synthetic is not None:
        spec = SyntheticSpec.from_dict(rc.synthetic)
        if vocab is None:
            vocab = make_synthetic_vocab(spec.vocab_size)
        corpora = generate_synthetic(spec)
        return vocab, corpora
    if vocab is None:
        vocab = _vocab_from_files([e["path"] for e in rc.corpora],
                                  model.vocab_size)
    corpora = []
    for entry in rc.corpora:
        examples, report = load_jsonl(entry["path"], int(entry["dataset_id"]),
                                      vocab, model.max_src_len, model.max_tgt_len)
        log.info("loaded %s: %s", entry["path"], report.to_dict())
        corpora.append((int(entry["dataset_id"]), examples))
    return vocab, corpora


def _vocab_from_sidecar(provenance):
    tokens = provenance.get("vocab")
    if tokens is None:
        raise CheckpointError("checkpoint sidecar carries no vocabulary")
    return Vocabulary(tokens[4:])  # reserved ids are re-prepended


def _provenance(rc, vocab, corpora, regime, seed):
    return {"seed": seed, "regime": regime,
            "corpus_hashes": {str(d): corpus_hash(exs) for d, exs in corpora},
            "vocab": vocab.to_list()}


def cmd_train(args):
    rc = RunConfig.from_json(args.config)
    seed = args.seed if args.seed is not None else rc.seed
    out_dir = args.out or rc.out_dir
    os.makedirs(out_dir, exist_ok=True)
    vocab, corpora = _load_corpora(rc)
    if rc.model.vocab_size < len(vocab):
        raise ConfigError(f"vocab_size {rc.model.vocab_size} smaller than "
                          f"corpus vocabulary {len(vocab)}")
    params, report = train_mixed(
        rc.model, corpora, rc.epochs, seed, lr=rc.lr, batch_size=rc.batch_size,
        grad_accum_steps=rc.grad_accum_steps, warmup_steps=rc.warmup_steps,
        betas=(rc.adam_beta1, rc.adam_beta2), eps=rc.adam_eps, log=log.info)
    ckpt = os.path.join(out_dir, "checkpoint.bin")
    save_checkpoint(ckpt, params, _provenance(rc, vocab, corpora, "train_mixed", seed))
    report.checkpoint_path = ckpt
    with open(os.path.join(out_dir, "train_report.json"), "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
    write_loss_csv(os.path.join(out_dir, "loss.csv"), report.loss_rows)
    log.info("wrote %s", ckpt)
    return 0


def cmd_finetune(args):
    rc = RunConfig.from_json(args.config)
    seed = args.seed if args.seed is not None else rc.seed
    out_dir = args.out or rc.out_dir
    os.makedirs(out_dir, exist_ok=True)
    params, provenance = load_checkpoint(args.checkpoint)
    vocab = _vocab_from_sidecar(provenance)
    _, corpora = _load_corpora(rc, vocab)
    if rc.finetune_dataset_id is not None:
        wanted = rc.finetune_dataset_id
        corpora = [(d, exs) for d, exs in corpora if d == wanted]
        if not corpora:
            raise ConfigError(f"finetune_dataset_id {wanted} not present in corpora")
    if len(corpora) != 1:
        raise ConfigError("finetune expects exactly one corpus "
                          "(set finetune_dataset_id to pick one)")
    dataset_id, examples = corpora[0]
    if not examples:
        raise ConfigError("finetune corpus is empty")
    tuned, report = finetune_deputy(
        params, (dataset_id, examples), rc.epochs, seed, lr=rc.lr,
        batch_size=rc.batch_size, grad_accum_steps=rc.grad_accum_steps,
        warmup_steps=rc.warmup_steps, betas=(rc.adam_beta1, rc.adam_beta2),
        eps=rc.adam_eps, margin_in_finetune=rc.margin_in_finetune,
        add_fresh_deputy=rc.add_fresh_deputy, log=log.info)
    ckpt = os.path.join(out_dir, "checkpoint.bin")
    prov = {"seed": seed, "regime": "finetune_deputy",
            "corpus_hashes": {str(dataset_id): corpus_hash(examples)},
            "vocab": vocab.to_list(), "parent": args.checkpoint}
    save_checkpoint(ckpt, tuned, prov)
    report.checkpoint_path = ckpt
    with open(os.path.join(out_dir, "finetune_report.json"), "w",
              encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
    write_loss_csv(os.path.join(out_dir, "loss.csv"), report.loss_rows)
    log.info("frozen_params_unchanged=%s", report.frozen_params_unchanged)
    return 0


def cmd_generate(args):
    params, provenance = load_checkpoint(args.checkpoint)
    vocab = _vocab_from_sidecar(provenance)
    cfg = params.config
    dataset_id = args.dataset_id
    outputs = []
    with open(args.input, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{args.input}:{lineno}: malformed JSON ({e.msg})")
            if "source" not in obj:
                raise CorpusError(f"{args.input}:{lineno}: missing field 'source'")
            src = vocab.encode(obj["source"])[:cfg.max_src_len]
            ds = int(obj.get("dataset", dataset_id))
            if args.beam <= 1:
                out = greedy_decode(params, src, ds, args.mode, vocab)
            else:
                out = beam_decode(params, src, ds, args.mode, args.beam,
                                  vocab=vocab)
            outputs.append({"summary": out.text, "tokens": out.token_ids,
                            "trace": [[{"layer": l, "deputy": d, "gate": g}
                                       for l, d, g in step]
                                      for step in out.step_traces]})
    sink = sys.stdout
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        sink = open(os.path.join(args.out, "generated.jsonl"), "w", encoding="utf-8")
    try:
        for obj in outputs:
            sink.write(json.dumps(obj) + "\n")
    finally:
        if sink is not sys.stdout:
            sink.close()
    return 0


def cmd_eval(args):
    rc = RunConfig.from_json(args.config)
    out_dir = args.out or rc.out_dir
    os.makedirs(out_dir, exist_ok=True)
    params, provenance = load_checkpoint(args.checkpoint)
    vocab = _vocab_from_sidecar(provenance)
    eval_rc = rc
    if rc.eval_corpora:
        eval_sets = []
        for entry in rc.eval_corpora:
            examples, rep = load_jsonl(entry["path"], int(entry["dataset_id"]), vocab,
                                       params.config.max_src_len,
                                       params.config.max_tgt_len)
            log.info("loaded %s: %s", entry["path"], rep.to_dict())
            eval_sets.append((int(entry["dataset_id"]), examples))
    else:
        _, eval_sets = _load_corpora(eval_rc, vocab)
    report = expertise_report(params, eval_sets, vocab,
                              utilization_side=rc.utilization_side)
    report["param_report"] = param_report(params.config)
    write_report_json(report, os.path.join(out_dir, "metrics.json"))
    write_report_csvs(report, out_dir)
    log.info("wrote %s", os.path.join(out_dir, "metrics.json"))
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="moesumm",
                                 description="Mixture-of-experts summarization at desk scale")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="mixed multi-dataset training")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("finetune", help="deputy-only fine-tuning from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("generate", help="decode a JSONL of sources")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--mode", choices=["full", "main_only", "classic"], default="full")
    p.add_argument("--beam", type=int, default=4)
    p.add_argument("--dataset-id", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("eval", help="ROUGE and expertise analytics")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_eval)
    return ap


def main(argv=None):
    _setup_logging()
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except _USER_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
