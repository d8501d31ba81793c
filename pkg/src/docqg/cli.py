"""Command-line surface: train / generate / evaluate / gradcheck / ablate / stats.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import checkpoint, corpus, decoder, harness, inference, metrics, ndcore
from .model import ModelConfig, QGModel

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="docqg", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def add_model_flags(sp):
        sp.add_argument("--dim", type=int, default=64)
        sp.add_argument("--emb-dim", type=int, default=None,
                        help="embedding width (default: --dim)")
        sp.add_argument("--stages", type=int, default=2)
        sp.add_argument("--seed", type=int, default=7)
        sp.add_argument("--mask", action=argparse.BooleanOptionalAction,
                        default=True)
        sp.add_argument("--attention", action=argparse.BooleanOptionalAction,
                        default=True)

    def add_train_flags(sp):
        sp.add_argument("--train", required=True)
        sp.add_argument("--dev", required=True)
        sp.add_argument("--glove", default=None)
        sp.add_argument("--vocab-size", type=int, default=5000)
        sp.add_argument("--doc-cap", type=int, default=corpus.DEFAULT_DOC_CAP)
        sp.add_argument("--steps", type=int, default=500)
        sp.add_argument("--batch", type=int, default=8)
        sp.add_argument("--lr", type=float, default=0.001)
        sp.add_argument("--l2", type=float, default=1e-6)
        sp.add_argument("--clip", type=float, default=5.0)
        sp.add_argument("--eval-every", type=int, default=50)

    sp = sub.add_parser("train", help="train a model and save a checkpoint")
    add_model_flags(sp)
    add_train_flags(sp)
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("generate", help="decode questions for a dataset")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--output", required=True)
    sp.add_argument("--vocab", default=None,
                    help="external vocab JSON to cross-check against the checkpoint")
    sp.add_argument("--beam", type=int, default=10)
    sp.add_argument("--max-len", type=int, default=inference.DEFAULT_MAX_LEN)
    sp.add_argument("--greedy", action="store_true")
    sp.add_argument("--raw-score", action="store_true",
                    help="rank beam hypotheses by raw log-probability")
    sp.add_argument("--dump-attention", action="store_true")
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("evaluate", help="score predictions against references")
    sp.add_argument("--predictions", required=True)
    sp.add_argument("--references", required=True)
    sp.add_argument("--out-json", default=None)
    sp.add_argument("--out-csv", default=None)
    sp.add_argument("--allow-missing", action="store_true")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("gradcheck",
                        help="finite-difference check of the full model")
    sp.add_argument("--stages", type=int, default=2)
    sp.add_argument("--dim", type=int, default=8)
    sp.add_argument("--tolerance", type=float, default=1e-3)
    sp.add_argument("--epsilon", type=float, default=1e-4)
    sp.add_argument("--seed", type=int, default=7)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("ablate", help="run the ablation variant matrix")
    add_model_flags(sp)
    add_train_flags(sp)
    sp.add_argument("--test", default=None)
    sp.add_argument("--beam", type=int, default=4)
    sp.add_argument("--max-len", type=int, default=inference.DEFAULT_MAX_LEN)
    sp.add_argument("--out-md", required=True)
    sp.add_argument("--out-csv", required=True)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("stats", help="dataset summary statistics")
    sp.add_argument("--input", required=True)
    sp.set_defaults(func=cmd_stats)
    return p


def _validate_common(args):
    if getattr(args, "stages", 1) < 1:
        raise UsageError("--stages must be >= 1")
    if getattr(args, "dim", 2) % 2 != 0:
        raise UsageError("--dim must be even")
    if getattr(args, "beam", 1) < 1:
        raise UsageError("--beam must be >= 1")


def _make_config(args):
    return ModelConfig(
        d=args.dim, d_emb=args.emb_dim or args.dim, stages=args.stages,
        seed=args.seed, use_attention=args.attention, use_mask=args.mask)


def _make_train_config(args):
    return decoder.TrainConfig(
        lr=args.lr, l2=args.l2, batch_size=args.batch, max_steps=args.steps,
        clip_norm=args.clip, seed=args.seed, eval_every=args.eval_every,
        log_every=args.eval_every)


def _load_split(path, doc_cap):
    try:
        return corpus.load_jsonl(path, doc_cap=doc_cap)
    except (OSError, corpus.CorpusError) as e:
        raise DataError(str(e))


class DataError(Exception):
    pass


def cmd_train(args):
    train_set = _load_split(args.train, args.doc_cap)
    dev_set = _load_split(args.dev, args.doc_cap)
    vocab = corpus.build_vocab(train_set, args.vocab_size)
    config = _make_config(args)
    if args.glove:
        try:
            emb = corpus.load_embeddings(args.glove, vocab, config.d_emb)
        except (OSError, corpus.CorpusError) as e:
            raise DataError(str(e))
    else:
        emb = corpus.random_embeddings(vocab, config.d_emb, seed=args.seed,
                                       frozen=True)
    model = QGModel.init(config, vocab, emb)

    best = {"nll": float("inf"), "arrays": None, "emb": None}

    def snapshot():
        nll = decoder.mean_corpus_nll(model, dev_set)
        if nll < best["nll"]:
            best.update(nll=nll,
                        arrays={n: model.params[n].copy()
                                for n in model.params.names()},
                        emb=model.embeddings.matrix.copy())
        return nll

    tcfg = _make_train_config(args)

    def on_log(step, loss):
        print(f"step {step}  loss {loss:.4f}", flush=True)

    try:
        decoder.train(model, train_set, tcfg, on_log=on_log)
    except decoder.TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    snapshot()
    # keep the best-dev snapshot (final params when it never improved)
    if best["arrays"] is not None:
        for n in model.params.names():
            model.params[n] = best["arrays"][n]
        model.embeddings.matrix = best["emb"]
    checkpoint.save(model, args.out)
    print(f"saved checkpoint to {args.out}  (dev NLL {best['nll']:.4f})")
    return EXIT_OK


def cmd_generate(args):
    try:
        model = checkpoint.load(args.checkpoint)
    except (OSError, checkpoint.CheckpointError) as e:
        raise DataError(str(e))
    if args.vocab:
        try:
            with open(args.vocab, encoding="utf-8") as fh:
                tokens = json.load(fh)
            external = corpus.Vocab(list(tokens))
        except (OSError, ValueError) as e:
            raise DataError(f"--vocab: {e}")
        if external.content_hash() != model.vocab.content_hash():
            raise DataError("vocab hash mismatch between checkpoint and "
                            "provided vocab")
    examples = _load_split(args.input, corpus.DEFAULT_DOC_CAP)
    beam = 1 if args.greedy else args.beam
    with open(args.output, "w", encoding="utf-8") as fh:
        for ex in examples:
            text, score, trace = inference.generate(
                model, ex, beam_size=beam, max_len=args.max_len,
                length_normalize=not args.raw_score)
            row = {"id": ex.id, "question": text, "score": score}
            if args.dump_attention:
                row["stage_attentions"] = [a.tolist()
                                           for a in trace.stage_attentions]
                row["step_attentions"] = [a.tolist()
                                          for a in trace.step_attentions]
            fh.write(json.dumps(row) + "\n")
    print(f"wrote {len(examples)} questions to {args.output}")
    return EXIT_OK


def _read_question_jsonl(path):
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                out[str(obj["id"])] = corpus.tokenize(obj["question"])
    except (OSError, ValueError, KeyError) as e:
        raise DataError(f"{path}: {e}")
    if not out:
        raise DataError(f"{path}: no usable lines")
    return out


def cmd_evaluate(args):
    preds = _read_question_jsonl(args.predictions)
    refs = _read_question_jsonl(args.references)
    missing = sorted(set(refs) - set(preds))
    if missing:
        print(f"missing predictions for ids: {', '.join(missing)}",
              file=sys.stderr)
        if not args.allow_missing:
            return EXIT_DATA
    ids = [i for i in refs if i in preds]
    if not ids:
        raise DataError("no overlapping ids between predictions and references")
    report = metrics.evaluate_corpus([preds[i] for i in ids],
                                     [refs[i] for i in ids], ids=ids)
    summary = report.corpus_scores()
    print(json.dumps(summary, indent=2))
    if args.out_json:
        with open(args.out_json, "w", encoding="utf-8") as fh:
            json.dump({**summary, "per_example": report.per_example}, fh,
                      indent=2)
    if args.out_csv:
        with open(args.out_csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["id", "bleu4", "rougeL",
                                               "meteor"])
            w.writeheader()
            for row in report.per_example:
                w.writerow(row)
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradcheck import full_model_grad_check
    report = full_model_grad_check(d=args.dim, stages=args.stages,
                                   seed=args.seed, epsilon=args.epsilon,
                                   tolerance=args.tolerance)
    failed = [r for r in report if not r[2]]
    for name, err, ok in report:
        print(f"{'PASS' if ok else 'FAIL'}  {name:24s}  max rel err {err:.2e}")
    if failed:
        print(f"{len(failed)} parameter(s) failed", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"all {len(report)} parameters pass at {args.tolerance:g}")
    return EXIT_OK


def cmd_ablate(args):
    splits = {"train": _load_split(args.train, args.doc_cap),
              "dev": _load_split(args.dev, args.doc_cap)}
    if args.test:
        splits["test"] = _load_split(args.test, args.doc_cap)
    vocab = corpus.build_vocab(splits["train"], args.vocab_size)
    config = _make_config(args)
    emb = None
    if args.glove:
        emb = corpus.load_embeddings(args.glove, vocab, config.d_emb)
    rows = harness.run_ablation(
        splits, harness.default_matrix(), config, _make_train_config(args),
        vocab, embeddings=emb, beam_size=args.beam, max_len=args.max_len,
        on_log=lambda name, step, loss:
            print(f"[{name}] step {step}  loss {loss:.4f}", flush=True))
    md = harness.to_markdown(rows)
    with open(args.out_md, "w", encoding="utf-8") as fh:
        fh.write(md)
    harness.write_csv(rows, args.out_csv)
    print(md)
    return EXIT_OK


def cmd_stats(args):
    examples = _load_split(args.input, doc_cap=10 ** 9)
    stats = corpus.corpus_stats(examples)
    print(json.dumps(stats, indent=2))
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _validate_common(args)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ndcore.GraphError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
