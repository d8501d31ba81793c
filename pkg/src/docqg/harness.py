"""Reproducible ablation driver: the variant matrix over attention on/off,
masking on/off, and stage count, plus the attention-coverage average."""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass

import numpy as np

from . import decoder, inference, metrics
from .model import QGModel


@dataclass(frozen=True)
class AblationSpec:
    """One variant; every field other than `name` is a single-axis delta
    from the base configuration."""
    name: str
    stages: int = 2
    use_attention: bool = True
    use_mask: bool = True


def default_matrix():
    return [
        AblationSpec("2-stage (base)"),
        AblationSpec("without attention", use_attention=False),
        AblationSpec("without masking", use_mask=False),
        AblationSpec("1-stage attention", stages=1),
        AblationSpec("3-stage attention", stages=3),
    ]


def variant_config(base_config, spec):
    return dataclasses.replace(
        base_config, stages=spec.stages, use_attention=spec.use_attention,
        use_mask=spec.use_mask)


def coverage_average(model, examples):
    """Mean final-stage attention mass on question words; None when the
    variant has no attention pipeline."""
    if not model.config.use_attention:
        return None
    scores = []
    for ex in examples:
        if ex.question_tokens is None:
            continue
        stepper = inference.ModelStepper(model, ex)
        a_k = stepper.stage_attentions[-1]
        scores.append(metrics.attention_coverage(
            a_k, ex.doc_tokens, ex.question_tokens, ex.answer_span))
    return float(np.mean(scores)) if scores else None


def evaluate_model(model, examples, beam_size=4, max_len=30):
    cands, refs = [], []
    for ex in examples:
        text, _, _ = inference.generate(model, ex, beam_size=beam_size,
                                        max_len=max_len)
        cands.append(text.split())
        refs.append(ex.question_tokens)
    report = metrics.evaluate_corpus(cands, refs)
    return report


def run_ablation(splits, specs, base_config, train_config, vocab,
                 embeddings=None, beam_size=4, max_len=30, on_log=None):
    """Train and evaluate every variant from the same seed.

    `splits` maps 'train'/'dev' (and optionally 'test') to example lists.
    A diverging variant becomes a failed row; the run continues.
    """
    eval_split = splits.get("dev") or splits["train"]
    rows = []
    for spec in specs:
        cfg = variant_config(base_config, spec)
        model = QGModel.init(cfg, vocab, embeddings)
        row = {"variant": spec.name, "stages": spec.stages,
               "attention": spec.use_attention, "masking": spec.use_mask,
               "status": "ok"}
        try:
            decoder.train(model, splits["train"], train_config,
                          on_log=(lambda s, l, n=spec.name:
                                  on_log and on_log(n, s, l)))
            report = evaluate_model(model, eval_split, beam_size=beam_size,
                                    max_len=max_len)
            row.update(bleu4=report.bleu4, meteor=report.meteor,
                       rougeL=report.rougeL,
                       coverage=coverage_average(model, eval_split))
        except decoder.TrainingDiverged as e:
            row.update(status=f"failed: {e}", bleu4=None, meteor=None,
                       rougeL=None, coverage=None)
        rows.append(row)
    return rows


def _fmt(x):
    if x is None:
        return "-"
    if isinstance(x, float):
        return f"{x:.4f}"
    return str(x)


def to_markdown(rows):
    cols = ["variant", "bleu4", "meteor", "rougeL", "coverage", "status"]
    lines = ["| " + " | ".join(cols) + " |",
             "|" + "|".join("---" for _ in cols) + "|"]
    for row in rows:
        lines.append("| " + " | ".join(_fmt(row.get(c)) for c in cols) + " |")
    return "\n".join(lines) + "\n"


def write_csv(rows, path):
    cols = ["variant", "stages", "attention", "masking", "bleu4", "meteor",
            "rougeL", "coverage", "status"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for row in rows:
            w.writerow({c: row.get(c) for c in cols})
