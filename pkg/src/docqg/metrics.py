"""Automatic evaluation: BLEU-1..4, ROUGE-L, METEOR-lite, attention coverage.

All metrics operate on token lists and depend only on token equality, so any
consistent relabeling leaves the scores unchanged.  METEOR-lite uses
exact + suffix-stem matching only (no synonym resources); its scores are
internally comparable, not comparable to toolkit METEOR.
"""

from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

ROUGE_BETA = 1.2
SENTENCE_BLEU_EPS = 1e-9
_STEM_SUFFIXES = ("ing", "ed", "es", "s", "ly")


class MetricError(ValueError):
    pass


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidates, references, max_n=4, smooth_eps=None):
    """Corpus-level BLEU: geometric mean of clipped modified n-gram
    precisions with a single corpus-level brevity penalty.

    `smooth_eps` substitutes for zero precisions (used at sentence level);
    corpus scoring leaves them unsmoothed.
    """
    if not candidates or len(candidates) != len(references):
        raise MetricError("bleu: need equal, non-empty candidate/reference lists")
    if not 1 <= max_n <= 4:
        raise MetricError("bleu: max_n must be in 1..4")
    matched = [0] * max_n
    total = [0] * max_n
    cand_len = ref_len = 0
    for cand, ref in zip(candidates, references):
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            cn = _ngrams(cand, n)
            rn = _ngrams(ref, n)
            matched[n - 1] += sum(min(c, rn[g]) for g, c in cn.items())
            total[n - 1] += sum(cn.values())
    precisions = []
    for m, t in zip(matched, total):
        p = m / t if t else 0.0
        if p == 0.0 and smooth_eps is not None:
            p = smooth_eps
        precisions.append(p)
    if any(p == 0.0 for p in precisions):
        return 0.0
    if cand_len == 0:
        return 0.0
    bp = 1.0 if cand_len >= ref_len else float(np.exp(1.0 - ref_len / cand_len))
    return bp * float(np.exp(np.mean([np.log(p) for p in precisions])))


def sentence_bleu(candidate, reference, max_n=4):
    return bleu([candidate], [reference], max_n=max_n,
                smooth_eps=SENTENCE_BLEU_EPS)


def lcs_length(a, b):
    """Dynamic-programming longest common subsequence length."""
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference, beta=ROUGE_BETA):
    """LCS-based F-measure, beta weighting recall."""
    if not candidate or not reference:
        warnings.warn("rouge_l: empty input scores 0")
        return 0.0
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    r = lcs / len(reference)
    p = lcs / len(candidate)
    return ((1 + beta ** 2) * r * p) / (r + beta ** 2 * p)


def stem(token):
    for suf in _STEM_SUFFIXES:
        if token.endswith(suf) and len(token) - len(suf) >= 3:
            return token[:len(token) - len(suf)]
    return token


def _align(candidate, reference):
    """Unigram alignment, exact matches first, then stem matches; greedy
    leftmost pairing.  Returns (cand index, ref index) pairs."""
    pairs = []
    used_c, used_r = set(), set()
    for key in (lambda t: t, stem):
        ref_slots = {}
        for j, t in enumerate(reference):
            if j not in used_r:
                ref_slots.setdefault(key(t), []).append(j)
        for i, t in enumerate(candidate):
            if i in used_c:
                continue
            slots = ref_slots.get(key(t))
            if slots:
                j = slots.pop(0)
                pairs.append((i, j))
                used_c.add(i)
                used_r.add(j)
    return sorted(pairs)


def meteor_lite(candidate, reference):
    """Recall-weighted harmonic mean of aligned unigrams with a fragmentation
    penalty of 0.5 * (chunks / matches)^3."""
    if not candidate or not reference:
        warnings.warn("meteor_lite: empty input scores 0")
        return 0.0
    pairs = _align(candidate, reference)
    m = len(pairs)
    if m == 0:
        return 0.0
    p = m / len(candidate)
    r = m / len(reference)
    f_mean = 10 * p * r / (r + 9 * p)
    chunks = 1
    for (ci, ri), (cj, rj) in zip(pairs, pairs[1:]):
        if cj != ci + 1 or rj != ri + 1:
            chunks += 1
    penalty = 0.5 * (chunks / m) ** 3
    return f_mean * (1.0 - penalty)


def attention_coverage(attention, doc_tokens, question_tokens, answer_span=None):
    """Total attention mass on document positions whose token occurs in the
    ground-truth question; answer-span positions are excluded."""
    attention = np.asarray(attention, dtype=np.float64)
    if attention.shape != (len(doc_tokens),):
        raise MetricError(
            f"attention_coverage: attention length {attention.shape} vs "
            f"{len(doc_tokens)} document tokens")
    qset = set(question_tokens)
    m, n = answer_span if answer_span is not None else (-1, -1)
    return float(sum(a for i, (a, t) in enumerate(zip(attention, doc_tokens))
                     if t in qset and not (m <= i <= n)))


@dataclass
class EvalReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    meteor: float
    rougeL: float
    n_examples: int
    per_example: list = field(default_factory=list)  # dicts keyed by id

    def corpus_scores(self):
        return {"bleu1": self.bleu1, "bleu2": self.bleu2, "bleu3": self.bleu3,
                "bleu4": self.bleu4, "meteor": self.meteor,
                "rougeL": self.rougeL, "n_examples": self.n_examples}


def evaluate_corpus(candidates, references, ids=None):
    """Corpus metrics plus a per-example breakdown (sentence-level BLEU-4 is
    epsilon-smoothed; corpus BLEU is not)."""
    if not candidates or len(candidates) != len(references):
        raise MetricError("evaluate_corpus: empty or misaligned corpora")
    ids = ids if ids is not None else [str(i) for i in range(len(candidates))]
    per = []
    for ex_id, cand, ref in zip(ids, candidates, references):
        per.append({
            "id": ex_id,
            "bleu4": sentence_bleu(cand, ref),
            "rougeL": rouge_l(cand, ref),
            "meteor": meteor_lite(cand, ref),
        })
    return EvalReport(
        bleu1=bleu(candidates, references, 1),
        bleu2=bleu(candidates, references, 2),
        bleu3=bleu(candidates, references, 3),
        bleu4=bleu(candidates, references, 4),
        meteor=float(np.mean([p["meteor"] for p in per])),
        rougeL=float(np.mean([p["rougeL"] for p in per])),
        n_examples=len(candidates),
        per_example=per,
    )
