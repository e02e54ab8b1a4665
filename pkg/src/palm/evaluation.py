"""Perplexity and ROUGE evaluation plus the plain-text report format.

ROUGE here runs over this package's own tokenization (or any token
sequences handed in); it tracks trends, not the official Perl script.
"""

from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import tokenizer as tk
from .decoding import beam_search
from .errors import DataError
from .model import PalmModel, Seq2SeqExample


@dataclass(frozen=True)
class Score:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_pr(cls, p: float, r: float) -> "Score":
        f1 = 0.0 if p + r == 0.0 else 2.0 * p * r / (p + r)
        return cls(p, r, f1)


def _ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate, reference, n: int) -> Score:
    """Clipped n-gram overlap precision/recall/F1."""
    cand = _ngrams(list(candidate), n)
    ref = _ngrams(list(reference), n)
    overlap = sum(min(count, ref[gram]) for gram, count in cand.items())
    c_total = sum(cand.values())
    r_total = sum(ref.values())
    p = overlap / c_total if c_total else 0.0
    r = overlap / r_total if r_total else 0.0
    return Score.from_pr(p, r)


def lcs_length(a, b) -> int:
    """Longest common subsequence length, two-row dynamic program."""
    a = list(a)
    b = list(b)
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference) -> Score:
    cand = list(candidate)
    ref = list(reference)
    lcs = lcs_length(cand, ref)
    p = lcs / len(cand) if cand else 0.0
    r = lcs / len(ref) if ref else 0.0
    return Score.from_pr(p, r)


def rouge(candidate, reference, variant) -> Score:
    """variant: 1, 2, or "L" (case-insensitive strings accepted)."""
    if not list(reference):
        raise DataError("ROUGE needs a non-empty reference")
    key = str(variant).upper()
    if key == "1":
        return rouge_n(candidate, reference, 1)
    if key == "2":
        return rouge_n(candidate, reference, 2)
    if key == "L":
        return rouge_l(candidate, reference)
    raise DataError(f"unknown ROUGE variant {variant!r}")


def perplexity(model: PalmModel, examples, use_pointer: bool = True) -> float:
    """exp(total NLL / total gold tokens), teacher forcing, [EOS] included."""
    if not examples:
        raise DataError("empty eval set")
    total = 0.0
    count = 0
    for example in examples:
        with ag.no_grad():
            nll, _ = model.generation_loss(example, use_pointer=use_pointer)
        total += float(nll.data.astype(np.float64).sum())
        count += nll.data.size
    return float(np.exp(total / count))


# ---------------------------------------------------------------- reports

@dataclass(frozen=True)
class ExampleRow:
    index: int
    rouge1_f1: float
    rouge2_f1: float
    rougeL_f1: float
    output: str


@dataclass(frozen=True)
class EvalReport:
    perplexity: float
    rouge1: Score
    rouge2: Score
    rougeL: Score
    rows: tuple

    @property
    def samples(self):
        return [row.output for row in self.rows]


def _mean_score(scores) -> Score:
    if not scores:
        return Score(0.0, 0.0, 0.0)
    return Score(
        float(np.mean([s.precision for s in scores])),
        float(np.mean([s.recall for s in scores])),
        float(np.mean([s.f1 for s in scores])),
    )


def evaluate(model: PalmModel, vocab: tk.Vocab, examples, beam: int = 5,
             use_pointer: bool = True, length_normalize: bool = True,
             max_len: int | None = None) -> EvalReport:
    """Teacher-forced perplexity plus ROUGE of beam output against gold."""
    if not examples:
        raise DataError("empty eval set")
    ppl = perplexity(model, examples, use_pointer=use_pointer)
    r1 = []
    r2 = []
    rl = []
    rows = []
    for i, example in enumerate(examples):
        hyp = beam_search(model, example, beam=beam, max_len=max_len,
                          use_pointer=use_pointer, length_normalize=length_normalize)
        ext = example.extended(vocab)
        cand = [ext.token_of(int(t)) for t in hyp.generated]
        ref = [ext.token_of(int(t)) for t in example.gold_ids[:-1]]
        s1 = rouge_n(cand, ref, 1)
        s2 = rouge_n(cand, ref, 2)
        sl = rouge_l(cand, ref)
        r1.append(s1)
        r2.append(s2)
        rl.append(sl)
        rows.append(ExampleRow(i, s1.f1, s2.f1, sl.f1, tk.decode(hyp.generated, ext)))
    return EvalReport(ppl, _mean_score(r1), _mean_score(r2), _mean_score(rl), tuple(rows))


def format_report(report: EvalReport) -> str:
    """key=value summary block, then a tab-separated per-example table."""
    lines = [f"perplexity={report.perplexity:.6f}"]
    for name, score in (("rouge1", report.rouge1), ("rouge2", report.rouge2),
                        ("rougeL", report.rougeL)):
        lines.append(f"{name}_precision={score.precision:.6f}")
        lines.append(f"{name}_recall={score.recall:.6f}")
        lines.append(f"{name}_f1={score.f1:.6f}")
    lines.append(f"examples={len(report.rows)}")
    lines.append("index\trouge1_f1\trouge2_f1\trougeL_f1\toutput")
    for row in report.rows:
        lines.append(
            f"{row.index}\t{row.rouge1_f1:.6f}\t{row.rouge2_f1:.6f}"
            f"\t{row.rougeL_f1:.6f}\t{row.output}"
        )
    return "\n".join(lines) + "\n"
