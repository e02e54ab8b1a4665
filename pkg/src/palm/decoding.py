"""Beam-search generation over the extended vocabulary.

The search core works on an abstract step function mapping a prefix of
extended ids (starting with [BOS]) to a probability vector, so it can be
tested against hand-built distribution tables and brute-force enumeration.
Model-backed wrappers feed generated out-of-vocabulary ids back into the
decoder as [UNK]: extended ids have no learned embedding of their own.
"""

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import tokenizer as tk
from .errors import ConfigError, DataError
from .model import PROB_FLOOR, PalmModel, Seq2SeqExample


@dataclass(frozen=True)
class Hypothesis:
    """One (partial or finished) decode.

    `logp` is the sum of log p_final over the chosen ids, with each
    probability floored the same way the training loss floors it, so
    re-scoring the ids through the model reproduces it.
    """

    ids: tuple  # extended ids, ids[0] == [BOS]
    logp: float
    finished: bool

    @property
    def gen_len(self) -> int:
        """Number of scored steps (everything after [BOS], [EOS] included)."""
        return len(self.ids) - 1

    @property
    def generated(self) -> tuple:
        """Output ids: [BOS] dropped, trailing [EOS] trimmed."""
        out = self.ids[1:]
        if out and out[-1] == tk.EOS_ID:
            out = out[:-1]
        return out

    def score(self, length_normalize: bool) -> float:
        if not length_normalize:
            return self.logp
        return self.logp / max(1, self.gen_len)


def search(step_fn, beam: int, max_len: int, length_normalize: bool = True,
           bos_id: int = tk.BOS_ID, eos_id: int = tk.EOS_ID):
    """Beam search over `step_fn`; returns finished hypotheses, best first.

    Each step expands every live hypothesis over the full distribution and
    keeps the `beam` best continuations by cumulative logp; choosing
    `eos_id` finishes a hypothesis. Anything still live at `max_len` is
    force-finished. Final ranking uses the (optionally length-normalized)
    score; ties break on the id sequence, smaller ids and prefixes first,
    at both the pruning and ranking stages.
    """
    if beam < 1:
        raise ConfigError(f"beam must be >= 1, got {beam}")
    if max_len < 1:
        raise ConfigError(f"max_len must be >= 1, got {max_len}")
    live = [Hypothesis((bos_id,), 0.0, False)]
    pool = []
    for _ in range(max_len):
        candidates = []
        for hyp in live:
            probs = np.asarray(step_fn(hyp.ids), dtype=np.float64)
            logs = np.log(np.maximum(probs, PROB_FLOOR))
            # per-source top `beam` is enough: the overall top `beam`
            # candidates are each among their own source's best `beam`
            order = np.argsort(-logs, kind="stable")[:beam]
            for v in order:
                candidates.append(Hypothesis(hyp.ids + (int(v),), hyp.logp + float(logs[v]), False))
        candidates.sort(key=lambda c: (-c.logp, c.ids))
        live = []
        for cand in candidates[:beam]:
            if cand.ids[-1] == eos_id:
                pool.append(Hypothesis(cand.ids, cand.logp, True))
            else:
                live.append(cand)
        if not live:
            break
    pool.extend(live)  # forced stops keep finished=False
    pool.sort(key=lambda h: (-h.score(length_normalize), h.ids))
    return pool


def greedy(step_fn, max_len: int, bos_id: int = tk.BOS_ID, eos_id: int = tk.EOS_ID) -> Hypothesis:
    """Argmax decoding; the reference behavior for beam == 1."""
    ids = (bos_id,)
    logp = 0.0
    for _ in range(max_len):
        probs = np.asarray(step_fn(ids), dtype=np.float64)
        v = int(np.argmax(probs))
        logp += float(np.log(max(float(probs[v]), PROB_FLOOR)))
        ids = ids + (v,)
        if v == eos_id:
            return Hypothesis(ids, logp, True)
    return Hypothesis(ids, logp, False)


# ------------------------------------------------------------- model glue

def model_step_fn(model: PalmModel, example: Seq2SeqExample, use_pointer: bool = True):
    """Close over one encoded context; prefixes arrive as extended ids."""
    with ag.no_grad():
        enc = model.encode(example.context_ids)
    v = model.cfg.vocab_size

    def step_fn(prefix_ids):
        arr = np.asarray(prefix_ids, dtype=np.int64)
        base = np.where(arr < v, arr, tk.UNK_ID)
        return model.step_distributions(example, base, use_pointer=use_pointer, enc=enc).p_final

    return step_fn


def beam_search(model: PalmModel, example: Seq2SeqExample, beam: int = 5,
                max_len: int | None = None, use_pointer: bool = True,
                length_normalize: bool = True) -> Hypothesis:
    """Best hypothesis for the example's context."""
    limit = model.cfg.max_target
    max_len = limit if max_len is None else min(max_len, limit)
    ranked = search(model_step_fn(model, example, use_pointer), beam, max_len,
                    length_normalize=length_normalize)
    return ranked[0]


def rescore(model: PalmModel, example: Seq2SeqExample, generated_ids,
            use_pointer: bool = True) -> float:
    """Teacher-forced sum of log p_final over exactly `generated_ids`.

    Independent bookkeeping check for Hypothesis.logp; works whether or
    not the sequence ends with [EOS].
    """
    gold = np.asarray(generated_ids, dtype=np.int64)
    if gold.size == 0:
        raise DataError("nothing to rescore")
    v = model.cfg.vocab_size
    dec_in = np.concatenate([[tk.BOS_ID], np.where(gold[:-1] < v, gold[:-1], tk.UNK_ID)])
    with ag.no_grad():
        enc = model.encode(example.context_ids)
        states = model.decoder_states(dec_in, enc)
        if use_pointer:
            pv = model.vocab_distribution(states, example.ext_size)
            alpha, z = model.copy_attention(states, enc)
            pc = model.copy_distribution(alpha, example.context_ext_ids, example.ext_size)
            p, _ = model.mixture(pv, pc, z, states)
        else:
            p = model.vocab_distribution(states)
            gold = np.where(gold < v, gold, tk.UNK_ID)
        picked = np.maximum(p.data[np.arange(gold.size), gold], PROB_FLOOR)
    return float(np.log(picked.astype(np.float64)).sum())


def context_example(vocab: tk.Vocab, context_tokens) -> Seq2SeqExample:
    """Generation-only example: real context, placeholder decoder fields."""
    tokens = list(context_tokens)
    if not tokens:
        raise DataError("empty context")
    ext = tk.extend(vocab, tokens)
    ctx_ext = np.asarray(ext.context_positions, dtype=np.int64)
    return Seq2SeqExample(
        context_ids=np.where(ctx_ext < vocab.size, ctx_ext, tk.UNK_ID),
        context_ext_ids=ctx_ext,
        decoder_input_ids=np.asarray([tk.BOS_ID], dtype=np.int64),
        gold_ids=np.asarray([tk.EOS_ID], dtype=np.int64),
        ext_size=ext.size,
        extra_tokens=tuple(ext.extra),
    )


def generate_text(model: PalmModel, vocab: tk.Vocab, text: str, beam: int = 5,
                  max_len: int | None = None, use_pointer: bool = True,
                  length_normalize: bool = True) -> str:
    """Tokenize, decode with the beam, and render back to a string."""
    tokens = tk.tokenize(text, vocab)[: model.cfg.max_context]
    example = context_example(vocab, tokens)
    hyp = beam_search(model, example, beam=beam, max_len=max_len,
                      use_pointer=use_pointer, length_normalize=length_normalize)
    return tk.decode(hyp.generated, example.extended(vocab))
