"""Transformer encoder-decoder with a copy mechanism over the context.

The encoder reads the context bidirectionally and carries a denoising head
(hidden transform, GELU, layer norm, then the tied embedding as output
projection). The decoder attends causally over the prefix and crosses into
the encoder states. Three small heads sit on top of the decoder state s_t:

  * vocabulary head: softmax(tied_embedding @ (s_t W + b)) over base ids,
    with exact zeros on any per-example extra ids;
  * copy head: additive attention over context states giving weights alpha
    and a summary vector z; alpha scattered over the extended id space
    yields the copy distribution;
  * gate: a scalar in (0,1) from (z, s_t) blending the two distributions.

Everything runs per example (no batch axis): sequences at this scale are
short and ragged, and the absence of padding keeps the math honest.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, fields, replace
from typing import Sequence

import numpy as np

from . import autograd as ag
from . import rng as _rng
from . import tokenizer as tk
from .errors import DataError
from .pipeline import IGNORE_INDEX
from .tokenizer import BOS_ID, EOS_ID, NUM_SPECIALS, UNK_ID

CHECKPOINT_MAGIC = b"PLMC"
CHECKPOINT_VERSION = 1

PROB_FLOOR = 1e-9  # gold probabilities are clamped here before the log


@dataclass(frozen=True)
class ModelConfig:
    enc_layers: int = 2
    dec_layers: int = 2
    hidden: int = 128
    ffn: int = 512
    heads: int = 4
    dropout: float = 0.1
    max_context: int = 400
    max_target: int = 100
    vocab_size: int = 0

    def __post_init__(self):
        if self.vocab_size and self.vocab_size < NUM_SPECIALS:
            raise DataError(f"vocab_size {self.vocab_size} cannot hold the specials")
        if self.hidden % self.heads != 0:
            raise DataError(f"hidden {self.hidden} not divisible by heads {self.heads}")

    @classmethod
    def desk(cls, vocab_size: int, **overrides) -> "ModelConfig":
        """Small preset sized so the full loop runs on a CPU in minutes.

        Depth and width stay at the class defaults; the attention windows
        shrink because step cost grows with sequence length and the desk
        corpora use short documents anyway.
        """
        base = dict(max_context=128, max_target=32)
        base.update(overrides)
        return cls(vocab_size=vocab_size, **base)

    @classmethod
    def paper_scale(cls, vocab_size: int, **overrides) -> "ModelConfig":
        """The published configuration: 12+12 layers, 768 wide, 12 heads."""
        base = dict(enc_layers=12, dec_layers=12, hidden=768, ffn=3072, heads=12, dropout=0.1)
        base.update(overrides)
        return cls(vocab_size=vocab_size, **base)

    def to_lines(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)!r}\n" for f in fields(self))

    @classmethod
    def from_lines(cls, text: str) -> "ModelConfig":
        values = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, raw = line.partition("=")
            if not _:
                raise DataError(f"bad config line: {line!r}")
            values[key.strip()] = raw.strip()
        kwargs = {}
        for f in fields(cls):
            if f.name in values:
                raw = values.pop(f.name)
                kwargs[f.name] = float(raw) if f.type == "float" else int(raw)
        if values:
            raise DataError(f"unknown config keys: {sorted(values)}")
        return cls(**kwargs)


def _param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    """Every learnable array, in a stable registration order."""
    h, f, v = cfg.hidden, cfg.ffn, cfg.vocab_size
    shapes: dict[str, tuple] = {
        "tok_emb": (v, h),
        "pos_enc": (cfg.max_context, h),
        "pos_dec": (cfg.max_target + 1, h),
    }

    def attention(prefix):
        for part in ("wq", "wk", "wv", "wo"):
            shapes[f"{prefix}.{part}"] = (h, h)
        for part in ("bq", "bk", "bv", "bo"):
            shapes[f"{prefix}.{part}"] = (h,)

    def block(prefix, cross):
        shapes[f"{prefix}.ln1.g"] = (h,)
        shapes[f"{prefix}.ln1.b"] = (h,)
        attention(f"{prefix}.attn")
        if cross:
            shapes[f"{prefix}.lnx.g"] = (h,)
            shapes[f"{prefix}.lnx.b"] = (h,)
            attention(f"{prefix}.xattn")
        shapes[f"{prefix}.ln2.g"] = (h,)
        shapes[f"{prefix}.ln2.b"] = (h,)
        shapes[f"{prefix}.ffn.w1"] = (h, f)
        shapes[f"{prefix}.ffn.b1"] = (f,)
        shapes[f"{prefix}.ffn.w2"] = (f, h)
        shapes[f"{prefix}.ffn.b2"] = (h,)

    for i in range(cfg.enc_layers):
        block(f"enc{i}", cross=False)
    shapes["enc_ln.g"] = (h,)
    shapes["enc_ln.b"] = (h,)
    for i in range(cfg.dec_layers):
        block(f"dec{i}", cross=True)
    shapes["dec_ln.g"] = (h,)
    shapes["dec_ln.b"] = (h,)

    shapes["mlm.w"] = (h, h)
    shapes["mlm.b"] = (h,)
    shapes["mlm.ln.g"] = (h,)
    shapes["mlm.ln.b"] = (h,)
    shapes["mlm.out_b"] = (v,)

    shapes["lm.w"] = (h, h)
    shapes["lm.b"] = (h,)

    shapes["ptr.ctx_proj"] = (h, h)
    shapes["ptr.dec_proj"] = (h, h)
    shapes["ptr.score_b"] = (h,)
    shapes["ptr.score_w"] = (h,)
    shapes["ptr.gate_ctx"] = (h,)
    shapes["ptr.gate_dec"] = (h,)
    shapes["ptr.gate_b"] = ()
    return shapes


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> dict[str, ag.Tensor]:
    """Fresh parameters: normal(0, 0.02) matrices, zero biases, unit norm gains.

    Each array draws from its own named stream, so adding or removing a
    parameter never shifts any other parameter's initial values.
    """
    if cfg.vocab_size < NUM_SPECIALS:
        raise DataError("config has no vocab_size")
    params: dict[str, ag.Tensor] = {}
    for name, shape in _param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.startswith("b") or leaf in ("out_b", "score_b", "gate_b"):
            data = np.zeros(shape, dtype=dtype)
        elif leaf == "g":
            data = np.ones(shape, dtype=dtype)
        elif leaf in ("score_w", "gate_ctx", "gate_dec"):
            gen = _rng.generator("init", seed, name)
            data = (gen.standard_normal(shape) * 0.02).astype(dtype)
        else:
            gen = _rng.generator("init", seed, name)
            data = (gen.standard_normal(shape) * 0.02).astype(dtype)
        params[name] = ag.Tensor(data, requires_grad=True)
    return params


@dataclass
class EncoderOutput:
    """Per-position context states plus denoising logits over the base vocab."""

    states: ag.Tensor  # (m, hidden)
    mlm_logits: ag.Tensor  # (m, vocab_size)

    @property
    def length(self) -> int:
        return self.states.shape[0]


@dataclass
class StepDistribution:
    """What the model believes at one decoding step."""

    p_final: np.ndarray  # over the extended vocabulary
    mix: float | None  # gate value in (0,1); None when the copy path is off
    alpha: np.ndarray | None  # copy weights over the m context positions


@dataclass(eq=False)
class Seq2SeqExample:
    """One (context, target) pair prepared for the model.

    Encoder and decoder inputs live in the base id space; gold ids live in
    the extended space so copied out-of-vocabulary tokens stay distinct.
    """

    context_ids: np.ndarray  # encoder input (base ids)
    context_ext_ids: np.ndarray  # same positions, extended ids
    decoder_input_ids: np.ndarray  # [BOS] + target base ids
    gold_ids: np.ndarray  # target extended ids + [EOS]
    ext_size: int
    extra_tokens: tuple = ()

    @classmethod
    def from_ids(cls, context_ids, target_ids, vocab_size: int) -> "Seq2SeqExample":
        """Pairs stored as bare ids: the extended space is just the base space."""
        ctx = np.asarray(context_ids, dtype=np.int64)
        tgt = np.asarray(target_ids, dtype=np.int64)
        if ctx.size == 0 or tgt.size == 0:
            raise DataError("example needs non-empty context and target")
        return cls(
            context_ids=ctx,
            context_ext_ids=ctx.copy(),
            decoder_input_ids=np.concatenate([[BOS_ID], tgt]),
            gold_ids=np.concatenate([tgt, [EOS_ID]]),
            ext_size=vocab_size,
        )

    @classmethod
    def from_tokens(cls, context_tokens, target_tokens, vocab: tk.Vocab) -> "Seq2SeqExample":
        """Surface tokens: out-of-vocabulary context words get extra ids."""
        ext = tk.extend(vocab, context_tokens)
        ctx_ext = np.asarray(ext.context_positions, dtype=np.int64)
        ctx_base = np.where(ctx_ext < vocab.size, ctx_ext, UNK_ID)
        tgt_ext = np.asarray([ext.id_of(t) for t in target_tokens], dtype=np.int64)
        tgt_base = np.where(tgt_ext < vocab.size, tgt_ext, UNK_ID)
        if ctx_base.size == 0 or tgt_base.size == 0:
            raise DataError("example needs non-empty context and target")
        return cls(
            context_ids=ctx_base,
            context_ext_ids=ctx_ext,
            decoder_input_ids=np.concatenate([[BOS_ID], tgt_base]),
            gold_ids=np.concatenate([tgt_ext, [EOS_ID]]),
            ext_size=ext.size,
            extra_tokens=tuple(ext.extra),
        )

    def extended(self, vocab: tk.Vocab) -> tk.ExtendedVocab:
        return tk.ExtendedVocab(
            base=vocab,
            extra=list(self.extra_tokens),
            context_positions=self.context_ext_ids.tolist(),
        )


@dataclass
class LossResult:
    nll_per_token: ag.Tensor | None  # one entry per predicted token (incl. [EOS])
    mlm_loss: ag.Tensor | None
    clamped: int  # gold tokens whose probability hit the floor


class PalmModel:
    """Ties config and parameters together and exposes the forward passes."""

    def __init__(self, cfg: ModelConfig, params: dict[str, ag.Tensor] | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed)
        expected = _param_shapes(cfg)
        got = {name: tuple(t.shape) for name, t in self.params.items()}
        want = {name: tuple(shape) for name, shape in expected.items()}
        if got != want:
            bad = sorted(set(got.items()) ^ set(want.items()))
            raise DataError(f"parameter set does not match config: {bad[:4]}")

    # -------------------------------------------------------------- plumbing

    def _p(self, name: str) -> ag.Tensor:
        return self.params[name]

    @property
    def dtype(self):
        return self.params["tok_emb"].dtype

    def _linear(self, x: ag.Tensor, w: str, b: str | None = None) -> ag.Tensor:
        y = x @ self._p(w)
        if b is not None:
            y = y + self._p(b)
        return y

    def _drop(self, x: ag.Tensor, rng) -> ag.Tensor:
        return ag.dropout(x, self.cfg.dropout, rng)

    def _attention(self, x_q, x_kv, prefix, causal, rng):
        cfg = self.cfg
        if x_kv is None:
            x_kv = x_q
        heads, width = cfg.heads, cfg.hidden // cfg.heads
        tq, tk_ = x_q.shape[0], x_kv.shape[0]
        q = self._linear(x_q, f"{prefix}.wq", f"{prefix}.bq")
        k = self._linear(x_kv, f"{prefix}.wk", f"{prefix}.bk")
        v = self._linear(x_kv, f"{prefix}.wv", f"{prefix}.bv")
        q = ag.transpose(ag.reshape(q, (tq, heads, width)), (1, 0, 2))
        k = ag.transpose(ag.reshape(k, (tk_, heads, width)), (1, 0, 2))
        v = ag.transpose(ag.reshape(v, (tk_, heads, width)), (1, 0, 2))
        scores = (q @ ag.transpose(k, (0, 2, 1))) * (1.0 / np.sqrt(width))
        if causal:
            mask = np.triu(np.full((tq, tk_), -1e9, dtype=self.dtype), k=1)
            scores = scores + ag.Tensor(mask)
        att = self._drop(ag.softmax(scores, axis=-1), rng)
        out = att @ v  # (heads, tq, width)
        out = ag.reshape(ag.transpose(out, (1, 0, 2)), (tq, cfg.hidden))
        return self._linear(out, f"{prefix}.wo", f"{prefix}.bo")

    def _ln(self, x, prefix):
        return ag.layer_norm(x, self._p(f"{prefix}.g"), self._p(f"{prefix}.b"))

    def _ffn(self, x, prefix, rng):
        y = ag.gelu(self._linear(x, f"{prefix}.w1", f"{prefix}.b1"))
        return self._drop(self._linear(y, f"{prefix}.w2", f"{prefix}.b2"), rng)

    # -------------------------------------------------------------- encoder

    def encode(self, context_ids, rng=None) -> EncoderOutput:
        """Bidirectional pass over the context; also computes denoising logits."""
        ids = np.asarray(context_ids, dtype=np.int64)
        m = ids.size
        if m < 1:
            raise DataError("encoder input is empty")
        if m > self.cfg.max_context:
            raise DataError(f"context length {m} exceeds limit {self.cfg.max_context}")
        emb = ag.take_rows(self._p("tok_emb"), ids)
        pos = ag.take_rows(self._p("pos_enc"), np.arange(m))
        x = self._drop(emb + pos, rng)
        for i in range(self.cfg.enc_layers):
            p = f"enc{i}"
            x = x + self._drop(self._attention(self._ln(x, f"{p}.ln1"), None, f"{p}.attn", False, rng), rng)
            x = x + self._ffn(self._ln(x, f"{p}.ln2"), f"{p}.ffn", rng)
        states = self._ln(x, "enc_ln")
        head = ag.gelu(self._linear(states, "mlm.w", "mlm.b"))
        head = ag.layer_norm(head, self._p("mlm.ln.g"), self._p("mlm.ln.b"))
        logits = head @ ag.transpose(self._p("tok_emb")) + self._p("mlm.out_b")
        return EncoderOutput(states=states, mlm_logits=logits)

    # -------------------------------------------------------------- decoder

    def decoder_states(self, prefix_ids, enc: EncoderOutput, rng=None) -> ag.Tensor:
        """Causal decoder pass; returns states for every prefix position."""
        ids = np.asarray(prefix_ids, dtype=np.int64)
        t = ids.size
        if t < 1:
            raise DataError("decoder prefix is empty")
        if ids[0] != BOS_ID:
            raise DataError("decoder prefix must begin with [BOS]")
        if t > self.cfg.max_target + 1:
            raise DataError(f"prefix length {t} exceeds limit {self.cfg.max_target + 1}")
        emb = ag.take_rows(self._p("tok_emb"), ids)
        pos = ag.take_rows(self._p("pos_dec"), np.arange(t))
        y = self._drop(emb + pos, rng)
        for i in range(self.cfg.dec_layers):
            p = f"dec{i}"
            y = y + self._drop(self._attention(self._ln(y, f"{p}.ln1"), None, f"{p}.attn", True, rng), rng)
            y = y + self._drop(
                self._attention(self._ln(y, f"{p}.lnx"), enc.states, f"{p}.xattn", False, rng), rng
            )
            y = y + self._ffn(self._ln(y, f"{p}.ln2"), f"{p}.ffn", rng)
        return self._ln(y, "dec_ln")

    def decode_step(self, prefix_ids, enc: EncoderOutput, rng=None) -> ag.Tensor:
        """State for the last prefix position only."""
        states = self.decoder_states(prefix_ids, enc, rng)
        return ag.take_rows(states, np.array([states.shape[0] - 1]))

    # -------------------------------------------------------------- heads

    def vocab_distribution(self, states: ag.Tensor, ext_size: int | None = None) -> ag.Tensor:
        """Softmax over base ids; extra ids (if any) get exact zeros."""
        u = self._linear(states, "lm.w", "lm.b")
        logits = u @ ag.transpose(self._p("tok_emb"))
        pv = ag.softmax(logits, axis=-1)
        v = self.cfg.vocab_size
        if ext_size is not None and ext_size > v:
            zeros = ag.Tensor(np.zeros((states.shape[0], ext_size - v), dtype=self.dtype))
            pv = ag.concat([pv, zeros], axis=1)
        return pv

    def copy_attention(self, states: ag.Tensor, enc: EncoderOutput):
        """Additive attention of each decoder state over the context states."""
        t, m = states.shape[0], enc.length
        h = self.cfg.hidden
        ctx = self._linear(enc.states, "ptr.ctx_proj", "ptr.score_b")  # (m, h)
        dec = self._linear(states, "ptr.dec_proj")  # (t, h)
        mix = ag.tanh(ag.reshape(dec, (t, 1, h)) + ag.reshape(ctx, (1, m, h)))
        scores = ag.reshape(mix, (t * m, h)) @ ag.reshape(self._p("ptr.score_w"), (h, 1))
        alpha = ag.softmax(ag.reshape(scores, (t, m)), axis=-1)
        z = alpha @ enc.states  # (t, h)
        return alpha, z

    def copy_distribution(self, alpha: ag.Tensor, context_ext_ids, ext_size: int) -> ag.Tensor:
        """Scatter attention mass onto the extended ids present in the context."""
        ids = np.asarray(context_ext_ids, dtype=np.int64)
        if ids.size != alpha.shape[-1]:
            raise DataError("alpha length does not match context length")
        return ag.row_bincount(alpha, ids, ext_size)

    def mixture(self, pv: ag.Tensor, pc: ag.Tensor, z: ag.Tensor, states: ag.Tensor):
        """Gate in (0,1) per step; final distribution is the convex blend."""
        h = self.cfg.hidden
        gate_in = (
            z @ ag.reshape(self._p("ptr.gate_ctx"), (h, 1))
            + states @ ag.reshape(self._p("ptr.gate_dec"), (h, 1))
            + self._p("ptr.gate_b")
        )
        lam = ag.sigmoid(gate_in)  # (t, 1)
        p = lam * pv + (1.0 - lam) * pc
        return p, lam

    # -------------------------------------------------------------- losses

    def step_distributions(self, example: Seq2SeqExample, prefix_ids, use_pointer=True,
                           enc: EncoderOutput | None = None) -> StepDistribution:
        """Eval-mode distribution for the next token after `prefix_ids`."""
        with ag.no_grad():
            if enc is None:
                enc = self.encode(example.context_ids)
            state = self.decode_step(prefix_ids, enc)
            if not use_pointer:
                pv = self.vocab_distribution(state)
                return StepDistribution(p_final=pv.data[0].copy(), mix=None, alpha=None)
            pv = self.vocab_distribution(state, example.ext_size)
            alpha, z = self.copy_attention(state, enc)
            pc = self.copy_distribution(alpha, example.context_ext_ids, example.ext_size)
            p, lam = self.mixture(pv, pc, z, state)
            return StepDistribution(
                p_final=p.data[0].copy(), mix=float(lam.data[0, 0]), alpha=alpha.data[0].copy()
            )

    def generation_loss(self, example: Seq2SeqExample, use_pointer=True, rng=None,
                        enc: EncoderOutput | None = None):
        """Teacher-forced next-token negative log-likelihoods (one per gold token)."""
        if enc is None:
            enc = self.encode(example.context_ids, rng)
        states = self.decoder_states(example.decoder_input_ids, enc, rng)
        if use_pointer:
            pv = self.vocab_distribution(states, example.ext_size)
            alpha, z = self.copy_attention(states, enc)
            pc = self.copy_distribution(alpha, example.context_ext_ids, example.ext_size)
            p, _ = self.mixture(pv, pc, z, states)
            gold = example.gold_ids
        else:
            p = self.vocab_distribution(states)
            gold = np.where(example.gold_ids < self.cfg.vocab_size, example.gold_ids, UNK_ID)
        picked = ag.take_per_row(p, gold)
        clamped = int((picked.data < PROB_FLOOR).sum())
        nll = ag.neg(ag.log(ag.clamp_min(picked, PROB_FLOOR)))
        return nll, clamped

    def mlm_loss(self, input_ids, labels, rng=None, enc: EncoderOutput | None = None) -> ag.Tensor:
        """Mean cross-entropy at the selected (label != ignore) positions."""
        labels = np.asarray(labels, dtype=np.int64)
        if enc is None:
            enc = self.encode(input_ids, rng)
        positions = np.nonzero(labels != IGNORE_INDEX)[0]
        if positions.size == 0:
            return ag.Tensor(np.zeros((), dtype=self.dtype))
        logp = ag.log_softmax(ag.take_rows(enc.mlm_logits, positions), axis=-1)
        return ag.neg(ag.take_per_row(logp, labels[positions]).mean())

    def forward_loss(self, example: Seq2SeqExample, use_pointer=True, masked=None,
                     rng=None, masked_generation=False) -> LossResult:
        """Generation loss, plus the denoising loss when a corrupted context is given.

        With masked_generation the decoder conditions on the corrupted
        context; otherwise generation sees the clean one.
        """
        mlm = None
        gen_enc = None
        if masked is not None:
            masked_enc = self.encode(masked.input_ids, rng)
            mlm = self.mlm_loss(masked.input_ids, masked.mlm_labels, enc=masked_enc)
            if masked_generation:
                gen_enc = masked_enc
        nll, clamped = self.generation_loss(example, use_pointer, rng, enc=gen_enc)
        return LossResult(nll_per_token=nll, mlm_loss=mlm, clamped=clamped)


# ------------------------------------------------------------------ checkpoints

def _write_array(fh, name: str, data: np.ndarray):
    raw = name.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)
    # asarray, not ascontiguousarray: the latter promotes 0-d arrays to 1-d
    arr = np.asarray(data, dtype="<f4")
    fh.write(struct.pack("<I", arr.ndim))
    for dim in arr.shape:
        fh.write(struct.pack("<I", dim))
    fh.write(arr.tobytes())


def save_checkpoint(path, cfg: ModelConfig, params: dict[str, ag.Tensor],
                    extra: dict[str, np.ndarray] | None = None):
    """Write config and all arrays; optimizer state rides along under opt.*."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    cfg_blob = cfg.to_lines().encode("utf-8")
    buf.write(struct.pack("<I", len(cfg_blob)))
    buf.write(cfg_blob)
    for name in sorted(params):
        _write_array(buf, name, params[name].data)
    for name in sorted(extra or {}):
        _write_array(buf, name, (extra or {})[name])
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    """Read (config, parameter arrays, extra arrays); validates shapes."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack_from("<I", blob, 8)
    offset = 12
    cfg = ModelConfig.from_lines(blob[offset : offset + cfg_len].decode("utf-8"))
    offset += cfg_len
    arrays: dict[str, np.ndarray] = {}
    while offset < len(blob):
        if offset + 4 > len(blob):
            raise DataError(f"{path}: truncated array header")
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        shape = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        end = offset + 4 * count
        if end > len(blob):
            raise DataError(f"{path}: truncated array {name!r}")
        arrays[name] = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape).copy()
        offset = end
    params = {k: v for k, v in arrays.items() if not k.startswith(("opt.", "meta."))}
    extra = {k: v for k, v in arrays.items() if k.startswith(("opt.", "meta."))}
    expected = _param_shapes(cfg)
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        surplus = sorted(set(params) - set(expected))
        raise DataError(f"{path}: parameter names mismatch (missing {missing[:3]}, surplus {surplus[:3]})")
    for name, shape in expected.items():
        if tuple(params[name].shape) != tuple(shape):
            raise DataError(f"{path}: {name} has shape {params[name].shape}, expected {shape}")
    return cfg, params, extra


def model_from_checkpoint(path) -> tuple["PalmModel", dict[str, np.ndarray]]:
    cfg, arrays, extra = load_checkpoint(path)
    params = {name: ag.Tensor(arr.astype(np.float32), requires_grad=True) for name, arr in arrays.items()}
    return PalmModel(cfg, params), extra
