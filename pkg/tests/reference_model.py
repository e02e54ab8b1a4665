"""Plain-numpy float64 re-implementation of the forward pass, used as an oracle.

Written independently of the package's tensor engine: explicit loops over
attention heads and decoding steps, no graph, no float32. Tests compare the
package against this to catch transcription slips in either direction.
"""

import numpy as np

from palm.tokenizer import BOS_ID, EOS_ID, UNK_ID


def norm(x, g, b, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def softmax(x):
    e = np.exp(x - x.max(-1, keepdims=True))
    return e / e.sum(-1, keepdims=True)


def gelu(x):
    return 0.5 * x * (1.0 + np.tanh(0.7978845608028654 * (x + 0.044715 * x**3)))


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


class RefModel:
    def __init__(self, cfg, params):
        self.cfg = cfg
        self.p = {k: np.asarray(v.data, dtype=np.float64) for k, v in params.items()}

    def attention(self, prefix, xq, xkv, causal):
        p = self.p
        heads = self.cfg.heads
        width = self.cfg.hidden // heads
        q = xq @ p[f"{prefix}.wq"] + p[f"{prefix}.bq"]
        k = xkv @ p[f"{prefix}.wk"] + p[f"{prefix}.bk"]
        v = xkv @ p[f"{prefix}.wv"] + p[f"{prefix}.bv"]
        out = np.zeros((xq.shape[0], self.cfg.hidden))
        for head in range(heads):
            sl = slice(head * width, (head + 1) * width)
            scores = q[:, sl] @ k[:, sl].T / np.sqrt(width)
            if causal:
                for i in range(scores.shape[0]):
                    scores[i, i + 1 :] = -1e9
            out[:, sl] = softmax(scores) @ v[:, sl]
        return out @ p[f"{prefix}.wo"] + p[f"{prefix}.bo"]

    def block(self, prefix, x, cross_states=None):
        p = self.p
        y = norm(x, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"])
        x = x + self.attention(f"{prefix}.attn", y, y, causal=cross_states is not None)
        if cross_states is not None:
            y = norm(x, p[f"{prefix}.lnx.g"], p[f"{prefix}.lnx.b"])
            x = x + self.attention(f"{prefix}.xattn", y, cross_states, causal=False)
        y = norm(x, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"])
        y = gelu(y @ p[f"{prefix}.ffn.w1"] + p[f"{prefix}.ffn.b1"])
        return x + y @ p[f"{prefix}.ffn.w2"] + p[f"{prefix}.ffn.b2"]

    def encode(self, ids):
        p = self.p
        x = p["tok_emb"][np.asarray(ids)] + p["pos_enc"][: len(ids)]
        for i in range(self.cfg.enc_layers):
            x = self.block(f"enc{i}", x)
        states = norm(x, p["enc_ln.g"], p["enc_ln.b"])
        head = gelu(states @ p["mlm.w"] + p["mlm.b"])
        head = norm(head, p["mlm.ln.g"], p["mlm.ln.b"])
        return states, head @ p["tok_emb"].T + p["mlm.out_b"]

    def decoder_states(self, prefix_ids, enc_states):
        p = self.p
        x = p["tok_emb"][np.asarray(prefix_ids)] + p["pos_dec"][: len(prefix_ids)]
        for i in range(self.cfg.dec_layers):
            x = self.block(f"dec{i}", x, cross_states=enc_states)
        return norm(x, p["dec_ln.g"], p["dec_ln.b"])


def step_probs(ref, enc_states, s_t, ctx_ext_ids, ext_size, use_pointer):
    """Final next-token distribution for a single decoder state s_t."""
    p = ref.p
    v = ref.cfg.vocab_size
    pv = softmax((s_t @ p["lm.w"] + p["lm.b"]) @ p["tok_emb"].T)
    if not use_pointer:
        return pv, None, None
    pv_ext = np.zeros(ext_size)
    pv_ext[:v] = pv
    scores = np.empty(len(ctx_ext_ids))
    for l, h_l in enumerate(enc_states):
        feat = np.tanh(p["ptr.ctx_proj"].T @ h_l + p["ptr.dec_proj"].T @ s_t + p["ptr.score_b"])
        scores[l] = p["ptr.score_w"] @ feat
    alpha = softmax(scores)
    z = alpha @ enc_states
    pc = np.zeros(ext_size)
    for l, idx in enumerate(ctx_ext_ids):
        pc[int(idx)] += alpha[l]
    lam = sigmoid(p["ptr.gate_ctx"] @ z + p["ptr.gate_dec"] @ s_t + float(p["ptr.gate_b"]))
    return lam * pv_ext + (1.0 - lam) * pc, lam, alpha


def generation_nll(cfg, params, example, use_pointer=True):
    """Step-by-step evaluation of the sequence log-likelihood chain."""
    ref = RefModel(cfg, params)
    enc_states, _ = ref.encode(example.context_ids)
    prefix = list(example.decoder_input_ids)
    nll = []
    for t in range(len(prefix)):
        states = ref.decoder_states(prefix[: t + 1], enc_states)
        s_t = states[-1]
        p, _, _ = step_probs(ref, enc_states, s_t, example.context_ext_ids, example.ext_size, use_pointer)
        gold = int(example.gold_ids[t])
        if not use_pointer and gold >= cfg.vocab_size:
            gold = UNK_ID
        nll.append(-np.log(max(p[gold], 1e-9)))
    return np.array(nll)
