"""Show the copy mechanism reproducing words the vocabulary cannot spell.

Fine-tunes two tiny models on pairs whose targets quote rare marker words
from the source, then generates from a sentence containing a marker never
seen in training. The model with the pointer copies the marker verbatim;
the model without it saw the marker only as [UNK] and answers accordingly.
"""

import tempfile
from pathlib import Path

import numpy as np

from palm import decoding as dc
from palm import tokenizer as tk
from palm import training as tr
from palm.model import ModelConfig, PalmModel, init_params
from palm.training import Adam, stage2_step

FILLER = ["river", "stone", "tower", "gate", "wall", "keep", "road", "bridge",
          "field", "meadow", "forest", "hill"]
# markers use letters the corpus lacks, so the tokenizer keeps them whole
MARKERS = ["qozix", "wuxaj", "jyqil", "hyxat", "xiqul", "yawqo"]


def make_pairs(n: int, seed: int):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        words = list(rng.choice(FILLER, size=6, replace=False))
        marker = MARKERS[int(rng.integers(len(MARKERS)))]
        words.insert(int(rng.integers(1, 6)), marker)
        # keep the period a separate word; gluing it onto the marker would
        # make the target a different surface token than the source's
        out.append((" ".join(words) + " .", marker + " ."))
    return out


def main():
    corpus = " ".join(FILLER) + " . "
    vocab = tk.build_vocab(corpus * 3, 48)
    print(f"vocabulary: {vocab.size} entries; markers are out-of-vocabulary")

    pairs = make_pairs(24, seed=1)
    mcfg = ModelConfig(enc_layers=1, dec_layers=1, hidden=32, ffn=128, heads=2,
                       max_context=16, max_target=4, vocab_size=vocab.size)
    cfg = tr.TrainConfig.desk(total_steps=250, stage1_steps=0, warmup_steps=25, seed=0)

    examples = [tr.prepare_example(src, tgt, vocab, mcfg) for src, tgt in pairs]

    def finetune(cfg):
        model = PalmModel(mcfg, init_params(mcfg, seed=0))
        opt = Adam(model.params)
        gen = np.random.default_rng(7)
        for step in range(1, cfg.total_steps + 1):
            lr = tr.lr_schedule(step, cfg)
            picks = gen.integers(len(examples), size=cfg.batch_size)
            items = [(examples[int(i)], None) for i in picks]
            stage2_step(model, opt, items, lr, cfg)
        return model

    print(f"fine-tuning two models on {len(pairs)} quoting pairs ...")
    copier = finetune(cfg)
    plain = finetune(tr.TrainConfig.desk(total_steps=250, stage1_steps=0,
                                         warmup_steps=25, seed=0, no_pointer=True))

    probe = "field meadow xuqiw forest hill ."  # marker unseen in training
    print(f"probe source:  {probe}")
    with_ptr = dc.generate_text(copier, vocab, probe, beam=3, max_len=3)
    without = dc.generate_text(plain, vocab, probe, beam=3, max_len=3,
                               use_pointer=False)
    print(f"pointer on:   {with_ptr}")
    print(f"pointer off:  {without}")


if __name__ == "__main__":
    main()
