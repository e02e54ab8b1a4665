"""Desk-scale context-conditioned text generation.

A library plus `palm` CLI covering the whole loop: corpus fragmentation,
subword vocabulary, two-stage pre-training of a transformer encoder-decoder
with a pointer-generator copy head, fine-tuning on pairs, beam-search
generation, and perplexity / ROUGE evaluation.
"""

__version__ = "0.1.0"
