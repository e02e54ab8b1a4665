"""Raw documents to pre-training pairs.

The chain is: load documents (blank-line separated), split each into
sentences, tokenize, then slide a one-sentence-stride window packing whole
sentences up to 500 tokens. Each window becomes a (context, continuation)
pair split 80/20 by token count, with the context capped at 400 tokens and
the continuation at 100. Context corruption for the denoising stage masks
15% of positions, 80/10/10 mask/random/keep.

Pairs serialize to a flat binary file (magic "PLMF") so a fragmented corpus
can be reused across runs without re-tokenizing.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import rng as _rng
from . import tokenizer as tk
from .errors import DataError

MAX_FRAGMENT_LEN = 500
MAX_CONTEXT_LEN = 400
MAX_TARGET_LEN = 100

IGNORE_INDEX = -1  # label value at positions the denoising loss skips

PAIR_MAGIC = b"PLMF"
PAIR_FILE_VERSION = 1

# Words that end with '.' without ending a sentence. Deliberately short;
# anything absent here simply yields an extra (harmless) sentence boundary.
ABBREVIATIONS = frozenset(
    [
        "Mr.", "Mrs.", "Ms.", "Dr.", "Prof.", "Sen.", "Gov.", "St.", "Mt.",
        "Jr.", "Sr.", "Co.", "Inc.", "Ltd.", "No.", "Fig.", "Vol.",
        "etc.", "e.g.", "i.e.", "vs.", "cf.", "al.",
    ]
)

_BOUNDARY = re.compile(r"[.!?]+(?=\s)")


@dataclass(frozen=True)
class Fragment:
    """One sliding-window training pair cut from a document."""

    context_ids: tuple
    target_ids: tuple
    doc_id: int
    start_sentence: int

    def __post_init__(self):
        m, n = len(self.context_ids), len(self.target_ids)
        if m < 1 or n < 1:
            raise DataError("fragment with empty context or target")


@dataclass
class MaskedBatch:
    """A corrupted context plus the labels needed to score the corruption."""

    input_ids: np.ndarray
    mlm_labels: np.ndarray
    mask_positions: np.ndarray
    seed: int


def split_sentences(document: str) -> list[str]:
    """Cut at '.', '!' or '?' followed by whitespace, guarding abbreviations.

    Returned sentences are stripped; joining them with single spaces
    reproduces any document whose separators were single spaces.
    """
    pieces = []
    start = 0
    for match in _BOUNDARY.finditer(document):
        end = match.end()
        head = document.rfind(" ", start, end)
        nl = document.rfind("\n", start, end)
        word = document[max(head, nl) + 1 : end]
        if word in ABBREVIATIONS:
            continue
        pieces.append(document[start:end])
        start = end
    pieces.append(document[start:])
    return [p.strip() for p in pieces if p.strip()]


def context_split(length: int, max_context: int = MAX_CONTEXT_LEN) -> int:
    """Tokens assigned to the context for a window of `length` tokens.

    80% of the window, rounded to nearest, capped. Integer arithmetic:
    (4L + 2) // 5 equals round(0.8 * L) for every L (4L/5 never lands on
    an exact half) and dodges binary-float noise.
    """
    return min(max_context, (4 * length + 2) // 5)


def make_fragments(
    sentences: Sequence[Sequence[int]],
    doc_id: int = 0,
    max_len: int = MAX_FRAGMENT_LEN,
    max_context: int = MAX_CONTEXT_LEN,
    max_target: int = MAX_TARGET_LEN,
) -> list[Fragment]:
    """Slide a one-sentence-stride window over tokenized sentences.

    Each window packs the longest run of whole sentences fitting max_len,
    then splits it into context and continuation. Windows whose context or
    continuation would come out empty are skipped.
    """
    fragments = []
    lengths = [len(s) for s in sentences]
    for start in range(len(sentences)):
        total = 0
        end = start
        while end < len(sentences) and total + lengths[end] <= max_len:
            total += lengths[end]
            end += 1
        if total < 2:
            continue
        split = context_split(total, max_context)
        if split < 1 or split >= total:
            continue
        flat = [t for s in sentences[start:end] for t in s]
        context = tuple(flat[:split])
        target = tuple(flat[split : split + min(max_target, total - split)])
        fragments.append(
            Fragment(context_ids=context, target_ids=target, doc_id=doc_id, start_sentence=start)
        )
    return fragments


def mask_context(
    context_ids: Sequence[int],
    vocab_size: int,
    mask_rate: float = 0.15,
    seed: int = 0,
    mask_frac: float = 0.8,
    random_frac: float = 0.1,
) -> MaskedBatch:
    """Corrupt ⌈mask_rate·m⌉ positions: mask_frac of them become [MASK],
    random_frac a random non-special id, the rest stay unchanged but are
    still scored. Deterministic given seed."""
    ids = np.asarray(context_ids, dtype=np.int64)
    m = ids.size
    if m == 0:
        raise DataError("cannot mask an empty context")
    if not 0.0 <= mask_rate <= 1.0:
        raise DataError(f"mask_rate must be in [0, 1], got {mask_rate}")
    # tiny epsilon so float noise in rate*m never rounds an exact product up
    count = int(np.ceil(mask_rate * m - 1e-9))
    count = min(count, m)

    input_ids = ids.copy()
    labels = np.full(m, IGNORE_INDEX, dtype=np.int64)
    if count == 0:
        return MaskedBatch(input_ids, labels, np.empty(0, dtype=np.int64), seed)

    gen = _rng.generator("mask", seed)
    positions = np.sort(gen.choice(m, size=count, replace=False))
    labels[positions] = ids[positions]
    roll = gen.random(count)
    n_real = vocab_size - tk.NUM_SPECIALS
    for pos, r in zip(positions, roll):
        if r < mask_frac or n_real <= 0:
            input_ids[pos] = tk.MASK_ID
        elif r < mask_frac + random_frac:
            input_ids[pos] = tk.NUM_SPECIALS + int(gen.integers(n_real))
    return MaskedBatch(input_ids, labels, positions, seed)


def fragment_documents(
    documents: Iterable[str],
    vocab: tk.Vocab,
    max_len: int = MAX_FRAGMENT_LEN,
    max_context: int = MAX_CONTEXT_LEN,
    max_target: int = MAX_TARGET_LEN,
) -> list[Fragment]:
    """Run the full pipeline over in-memory documents."""
    out = []
    for doc_id, text in enumerate(documents):
        sentence_ids = [
            tk.encode_tokens(tk.tokenize(s, vocab), vocab) for s in split_sentences(text)
        ]
        sentence_ids = [s for s in sentence_ids if s]
        out.extend(make_fragments(sentence_ids, doc_id, max_len, max_context, max_target))
    return out


def load_documents(path) -> list[str]:
    """Read blank-line-separated documents from a text file or directory.

    A directory is walked recursively; files contribute in sorted relative
    path order so the corpus is a pure function of its bytes.
    """
    path = Path(path)
    if path.is_dir():
        files = sorted(
            (p for p in path.rglob("*") if p.is_file()),
            key=lambda p: p.relative_to(path).as_posix(),
        )
    elif path.is_file():
        files = [path]
    else:
        raise DataError(f"corpus path does not exist: {path}")
    documents = []
    for fp in files:
        try:
            text = fp.read_text(encoding="utf-8")
        except UnicodeDecodeError as exc:
            raise DataError(f"corpus file {fp} is not UTF-8: {exc}") from None
        for block in re.split(r"\n\s*\n", text):
            if block.strip():
                documents.append(block.strip())
    if not documents:
        raise DataError(f"no documents found under {path}")
    return documents


def write_pair_file(path, pairs) -> int:
    """Serialize (context, target) id pairs. Returns the pair count."""
    records = []
    for pair in pairs:
        if isinstance(pair, Fragment):
            ctx, tgt = pair.context_ids, pair.target_ids
        else:
            ctx, tgt = pair
        records.append((np.asarray(ctx, dtype="<u4"), np.asarray(tgt, dtype="<u4")))
    with open(path, "wb") as fh:
        fh.write(PAIR_MAGIC)
        fh.write(struct.pack("<IQ", PAIR_FILE_VERSION, len(records)))
        for ctx, tgt in records:
            fh.write(struct.pack("<II", ctx.size, tgt.size))
            fh.write(ctx.tobytes())
            fh.write(tgt.tobytes())
    return len(records)


def read_pair_file(path) -> list[tuple[np.ndarray, np.ndarray]]:
    """Load pairs written by write_pair_file. Validates magic, version, length."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != PAIR_MAGIC:
        raise DataError(f"{path}: not a pair file (bad magic)")
    if len(blob) < 16:
        raise DataError(f"{path}: truncated header")
    version, count = struct.unpack_from("<IQ", blob, 4)
    if version != PAIR_FILE_VERSION:
        raise DataError(f"{path}: unsupported pair file version {version}")
    pairs = []
    offset = 16
    for index in range(count):
        if offset + 8 > len(blob):
            raise DataError(f"{path}: truncated header of record {index}")
        m, n = struct.unpack_from("<II", blob, offset)
        offset += 8
        need = 4 * (m + n)
        if offset + need > len(blob):
            raise DataError(f"{path}: truncated body of record {index}")
        ctx = np.frombuffer(blob, dtype="<u4", count=m, offset=offset).astype(np.int64)
        offset += 4 * m
        tgt = np.frombuffer(blob, dtype="<u4", count=n, offset=offset).astype(np.int64)
        offset += 4 * n
        pairs.append((ctx, tgt))
    if offset != len(blob):
        raise DataError(f"{path}: {len(blob) - offset} trailing bytes")
    return pairs


def pair_stats(pairs) -> dict:
    """Pair count and length distributions for the stats report."""
    ctx_lens = []
    tgt_lens = []
    for pair in pairs:
        if isinstance(pair, Fragment):
            ctx, tgt = pair.context_ids, pair.target_ids
        else:
            ctx, tgt = pair
        ctx_lens.append(len(ctx))
        tgt_lens.append(len(tgt))

    def describe(lens, bucket):
        if not lens:
            return {"min": 0, "mean": 0.0, "max": 0, "histogram": {}}
        arr = np.asarray(lens)
        hist: dict[str, int] = {}
        for v in arr:
            lo = (int(v) // bucket) * bucket
            key = f"{lo}-{lo + bucket - 1}"
            hist[key] = hist.get(key, 0) + 1
        return {
            "min": int(arr.min()),
            "mean": float(arr.mean()),
            "max": int(arr.max()),
            "histogram": dict(sorted(hist.items(), key=lambda kv: int(kv[0].split("-")[0]))),
        }

    return {
        "pairs": len(ctx_lens),
        "context": describe(ctx_lens, 50),
        "target": describe(tgt_lens, 10),
    }
