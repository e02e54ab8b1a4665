"""Subword vocabulary, text encoding, and the extended id space for copying.

The scheme is deliberately simpler than trained WordPiece: the inventory is
built from whole-word counts, "##"-marked word suffixes, and a character
fallback, then applied by greedy longest-match. Any reversible subword
segmentation serves the model identically.

A word that cannot be segmented at all (it contains characters the
vocabulary never saw) is kept as a single surface token. Such a token
encodes to [UNK] in the base id space, but its surface form survives into
the extended vocabulary so the copy mechanism can reproduce it verbatim.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import DataError

PAD_ID = 0
MASK_ID = 1
BOS_ID = 2
EOS_ID = 3
UNK_ID = 4

SPECIAL_TOKENS = ("[PAD]", "[MASK]", "[BOS]", "[EOS]", "[UNK]")
NUM_SPECIALS = len(SPECIAL_TOKENS)

# dropped entirely when rendering ids back to text
_SILENT_IDS = frozenset((PAD_ID, BOS_ID, EOS_ID))


class Vocab:
    """Immutable token<->id bijection with the five specials pinned first."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:NUM_SPECIALS]) != SPECIAL_TOKENS:
            raise DataError(f"vocabulary must start with {SPECIAL_TOKENS}")
        self.id_to_token = tokens
        self.token_to_id = {}
        self._max_piece_len = 1
        for i, tok in enumerate(tokens):
            if not tok or any(c.isspace() for c in tok):
                raise DataError(f"invalid vocabulary entry at id {i}: {tok!r}")
            if tok in self.token_to_id:
                raise DataError(f"duplicate vocabulary entry: {tok!r}")
            self.token_to_id[tok] = i
            if i >= NUM_SPECIALS:
                body = tok[2:] if tok.startswith("##") else tok
                self._max_piece_len = max(self._max_piece_len, len(body))

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id_of(self, token: str) -> int:
        """Base id for a surface token; [UNK] when absent."""
        return self.token_to_id.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        if not 0 <= idx < len(self.id_to_token):
            raise DataError(f"id {idx} outside vocabulary of size {len(self.id_to_token)}")
        return self.id_to_token[idx]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.id_to_token:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, "r", encoding="utf-8") as fh:
            tokens = fh.read().splitlines()
        if len(tokens) < NUM_SPECIALS:
            raise DataError(f"vocabulary file {path} is truncated")
        return cls(tokens)


@dataclass
class ExtendedVocab:
    """Base vocabulary plus this example's out-of-vocabulary context tokens.

    Extra tokens get ids base.size, base.size+1, ... in order of first
    appearance in the context; repeats share one id. context_positions[l]
    is the extended id of context position l, so the copy distribution can
    scatter attention weights into the extended space directly.
    """

    base: Vocab
    extra: list[str] = field(default_factory=list)
    context_positions: list[int] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.base.size + len(self.extra)

    def token_of(self, idx: int) -> str:
        if idx >= self.base.size:
            if idx >= self.size:
                raise DataError(f"id {idx} outside extended vocabulary of size {self.size}")
            return self.extra[idx - self.base.size]
        return self.base.token_of(idx)

    def id_of(self, token: str) -> int:
        """Extended id for a surface token; [UNK] when absent everywhere."""
        idx = self.base.token_to_id.get(token)
        if idx is not None:
            return idx
        for k, tok in enumerate(self.extra):
            if tok == token:
                return self.base.size + k
        return UNK_ID


def _base_id(vocab: Vocab, token: str) -> int | None:
    """Base id for a surface token; specials are unreachable from text."""
    idx = vocab.token_to_id.get(token)
    if idx is None or idx < NUM_SPECIALS:
        return None
    return idx


def extend(vocab: Vocab, context_tokens: Sequence[str]) -> ExtendedVocab:
    """Build the per-example extended vocabulary from context surface tokens."""
    extra: list[str] = []
    extra_ids: dict[str, int] = {}
    positions: list[int] = []
    for tok in context_tokens:
        idx = _base_id(vocab, tok)
        if idx is None:
            if tok not in extra_ids:
                extra_ids[tok] = vocab.size + len(extra)
                extra.append(tok)
            idx = extra_ids[tok]
        positions.append(idx)
    return ExtendedVocab(base=vocab, extra=extra, context_positions=positions)


def _segment_word(word: str, vocab: Vocab) -> list[str] | None:
    """Greedy longest-match pieces for one word, or None if it cannot be split.

    The first piece is a plain entry; every later position must match a
    "##"-marked continuation. Plain entries never match mid-word: that would
    erase the word boundary and break the decode round trip.
    """
    pieces = []
    i = 0
    n = len(word)
    table = vocab.token_to_id
    cap = vocab._max_piece_len
    while i < n:
        match = None
        for j in range(min(n, i + cap), i, -1):
            sub = word[i:j]
            if i > 0:
                if ("##" + sub) in table:
                    match = "##" + sub
                    break
            elif sub in table and not sub.startswith("##") and table[sub] >= NUM_SPECIALS:
                match = sub
                break
        if match is None:
            return None
        pieces.append(match)
        i += len(match) - 2 if match.startswith("##") else len(match)
    return pieces


def tokenize(text: str, vocab: Vocab) -> list[str]:
    """Split text into surface tokens: subword pieces plus verbatim OOV words."""
    out: list[str] = []
    for word in text.split():
        pieces = _segment_word(word, vocab)
        if pieces is None:
            out.append(word)
        else:
            out.extend(pieces)
    return out


def encode_tokens(tokens: Sequence[str], vocab: Vocab) -> list[int]:
    out = []
    for tok in tokens:
        idx = _base_id(vocab, tok)
        out.append(UNK_ID if idx is None else idx)
    return out


def encode(text: str, vocab: Vocab) -> list[int]:
    """Text to base ids. Unsegmentable words become [UNK]; no other specials appear."""
    return encode_tokens(tokenize(text, vocab), vocab)


def decode(ids: Sequence[int], vocab: Vocab | ExtendedVocab) -> str:
    """Ids back to text: "##" pieces merge leftward, everything else space-joins.

    [PAD]/[BOS]/[EOS] are dropped; [UNK] and [MASK] render literally.
    Out-of-range ids raise DataError.
    """
    base_size = vocab.base.size if isinstance(vocab, ExtendedVocab) else vocab.size
    words: list[str] = []
    for idx in ids:
        idx = int(idx)
        if idx in _SILENT_IDS:
            continue
        tok = vocab.token_of(idx)
        # extras are whole copied words, never continuation pieces
        if idx < base_size and tok.startswith("##"):
            if words:
                words[-1] += tok[2:]
            else:
                words.append(tok[2:])
        else:
            words.append(tok)
    return " ".join(words)


def _iter_lines(corpus) -> Iterable[str]:
    if isinstance(corpus, str):
        return corpus.splitlines()
    return corpus


def build_vocab(corpus, target_size: int) -> Vocab:
    """Count words, suffix pieces, and characters; keep the most frequent.

    Characters are admitted first, each in both plain and "##" form, so
    every corpus word stays segmentable char by char; then words and
    "##"-suffixes compete by frequency for the remaining budget. Ties go to
    plain words before "##" pieces, then lexicographic, for determinism.
    """
    if target_size < NUM_SPECIALS + 1:
        raise DataError(f"target_size must be at least {NUM_SPECIALS + 1}")
    word_counts: dict[str, int] = {}
    for line in _iter_lines(corpus):
        for word in line.split():
            word_counts[word] = word_counts.get(word, 0) + 1
    if not word_counts:
        raise DataError("empty corpus: no tokens to build a vocabulary from")

    char_counts: dict[str, int] = {}
    piece_counts: dict[str, int] = {}
    for word, count in word_counts.items():
        for ch in word:
            char_counts[ch] = char_counts.get(ch, 0) + count
        for split in range(1, len(word)):
            piece = "##" + word[split:]
            piece_counts[piece] = piece_counts.get(piece, 0) + count

    chosen = list(SPECIAL_TOKENS)
    seen = set(chosen)

    def admit(token):
        if token not in seen and len(chosen) < target_size:
            chosen.append(token)
            seen.add(token)

    for ch, _ in sorted(char_counts.items(), key=lambda kv: (-kv[1], kv[0])):
        admit(ch)
        admit("##" + ch)

    candidates = {w: c for w, c in word_counts.items() if not w.startswith("##")}
    for piece, count in piece_counts.items():
        candidates[piece] = candidates.get(piece, 0) + count
    ranked = sorted(candidates.items(),
                    key=lambda kv: (-kv[1], kv[0].startswith("##"), kv[0]))
    for token, _ in ranked:
        admit(token)

    return Vocab(chosen)
