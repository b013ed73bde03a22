"""Word-level tokenizer with byte fallback and reserved control tokens.

Six control tokens come first (padding, sequence start/end, the cell and
row separators, and the null-row token), then one fallback token per byte
value so that encoding is total, then the most frequent whitespace-
delimited words of the training corpus.  decode(encode(s)) == s up to
single-space normalization.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .tables import NEWROW_MARKER, NULL_MARKER, SEP_MARKER

PAD, BOS, EOS, SEP, NEWROW, NULL = range(6)

SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", SEP_MARKER, NEWROW_MARKER, NULL_MARKER)
N_SPECIALS = len(SPECIAL_TOKENS)
N_BYTES = 256
MIN_VOCAB = N_SPECIALS + N_BYTES  # 262

_BYTE_TOKEN_RE = re.compile(r"^<0x[0-9A-F]{2}>$")

_MARKER_TO_ID = {SEP_MARKER: SEP, NEWROW_MARKER: NEWROW, NULL_MARKER: NULL}


def _byte_token(value: int) -> str:
    return f"<0x{value:02X}>"


@dataclass(frozen=True)
class Vocabulary:
    """Immutable token table; ids 0..5 are the specials, 6..261 the bytes."""

    id_to_token: tuple[str, ...]
    token_to_id: dict[str, int]

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id


def _word_candidates(corpus: Iterable[str]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for line in corpus:
        for piece in line.split():
            counts[piece] = counts.get(piece, 0) + 1
    # Pieces that collide with reserved vocabulary entries, or that embed a
    # serialization marker, must stay on the byte-fallback path.
    for banned in SPECIAL_TOKENS:
        counts.pop(banned, None)
    for piece in [p for p in counts if _BYTE_TOKEN_RE.match(p)]:
        del counts[piece]
    for piece in [
        p for p in counts if any(m in p for m in (SEP_MARKER, NEWROW_MARKER, NULL_MARKER))
    ]:
        del counts[piece]
    return counts


def train_vocab(corpus: Iterable[str], max_size: int) -> Vocabulary:
    """Build a vocabulary from the corpus: specials, bytes, frequent words.

    Words are admitted by descending frequency, ties broken
    lexicographically, until max_size is reached.  Deterministic.
    """
    if max_size < MIN_VOCAB:
        raise ValueError(
            f"max_size {max_size} is below the {MIN_VOCAB}-token minimum "
            f"({N_SPECIALS} specials + {N_BYTES} byte fallbacks)"
        )
    counts = _word_candidates(corpus)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    n_words = min(len(ranked), max_size - MIN_VOCAB)
    tokens = (
        list(SPECIAL_TOKENS)
        + [_byte_token(b) for b in range(N_BYTES)]
        + [word for word, _ in ranked[:n_words]]
    )
    return Vocabulary(
        id_to_token=tuple(tokens),
        token_to_id={token: i for i, token in enumerate(tokens)},
    )


def encode(v: Vocabulary, s: str) -> list[int]:
    """Whitespace pre-split, then word token or byte fallback per piece.

    The marker strings map to their control ids.  Byte-fallback pieces are
    encoded with a leading space byte so that piece boundaries survive
    decoding.  Never emits PAD/BOS/EOS.
    """
    ids: list[int] = []
    for piece in s.split():
        marker = _MARKER_TO_ID.get(piece)
        if marker is not None:
            ids.append(marker)
        elif (word_id := v.token_to_id.get(piece)) is not None and word_id >= MIN_VOCAB:
            ids.append(word_id)
        else:
            ids.extend(N_SPECIALS + b for b in (" " + piece).encode("utf-8"))
    return ids


def decode(v: Vocabulary, ids: Sequence[int]) -> str:
    """Inverse of encode up to whitespace normalization; PAD/BOS/EOS dropped."""
    parts: list[str] = []
    buffer = bytearray()

    def flush() -> None:
        if buffer:
            parts.append(bytes(buffer).decode("utf-8", errors="replace"))
            buffer.clear()

    for i in ids:
        if not 0 <= i < v.size:
            raise ValueError(f"unknown token id {i}")
        if N_SPECIALS <= i < MIN_VOCAB:
            buffer.append(i - N_SPECIALS)
            continue
        flush()
        if i in (PAD, BOS, EOS):
            continue
        parts.append(" " + v.id_to_token[i])
    flush()
    return " ".join("".join(parts).split())


def save_vocab(v: Vocabulary, path: str | Path) -> None:
    """Persist as one "token<TAB>id" line per entry, specials first."""
    lines = [f"{token}\t{i}" for i, token in enumerate(v.id_to_token)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_vocab(path: str | Path) -> Vocabulary:
    tokens: dict[int, str] = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        token, _, id_text = line.rpartition("\t")
        if not token or not id_text.isdigit():
            raise ValueError(f"{path}: line {n}: expected 'token<TAB>id', got {line!r}")
        tokens[int(id_text)] = token
    if sorted(tokens) != list(range(len(tokens))):
        raise ValueError(f"{path}: token ids are not contiguous from 0")
    id_to_token = tuple(tokens[i] for i in range(len(tokens)))
    if id_to_token[:N_SPECIALS] != SPECIAL_TOKENS:
        raise ValueError(f"{path}: special tokens missing or out of order")
    return Vocabulary(
        id_to_token=id_to_token,
        token_to_id={token: i for i, token in enumerate(id_to_token)},
    )
