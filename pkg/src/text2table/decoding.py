"""Greedy inference: header as a sequence, body rows in parallel.

The body decode is constrained so every result parses: a row may only end
(EOS) after emitting exactly one separator fewer than the header has
cells, may not exceed that separator quota, and may only be null on its
first token.  Rows that hit the length cap are padded with empty cells.
The constraints make the zero-format-error guarantee unconditional, so
mid-row null tokens are simply never emitted rather than left in text.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .autodiff import no_grad
from .model import (
    CrossContext,
    ModelConfig,
    ModelParams,
    cross_context,
    decoder_step,
    encode,
    make_body_state,
    make_header_state,
    run_header_teacher_forced,
)
from .tables import RESERVED_MARKERS, EMPTY_CELL_MARKER, Table, serialize_table
from .tokenizer import (
    BOS,
    EOS,
    NEWROW,
    NULL,
    PAD,
    SEP,
    Vocabulary,
    decode as decode_text,
    encode as encode_text,
)


@dataclass(frozen=True)
class DecodeResult:
    table: Table
    sequential_steps: int       # header tokens + longest surviving row's tokens
    emitted_rows: int
    dropped_null_rows: int
    header_truncated: bool = False
    truncated_rows: int = 0


def _source_ids(vocab: Vocabulary, source: str) -> list[int]:
    return encode_text(vocab, source) + [EOS]


def _decode_header(
    params: ModelParams, config: ModelConfig, ctx: CrossContext, max_len: int
) -> tuple[list[int], int, bool]:
    """Greedy header tokens (terminal excluded), step count, truncation flag."""
    max_len = min(max_len, config.max_pos - 1)  # BOS occupies one position
    state = make_header_state(config)
    forbidden = [PAD, BOS, EOS, NULL]
    tokens: list[int] = []
    prev = BOS
    steps = 0
    for i in range(max_len + 1):
        scores = decoder_step(params, config, ctx, state, np.array([prev])).data[0, 0].copy()
        scores[forbidden] = -np.inf
        nxt = int(scores.argmax())
        steps += 1
        if nxt == NEWROW:
            return tokens, steps, False
        if i == max_len:
            # out of room and still no terminal: truncate, discard the pick
            return tokens, steps, True
        tokens.append(nxt)
        prev = nxt
    raise AssertionError("unreachable")


@dataclass(frozen=True)
class _RowDecode:
    tokens: tuple[int, ...]
    finished: bool      # reached EOS (truncated rows did not)

    @property
    def steps(self) -> int:
        return len(self.tokens) + (1 if self.finished else 0)


def _decode_body(
    params: ModelParams,
    config: ModelConfig,
    ctx: CrossContext,
    header_state,
    n_cells: int,
    max_row_len: int,
) -> list[Optional[_RowDecode]]:
    """Lockstep-decode all M rows; None marks a dropped null row."""
    m_rows = config.max_rows
    max_row_len = min(max_row_len, config.max_pos - 1)
    state = make_body_state(config, header_state)
    sep_quota = n_cells - 1

    emitted: list[list[int]] = [[] for _ in range(m_rows)]
    done = np.zeros(m_rows, dtype=bool)
    dropped = np.zeros(m_rows, dtype=bool)
    finished = np.zeros(m_rows, dtype=bool)  # ended with EOS
    seps = np.zeros(m_rows, dtype=np.int64)
    feed = np.full(m_rows, BOS, dtype=np.int64)

    for t in range(max_row_len):
        scores = decoder_step(params, config, ctx, state, feed).data[:, 0, :].copy()
        scores[:, [PAD, BOS, NEWROW]] = -np.inf
        if t > 0:
            scores[:, NULL] = -np.inf
        under_quota = seps < sep_quota
        scores[under_quota, EOS] = -np.inf
        scores[~under_quota, SEP] = -np.inf
        picks = scores.argmax(axis=1)

        feed = np.full(m_rows, PAD, dtype=np.int64)
        for m in range(m_rows):
            if done[m]:
                continue
            tok = int(picks[m])
            if t == 0 and tok == NULL:
                done[m] = dropped[m] = True
                continue
            if tok == EOS:
                done[m] = finished[m] = True
                continue
            emitted[m].append(tok)
            if tok == SEP:
                seps[m] += 1
            feed[m] = tok
        if done.all():
            break

    return [
        None
        if dropped[m]
        else _RowDecode(tokens=tuple(emitted[m]), finished=bool(finished[m]))
        for m in range(m_rows)
    ]


def _clean_cell(text: str) -> str:
    for marker in RESERVED_MARKERS + (EMPTY_CELL_MARKER,):
        if marker in text:
            text = text.replace(marker, "")
    return " ".join(text.split())


def _tokens_to_cells(vocab: Vocabulary, tokens: Sequence[int], n_cells: int) -> tuple[str, ...]:
    groups: list[list[int]] = [[]]
    for tok in tokens:
        if tok == SEP:
            groups.append([])
        else:
            groups[-1].append(tok)
    cells = [_clean_cell(decode_text(vocab, group)) for group in groups]
    while len(cells) < n_cells:
        cells.append("")
    return tuple(cells)


def generate_header(
    params: ModelParams,
    vocab: Vocabulary,
    source: str,
    max_len: Optional[int] = None,
) -> list[int]:
    """Greedy header token sequence for a source text, terminal excluded."""
    config = params.config
    if max_len is None:
        max_len = config.max_header_len
    with no_grad():
        ctx = cross_context(params, config, [encode(params, config, _source_ids(vocab, source))])
        tokens, _, _ = _decode_header(params, config, ctx, max_len)
    return tokens


def _header_state_for(params, config, ctx, header_tokens):
    inputs = np.array([[BOS] + list(header_tokens)])
    _, state = run_header_teacher_forced(params, config, ctx, inputs)
    return state


def generate_body(
    params: ModelParams,
    vocab: Vocabulary,
    source: str,
    header_tokens: Sequence[int],
    max_row_len: Optional[int] = None,
) -> list[tuple[str, ...]]:
    """Surviving body rows as cell tuples, each exactly header-width."""
    config = params.config
    if max_row_len is None:
        max_row_len = config.max_row_len
    n_cells = sum(1 for t in header_tokens if t == SEP) + 1
    with no_grad():
        ctx = cross_context(params, config, [encode(params, config, _source_ids(vocab, source))])
        hstate = _header_state_for(params, config, ctx, header_tokens)
        rows = _decode_body(params, config, ctx, hstate, n_cells, max_row_len)
    return [_tokens_to_cells(vocab, r.tokens, n_cells) for r in rows if r is not None]


def generate_table(
    params: ModelParams,
    vocab: Vocabulary,
    source: str,
    max_header_len: Optional[int] = None,
    max_row_len: Optional[int] = None,
) -> DecodeResult:
    """Full greedy decode of one source text into a validated table."""
    config = params.config
    if max_header_len is None:
        max_header_len = config.max_header_len
    if max_row_len is None:
        max_row_len = config.max_row_len

    with no_grad():
        ctx = cross_context(params, config, [encode(params, config, _source_ids(vocab, source))])
        header_tokens, header_steps, header_truncated = _decode_header(
            params, config, ctx, max_header_len
        )
        n_cells = sum(1 for t in header_tokens if t == SEP) + 1
        hstate = _header_state_for(params, config, ctx, header_tokens)
        rows = _decode_body(params, config, ctx, hstate, n_cells, max_row_len)

    header_cells = _tokens_to_cells(vocab, header_tokens, n_cells)
    body = [_tokens_to_cells(vocab, r.tokens, n_cells) for r in rows if r is not None]
    dropped = sum(1 for r in rows if r is None)
    truncated_rows = sum(1 for r in rows if r is not None and not r.finished)
    body_steps = max((r.steps for r in rows if r is not None), default=0)
    return DecodeResult(
        table=Table(header=header_cells, body=tuple(body)),
        sequential_steps=header_steps + body_steps,
        emitted_rows=len(body),
        dropped_null_rows=dropped,
        header_truncated=header_truncated,
        truncated_rows=truncated_rows,
    )


def seq2seq_baseline_steps(vocab: Vocabulary, table: Table) -> int:
    """Steps a fully sequential generator would take on the same table:
    one per token of the linearized form plus its terminal."""
    return len(encode_text(vocab, serialize_table(table))) + 1


def parallel_decode_steps(vocab: Vocabulary, table: Table) -> int:
    """Steps a parallel-row decode of exactly this table takes: the header

    with its terminal, then all rows in lockstep so only the longest row
    counts.  This is what DecodeResult.sequential_steps reports when the
    model emits the table verbatim.
    """
    from .tables import render_row

    header = len(encode_text(vocab, render_row(table.header))) + 1
    rows = (len(encode_text(vocab, render_row(row))) + 1 for row in table.body)
    return header + max(rows, default=0)
