"""The three-part architecture: text encoder, header generator, body generator.

One decoder parameter stack serves both generators.  The header is decoded
position by position; body rows are decoded in lockstep as a stack, each
row's self-attention seeing the concatenation [header cache ; own cache]
and never another row.  All decoder arithmetic is per-position with fixed
call shapes, so a teacher-forced pass, an incremental pass, and any
stacking of rows or instances produce bit-identical numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .autodiff import AttentionParams, Tensor, no_grad, ops, parameter
from .autodiff.layers import (
    FeedForwardParams,
    LayerNormParams,
    attend_cached,
    multi_head_attention,
    project_stepwise,
)
from .tokenizer import BOS, SEP


class CheckpointMismatch(ValueError):
    """Checkpoint tensors do not fit the model configuration."""


@dataclass(frozen=True)
class ModelConfig:
    encoder_layers: int = 2
    decoder_layers: int = 2
    model_dim: int = 64
    heads: int = 4
    ffn_dim: int = 256
    max_rows: int = 10          # M: body row slots decoded in parallel
    max_pos: int = 160
    max_cols: int = 8
    vocab_size: int = 512
    max_header_len: int = 32
    max_row_len: int = 64

    def __post_init__(self) -> None:
        if self.max_rows < 1:
            raise ValueError(f"max_rows must be >= 1, got {self.max_rows}")
        if self.heads < 1 or self.model_dim % self.heads != 0:
            raise ValueError(
                f"model_dim {self.model_dim} is not divisible by heads {self.heads}"
            )
        for name in ("encoder_layers", "decoder_layers", "ffn_dim", "max_pos",
                     "max_cols", "vocab_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass
class EncoderLayer:
    attn: AttentionParams
    ln1: LayerNormParams
    ffn: FeedForwardParams
    ln2: LayerNormParams

    @classmethod
    def create(cls, rng: np.random.Generator, cfg: ModelConfig) -> "EncoderLayer":
        return cls(
            attn=AttentionParams.create(rng, cfg.model_dim),
            ln1=LayerNormParams.create(cfg.model_dim),
            ffn=FeedForwardParams.create(rng, cfg.model_dim, cfg.ffn_dim),
            ln2=LayerNormParams.create(cfg.model_dim),
        )

    def named(self, prefix: str):
        yield from self.attn.named(f"{prefix}.attn")
        yield from self.ln1.named(f"{prefix}.ln1")
        yield from self.ffn.named(f"{prefix}.ffn")
        yield from self.ln2.named(f"{prefix}.ln2")


@dataclass
class DecoderLayer:
    self_attn: AttentionParams
    ln1: LayerNormParams
    cross_attn: AttentionParams
    ln2: LayerNormParams
    ffn: FeedForwardParams
    ln3: LayerNormParams

    @classmethod
    def create(cls, rng: np.random.Generator, cfg: ModelConfig) -> "DecoderLayer":
        return cls(
            self_attn=AttentionParams.create(rng, cfg.model_dim),
            ln1=LayerNormParams.create(cfg.model_dim),
            cross_attn=AttentionParams.create(rng, cfg.model_dim),
            ln2=LayerNormParams.create(cfg.model_dim),
            ffn=FeedForwardParams.create(rng, cfg.model_dim, cfg.ffn_dim),
            ln3=LayerNormParams.create(cfg.model_dim),
        )

    def named(self, prefix: str):
        yield from self.self_attn.named(f"{prefix}.self_attn")
        yield from self.ln1.named(f"{prefix}.ln1")
        yield from self.cross_attn.named(f"{prefix}.cross_attn")
        yield from self.ln2.named(f"{prefix}.ln2")
        yield from self.ffn.named(f"{prefix}.ffn")
        yield from self.ln3.named(f"{prefix}.ln3")


@dataclass
class ModelParams:
    config: ModelConfig
    word_emb: Tensor            # (vocab, d); doubles as the output projection
    pos_emb: Tensor             # (max_pos, d)
    row_emb: Tensor             # (M + 1, d); index 0 is the header's slot
    col_emb: Tensor             # (max_cols, d)
    encoder: list[EncoderLayer]
    decoder: list[DecoderLayer]
    enc_ln: LayerNormParams     # output norms: sublayers normalize their
    dec_ln: LayerNormParams     # inputs, so the stack tops need one more

    @classmethod
    def create(cls, config: ModelConfig, seed: int) -> "ModelParams":
        rng = np.random.default_rng(seed)
        d = config.model_dim

        def emb(n: int) -> Tensor:
            return parameter(rng.normal(0.0, 0.02, size=(n, d)))

        return cls(
            config=config,
            word_emb=emb(config.vocab_size),
            pos_emb=emb(config.max_pos),
            row_emb=emb(config.max_rows + 1),
            col_emb=emb(config.max_cols),
            encoder=[EncoderLayer.create(rng, config) for _ in range(config.encoder_layers)],
            decoder=[DecoderLayer.create(rng, config) for _ in range(config.decoder_layers)],
            enc_ln=LayerNormParams.create(d),
            dec_ln=LayerNormParams.create(d),
        )

    def registry(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {
            "emb.word": self.word_emb,
            "emb.pos": self.pos_emb,
            "emb.row": self.row_emb,
            "emb.col": self.col_emb,
        }
        for i, layer in enumerate(self.encoder):
            out.update(layer.named(f"encoder.{i}"))
        for i, layer in enumerate(self.decoder):
            out.update(layer.named(f"decoder.{i}"))
        out.update(self.enc_ln.named("encoder.ln_out"))
        out.update(self.dec_ln.named("decoder.ln_out"))
        return out

    @classmethod
    def from_arrays(cls, config: ModelConfig, arrays: dict[str, np.ndarray]) -> "ModelParams":
        """Build a model from checkpoint arrays, validating every shape."""
        model = cls.create(config, seed=0)
        registry = model.registry()
        if set(registry) != set(arrays):
            missing = sorted(set(registry) - set(arrays))
            extra = sorted(set(arrays) - set(registry))
            raise CheckpointMismatch(
                f"checkpoint does not match config: missing {missing[:3]}, unexpected {extra[:3]}"
            )
        for name, tensor in registry.items():
            if arrays[name].shape != tensor.data.shape:
                raise CheckpointMismatch(
                    f"checkpoint tensor {name!r} has shape {arrays[name].shape}, "
                    f"config wants {tensor.data.shape}"
                )
            tensor.data = np.ascontiguousarray(arrays[name], dtype=np.float64)
        return model


def encode(params: ModelParams, config: ModelConfig, ids: Sequence[int]) -> Tensor:
    """Run the text encoder; returns hidden states of shape (len(ids), d)."""
    if len(ids) == 0:
        raise ValueError("encode: empty input")
    if len(ids) > config.max_pos:
        raise ValueError(f"encode: input length {len(ids)} exceeds max_pos {config.max_pos}")
    ids = np.asarray(ids, dtype=np.int64)
    h = ops.add(
        ops.embedding_lookup(params.word_emb, ids),
        ops.embedding_lookup(params.pos_emb, np.arange(len(ids))),
    )
    for layer in params.encoder:
        hn = layer.ln1(h)
        h = ops.add(h, multi_head_attention(layer.attn, hn, hn, hn, heads=config.heads))
        h = ops.add(h, layer.ffn(layer.ln2(h)))
    return params.enc_ln(h)


@dataclass
class CrossContext:
    """Per-layer, per-instance encoder K/V projections plus stack spans.

    spans[b] gives the (start, stop) rows instance b owns in the current
    decoder stack; rebuilt cheaply per phase via `with_group_size`.
    """

    kv: list[list[tuple[Tensor, Tensor]]]   # [layer][instance] -> (K, V), each (1, h, S_enc, dh)
    spans: list[tuple[int, int]]

    @property
    def n_instances(self) -> int:
        return len(self.kv[0])

    def with_group_size(self, group: int) -> "CrossContext":
        spans = [(b * group, (b + 1) * group) for b in range(self.n_instances)]
        return CrossContext(kv=self.kv, spans=spans)


def cross_context(
    params: ModelParams, config: ModelConfig, enc_states: Sequence[Tensor]
) -> CrossContext:
    """Project encoder states to cross-attention K/V once per forward."""
    heads, d = config.heads, config.model_dim
    dh = d // heads
    kv: list[list[tuple[Tensor, Tensor]]] = []
    for layer in params.decoder:
        per_instance = []
        for h_e in enc_states:
            s = h_e.shape[0]

            def heads_first(lin) -> Tensor:
                y = lin(h_e)  # (s, d)
                return ops.reshape(ops.swapaxes(ops.reshape(y, (s, heads, dh)), 0, 1),
                                   (1, heads, s, dh))

            per_instance.append(
                (heads_first(layer.cross_attn.wk), heads_first(layer.cross_attn.wv))
            )
        kv.append(per_instance)
    return CrossContext(kv=kv, spans=[(b, b + 1) for b in range(len(enc_states))])


@dataclass
class DecoderState:
    """Growing per-layer K/V caches for a stack of decoder streams.

    Header states stack one stream per instance; body states stack
    M streams per instance (row-major: instance b's rows are contiguous)
    and link back to the header state whose caches their self-attention
    prepends.  sep_counts feeds the column embedding; length is the
    number of positions consumed so far.
    """

    row_indices: np.ndarray                 # (S,) row-embedding index per stream
    keys: list[Optional[Tensor]]
    values: list[Optional[Tensor]]
    header: Optional["DecoderState"] = None
    length: int = 0
    sep_counts: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.sep_counts is None:
            self.sep_counts = np.zeros(len(self.row_indices), dtype=np.int64)

    @property
    def stack_size(self) -> int:
        return len(self.row_indices)

    def clone(self) -> "DecoderState":
        return DecoderState(
            row_indices=self.row_indices.copy(),
            keys=list(self.keys),
            values=list(self.values),
            header=self.header,
            length=self.length,
            sep_counts=self.sep_counts.copy(),
        )


def make_header_state(config: ModelConfig, batch: int = 1) -> DecoderState:
    return DecoderState(
        row_indices=np.zeros(batch, dtype=np.int64),
        keys=[None] * config.decoder_layers,
        values=[None] * config.decoder_layers,
    )


def make_body_state(
    config: ModelConfig, header: DecoderState, rows: Optional[Sequence[int]] = None
) -> DecoderState:
    """Body streams for every instance in `header`; rows defaults to 1..M."""
    rows = list(rows) if rows is not None else list(range(1, config.max_rows + 1))
    for m in rows:
        if not 1 <= m <= config.max_rows:
            raise ValueError(f"row index {m} outside 1..{config.max_rows}")
    batch = header.stack_size
    return DecoderState(
        row_indices=np.asarray(rows * batch, dtype=np.int64),
        keys=[None] * config.decoder_layers,
        values=[None] * config.decoder_layers,
        header=header,
    )


def embed_decoder_input(
    params: ModelParams, token: int, position: int, row_index: int, column_index: int
) -> Tensor:
    """Word + Pos + Row + Col embedding sum for one decoder input token."""
    config = params.config
    if not 0 <= row_index <= config.max_rows:
        raise IndexError(f"row_index {row_index} outside 0..{config.max_rows}")
    if not 0 <= column_index < config.max_cols:
        raise IndexError(f"column_index {column_index} outside 0..{config.max_cols - 1}")
    stacked = _embed_stack(
        params,
        np.array([token]),
        position,
        np.array([row_index]),
        np.array([column_index]),
    )
    return ops.reshape(stacked, (config.model_dim,))


def _embed_stack(
    params: ModelParams,
    tokens: np.ndarray,
    position: int,
    row_indices: np.ndarray,
    col_indices: np.ndarray,
) -> Tensor:
    """(S,) token/row/col index arrays at one shared position -> (S, 1, d)."""
    s = len(tokens)
    if position >= params.config.max_pos:
        raise ValueError(f"position {position} overflows max_pos {params.config.max_pos}")
    total = ops.add(
        ops.add(
            ops.embedding_lookup(params.word_emb, tokens),
            ops.embedding_lookup(params.pos_emb, np.full(s, position)),
        ),
        ops.add(
            ops.embedding_lookup(params.row_emb, row_indices),
            ops.embedding_lookup(params.col_emb, col_indices),
        ),
    )
    return ops.reshape(total, (s, 1, params.config.model_dim))


def _cross_attend(layer: DecoderLayer, x: Tensor, ctx: CrossContext, layer_idx: int,
                  heads: int) -> Tensor:
    """Cross-attention, sliced per instance so encoder lengths never pad."""
    parts = []
    for (start, stop), (k, v) in zip(ctx.spans, ctx.kv[layer_idx]):
        xb = ops.slice_rows(x, start, stop)
        q = project_stepwise(layer.cross_attn.wq, xb, heads)
        dh = q.shape[-1]
        scores = ops.scale(ops.matmul(q, ops.swapaxes(k, -1, -2)), 1.0 / np.sqrt(dh))
        ctx_b = ops.matmul(ops.softmax(scores), v)  # (g, heads, 1, dh)
        g = ctx_b.shape[0]
        merged = ops.reshape(ops.swapaxes(ctx_b, 1, 2), (g, 1, dh * heads))
        parts.append(layer.cross_attn.wo(merged))
    return parts[0] if len(parts) == 1 else ops.concat(parts, axis=0)


def decoder_step(
    params: ModelParams,
    config: ModelConfig,
    ctx: CrossContext,
    state: DecoderState,
    tokens: np.ndarray,
) -> Tensor:
    """Advance every stream in `state` by one token; returns logits (S, 1, V).

    tokens[s] is the input token for stream s at the current position.
    Column indices derive from each stream's SEP count so far; the caches
    grow by one position.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.shape != (state.stack_size,):
        raise ValueError(f"expected {state.stack_size} tokens, got shape {tokens.shape}")
    cols = np.minimum(state.sep_counts, config.max_cols - 1)
    x = _embed_stack(params, tokens, state.length, state.row_indices, cols)

    group = state.stack_size // ctx.n_instances
    step_ctx = ctx.with_group_size(group)
    for layer_idx, layer in enumerate(params.decoder):
        # K/V caches hold projections of the normalized stream, so entries
        # written during teacher forcing and greedy decoding stay identical.
        xn = layer.ln1(x)
        k_new = project_stepwise(layer.self_attn.wk, xn, config.heads)
        v_new = project_stepwise(layer.self_attn.wv, xn, config.heads)
        if state.keys[layer_idx] is None:
            own_k, own_v = k_new, v_new
        else:
            own_k = ops.concat([state.keys[layer_idx], k_new], axis=2)
            own_v = ops.concat([state.values[layer_idx], v_new], axis=2)
        state.keys[layer_idx] = own_k
        state.values[layer_idx] = own_v
        if state.header is not None:
            rows_per_instance = group
            k_all = ops.concat(
                [ops.repeat_rows(state.header.keys[layer_idx], rows_per_instance), own_k],
                axis=2,
            )
            v_all = ops.concat(
                [ops.repeat_rows(state.header.values[layer_idx], rows_per_instance), own_v],
                axis=2,
            )
        else:
            k_all, v_all = own_k, own_v
        attn = attend_cached(layer.self_attn, xn, k_all, v_all, config.heads)
        x = ops.add(x, attn)
        x = ops.add(x, _cross_attend(layer, layer.ln2(x), step_ctx, layer_idx, config.heads))
        x = ops.add(x, layer.ffn(layer.ln3(x)))

    state.length += 1
    state.sep_counts = state.sep_counts + (tokens == SEP)
    logits = ops.matmul(params.dec_ln(x), ops.swapaxes(params.word_emb, 0, 1))
    return logits


def header_step(
    params: ModelParams,
    config: ModelConfig,
    ctx: CrossContext,
    state: DecoderState,
    prev_token: int,
) -> Tensor:
    """One header position for a single instance; returns logits (V,)."""
    if state.stack_size != 1 or state.header is not None:
        raise ValueError("header_step wants a single-instance header state")
    logits = decoder_step(params, config, ctx, state, np.array([prev_token]))
    return ops.reshape(logits, (config.vocab_size,))


def body_step(
    params: ModelParams,
    config: ModelConfig,
    ctx: CrossContext,
    state: DecoderState,
    prev_token: int,
) -> Tensor:
    """One position of one body row (state built with rows=[m]); logits (V,)."""
    if state.header is None:
        raise ValueError("body_step wants a state linked to finalized header caches")
    if state.stack_size != 1:
        raise ValueError("body_step advances a single row; use decoder_step for stacks")
    logits = decoder_step(params, config, ctx, state, np.array([prev_token]))
    return ops.reshape(logits, (config.vocab_size,))


def run_header_teacher_forced(
    params: ModelParams,
    config: ModelConfig,
    ctx: CrossContext,
    inputs: np.ndarray,
) -> tuple[Tensor, DecoderState]:
    """Feed gold header inputs (B, T); returns logits (B, T, V) and the state."""
    inputs = np.asarray(inputs, dtype=np.int64)
    batch, t_len = inputs.shape
    state = make_header_state(config, batch)
    steps = [decoder_step(params, config, ctx, state, inputs[:, k]) for k in range(t_len)]
    logits = steps[0] if t_len == 1 else ops.concat(steps, axis=1)
    return logits, state


def run_body_teacher_forced(
    params: ModelParams,
    config: ModelConfig,
    ctx: CrossContext,
    header_state: DecoderState,
    inputs: np.ndarray,
) -> Tensor:
    """Feed gold body inputs (B, M, R); returns logits (B*M, R, V).

    Stream order is row-major: instance b's M rows are rows b*M..(b+1)*M-1.
    """
    inputs = np.asarray(inputs, dtype=np.int64)
    batch, m_rows, r_len = inputs.shape
    if m_rows != config.max_rows:
        raise ValueError(f"expected {config.max_rows} row streams, got {m_rows}")
    state = make_body_state(config, header_state)
    flat = inputs.reshape(batch * m_rows, r_len)
    steps = [decoder_step(params, config, ctx, state, flat[:, k]) for k in range(r_len)]
    return steps[0] if r_len == 1 else ops.concat(steps, axis=1)


def first_cell_rollout(
    params: ModelParams,
    config: ModelConfig,
    ctx: CrossContext,
    header_state: DecoderState,
    k_fc: int,
) -> np.ndarray:
    """Greedy-roll all M rows for k_fc steps; returns probabilities (M, k_fc, V).

    Gradient-free: distributions are plain arrays and no tape records.
    Requires a single-instance header state with finalized caches.
    """
    if header_state.stack_size != 1:
        raise ValueError("first_cell_rollout wants a single-instance header state")
    m_rows = config.max_rows
    probs = np.empty((m_rows, k_fc, config.vocab_size))
    with no_grad():
        state = make_body_state(config, header_state)
        tokens = np.full(m_rows, BOS, dtype=np.int64)
        for k in range(k_fc):
            logits = decoder_step(params, config, ctx, state, tokens)
            flat = logits.data.reshape(m_rows, config.vocab_size)
            probs[:, k, :] = ops.softmax(Tensor(flat)).data
            tokens = flat.argmax(axis=1)
    return probs
