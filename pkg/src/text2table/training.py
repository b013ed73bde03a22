"""Losses and the training loop.

Per step: teacher-force the header, assign body targets to row slots by
first-cell matching (gradient-free, recomputed every step), teacher-force
the body against the assigned targets, and take one Adam step on
lambda * header_loss + (1 - lambda) * body_loss.

Batches pack instances up to a token budget and are split into groups of
equal header length; each group runs as one stacked forward whose
arithmetic is bit-identical to running its instances alone, so batch
packing never changes what a model learns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .autodiff import Adam, NumericError, Tape, Tensor, no_grad, ops
from .matching import PaddedTargets, assign_targets, pad_targets
from .model import (
    CrossContext,
    DecoderState,
    ModelConfig,
    ModelParams,
    cross_context,
    encode,
    run_body_teacher_forced,
    run_header_teacher_forced,
)
from .tables import Table, render_row, validate
from .tokenizer import BOS, EOS, NEWROW, PAD, Vocabulary, encode as encode_text


@dataclass(frozen=True)
class TrainConfig:
    lambda_: float = 0.5
    null_scale: float = 0.2
    lr: float = 1e-3
    warmup_ratio: float = 0.05
    max_tokens_per_batch: int = 1024
    max_steps: int = 2000
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.lambda_ <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {self.lambda_}")
        if not 0.0 < self.null_scale <= 1.0:
            raise ValueError(f"null_scale must be in (0, 1], got {self.null_scale}")
        if self.max_steps < 1 or self.max_tokens_per_batch < 1:
            raise ValueError("max_steps and max_tokens_per_batch must be positive")
        if not 0.0 <= self.warmup_ratio <= 1.0:
            raise ValueError(f"warmup_ratio must be in [0, 1], got {self.warmup_ratio}")


@dataclass(frozen=True)
class BatchInstance:
    """One training example: source ids plus tokenized targets.

    header_target ends with NEWROW; each body row target ends with EOS;
    padded holds the body rows padded to M slots with null rows.
    """

    source_ids: tuple[int, ...]
    header_target: tuple[int, ...]
    body_rows: tuple[tuple[int, ...], ...]
    padded: PaddedTargets

    @property
    def n_tokens(self) -> int:
        return (
            len(self.source_ids)
            + len(self.header_target)
            + sum(len(r) for r in self.body_rows)
        )


def build_instance(
    vocab: Vocabulary, config: ModelConfig, source: str, table: Table
) -> BatchInstance:
    """Tokenize one (source text, gold table) pair into training targets."""
    report = validate(table)
    if not report.well_formed:
        row, why = report.violations[0]
        raise ValueError(f"ill-formed gold table: row {row}: {why}")
    if table.n_rows > config.max_rows:
        raise ValueError(
            f"gold table has {table.n_rows} rows, model decodes {config.max_rows}"
        )
    source_ids = encode_text(vocab, source) + [EOS]
    if len(source_ids) > config.max_pos:
        raise ValueError(
            f"source is {len(source_ids)} tokens, max_pos is {config.max_pos}"
        )
    header_target = encode_text(vocab, render_row(table.header)) + [NEWROW]
    body = tuple(
        tuple(encode_text(vocab, render_row(row)) + [EOS]) for row in table.body
    )
    return BatchInstance(
        source_ids=tuple(source_ids),
        header_target=tuple(header_target),
        body_rows=body,
        padded=pad_targets(body, config.max_rows),
    )


def header_loss(
    params: ModelParams,
    config: ModelConfig,
    ctx: CrossContext,
    header_target: Sequence[int],
) -> tuple[Tensor, DecoderState]:
    """Teacher-forced negative log-likelihood of the header, terminal included."""
    target = np.asarray(header_target, dtype=np.int64)
    inputs = np.concatenate(([BOS], target[:-1]))[None, :]
    logits, state = run_header_teacher_forced(params, config, ctx, inputs)
    flat = ops.reshape(logits, (len(target), config.vocab_size))
    return ops.cross_entropy_rows(flat, target), state


def body_loss(
    params: ModelParams,
    config: ModelConfig,
    ctx: CrossContext,
    header_state: DecoderState,
    targets: PaddedTargets,
    perm: Sequence[int],
    null_scale: float,
) -> Tensor:
    """Teacher-forced loss of every row slot against its assigned target.

    Null-row targets are the single null token, down-weighted by null_scale.
    """
    inputs, flat_targets, weights = _pack_body_targets(
        config, [targets], [tuple(perm)], null_scale
    )
    logits = run_body_teacher_forced(params, config, ctx, header_state, inputs)
    flat = ops.reshape(logits, (flat_targets.size, config.vocab_size))
    return ops.cross_entropy_rows(flat, flat_targets, weights=weights)


def total_loss(header: Tensor, body: Tensor, lambda_: float) -> Tensor:
    return ops.add(ops.scale(header, lambda_), ops.scale(body, 1.0 - lambda_))


def _pack_body_targets(
    config: ModelConfig,
    padded_list: list[PaddedTargets],
    perms: list[tuple[int, ...]],
    null_scale: float,
):
    """Order targets by slot, pad to a common width, build CE weights."""
    m_rows = config.max_rows
    ordered = [
        [padded.rows[perm[m]] for m in range(m_rows)]
        for padded, perm in zip(padded_list, perms)
    ]
    nulls = [
        [padded.is_null[perm[m]] for m in range(m_rows)]
        for padded, perm in zip(padded_list, perms)
    ]
    width = max(len(row) for rows in ordered for row in rows)
    batch = len(padded_list)
    inputs = np.full((batch, m_rows, width), PAD, dtype=np.int64)
    targets = np.full((batch, m_rows, width), PAD, dtype=np.int64)
    weights = np.zeros((batch, m_rows, width))
    for b, (rows, null_flags) in enumerate(zip(ordered, nulls)):
        for m, (row, is_null) in enumerate(zip(rows, null_flags)):
            n = len(row)
            inputs[b, m, 0] = BOS
            inputs[b, m, 1:n] = row[:-1]
            targets[b, m, :n] = row
            weights[b, m, :n] = null_scale if is_null else 1.0
    return inputs, targets.reshape(-1), weights.reshape(-1)


def _slice_header_state(state: DecoderState, b: int) -> DecoderState:
    """Read-only single-instance view of a stacked header state."""
    return DecoderState(
        row_indices=state.row_indices[b : b + 1].copy(),
        keys=[Tensor(k.data[b : b + 1]) for k in state.keys],
        values=[Tensor(v.data[b : b + 1]) for v in state.values],
        length=state.length,
        sep_counts=state.sep_counts[b : b + 1].copy(),
    )


def _slice_context(ctx: CrossContext, b: int) -> CrossContext:
    return CrossContext(
        kv=[[layer_kv[b]] for layer_kv in ctx.kv],
        spans=[(0, 1)],
    )


@dataclass
class GroupResult:
    sum_header: Tensor
    sum_body: Tensor
    perms: list[tuple[int, ...]]


def _forward_group(
    params: ModelParams,
    config: ModelConfig,
    instances: Sequence[BatchInstance],
    null_scale: float,
) -> GroupResult:
    """One stacked forward over instances sharing a header target length."""
    enc = [encode(params, config, list(inst.source_ids)) for inst in instances]
    ctx = cross_context(params, config, enc)

    t_len = len(instances[0].header_target)
    header_inputs = np.empty((len(instances), t_len), dtype=np.int64)
    for b, inst in enumerate(instances):
        header_inputs[b, 0] = BOS
        header_inputs[b, 1:] = inst.header_target[:-1]
    header_targets = np.concatenate(
        [np.asarray(inst.header_target) for inst in instances]
    )
    logits_h, hstate = run_header_teacher_forced(params, config, ctx, header_inputs)
    flat_h = ops.reshape(logits_h, (len(instances) * t_len, config.vocab_size))
    sum_header = ops.cross_entropy_rows(flat_h, header_targets)

    perms = []
    for b, inst in enumerate(instances):
        assignment = assign_targets(
            params,
            config,
            _slice_context(ctx, b),
            _slice_header_state(hstate, b),
            inst.padded,
        )
        perms.append(assignment.perm)

    inputs, flat_targets, weights = _pack_body_targets(
        config, [inst.padded for inst in instances], perms, null_scale
    )
    logits_b = run_body_teacher_forced(params, config, ctx, hstate, inputs)
    flat_b = ops.reshape(logits_b, (flat_targets.size, config.vocab_size))
    sum_body = ops.cross_entropy_rows(flat_b, flat_targets, weights=weights)
    return GroupResult(sum_header=sum_header, sum_body=sum_body, perms=perms)


def _forward_batch(
    params: ModelParams,
    config: ModelConfig,
    batch: Sequence[tuple[int, BatchInstance]],
    cfg: TrainConfig,
) -> tuple[Tensor, float, float, dict[int, tuple[int, ...]]]:
    """Forward a packed batch; returns (mean loss, mean L_h, mean L_b, perms)."""
    groups: dict[int, list[tuple[int, BatchInstance]]] = {}
    for idx, inst in batch:
        groups.setdefault(len(inst.header_target), []).append((idx, inst))

    sum_h: Optional[Tensor] = None
    sum_b: Optional[Tensor] = None
    perms: dict[int, tuple[int, ...]] = {}
    for members in groups.values():
        result = _forward_group(
            params, config, [inst for _, inst in members], cfg.null_scale
        )
        for (idx, _), perm in zip(members, result.perms):
            perms[idx] = perm
        sum_h = result.sum_header if sum_h is None else ops.add(sum_h, result.sum_header)
        sum_b = result.sum_body if sum_b is None else ops.add(sum_b, result.sum_body)

    n = len(batch)
    loss = ops.scale(total_loss(sum_h, sum_b, cfg.lambda_), 1.0 / n)
    return loss, sum_h.item() / n, sum_b.item() / n, perms


def _pack_batches(
    order: Sequence[int], dataset: Sequence[BatchInstance], budget: int
) -> list[list[tuple[int, BatchInstance]]]:
    batches: list[list[tuple[int, BatchInstance]]] = []
    current: list[tuple[int, BatchInstance]] = []
    used = 0
    for idx in order:
        inst = dataset[idx]
        if current and used + inst.n_tokens > budget:
            batches.append(current)
            current, used = [], 0
        current.append((idx, inst))
        used += inst.n_tokens
    if current:
        batches.append(current)
    return batches


@dataclass
class MetricsRow:
    step: int
    header_loss: float
    body_loss: float
    loss: float
    lr: float
    churn: float

    def as_tsv(self) -> str:
        return (
            f"{self.step}\t{self.header_loss:.6f}\t{self.body_loss:.6f}"
            f"\t{self.loss:.6f}\t{self.lr:.8f}\t{self.churn:.4f}"
        )


METRICS_HEADER = "step\tL_h\tL_b\tL\tlr\tchurn"


@dataclass
class TrainResult:
    best_arrays: dict[str, np.ndarray]
    best_step: int
    best_val_loss: float
    metrics: list[MetricsRow] = field(default_factory=list)


def validation_loss(
    params: ModelParams,
    config: ModelConfig,
    dataset: Sequence[BatchInstance],
    cfg: TrainConfig,
) -> float:
    """Mean per-instance loss over a held-out set, gradient-free."""
    if not dataset:
        return math.nan
    total = 0.0
    with no_grad():
        for chunk in _pack_batches(range(len(dataset)), dataset, cfg.max_tokens_per_batch):
            loss, _, _, _ = _forward_batch(params, config, chunk, cfg)
            total += loss.item() * len(chunk)
    return total / len(dataset)


def train(
    params: ModelParams,
    dataset: Sequence[BatchInstance],
    cfg: TrainConfig,
    val_set: Sequence[BatchInstance] = (),
    metrics_path: Optional[str] = None,
) -> TrainResult:
    """Optimize params in place; returns the best-validation snapshot.

    Without a validation set the final parameters are the snapshot.  The
    metrics log gets one tab-separated row per step.
    """
    if not dataset:
        raise ValueError("training set is empty")
    config = params.config
    registry = params.registry()
    opt = Adam(registry, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    warmup_steps = max(1, round(cfg.warmup_ratio * cfg.max_steps))
    eval_every = max(1, cfg.max_steps // 20)

    prev_assign: dict[int, tuple[int, ...]] = {}
    metrics: list[MetricsRow] = []
    best_val = math.inf
    best_step = -1
    best_arrays: dict[str, np.ndarray] = {}

    def snapshot() -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in registry.items()}

    step = 0
    while step < cfg.max_steps:
        order = rng.permutation(len(dataset))
        for batch in _pack_batches(order, dataset, cfg.max_tokens_per_batch):
            if step >= cfg.max_steps:
                break
            try:
                with Tape() as tape:
                    loss, mean_h, mean_b, perms = _forward_batch(
                        params, config, batch, cfg
                    )
                    tape.backward(loss)
            except (NumericError, FloatingPointError, ValueError) as e:
                # a NaN/Inf can surface in backward, in the loss itself, or
                # as a non-finite assignment cost matrix
                raise NumericError(
                    f"training aborted at step {step}: {e} "
                    f"(lr {opt.lr:.3g}, batch of {len(batch)} instances)"
                ) from e

            opt.lr = cfg.lr * min(1.0, (step + 1) / warmup_steps)
            opt.step()
            step += 1

            seen = [idx for idx, _ in batch if idx in prev_assign]
            if seen:
                changed = sum(
                    int(np.not_equal(prev_assign[idx], perms[idx]).sum())
                    for idx in seen
                )
                churn = changed / (len(seen) * config.max_rows)
            else:
                churn = 0.0
            prev_assign.update(perms)

            metrics.append(
                MetricsRow(
                    step=step,
                    header_loss=mean_h,
                    body_loss=mean_b,
                    loss=loss.item(),
                    lr=opt.lr,
                    churn=float(churn),
                )
            )

            if val_set and (step % eval_every == 0 or step == cfg.max_steps):
                vl = validation_loss(params, config, val_set, cfg)
                if vl < best_val:
                    best_val = vl
                    best_step = step
                    best_arrays = snapshot()

    if not best_arrays:
        best_arrays = snapshot()
        best_step = step
        best_val = validation_loss(params, config, val_set, cfg) if val_set else math.nan

    if metrics_path is not None:
        with open(metrics_path, "w", encoding="utf-8") as f:
            f.write(METRICS_HEADER + "\n")
            for row in metrics:
                f.write(row.as_tsv() + "\n")

    return TrainResult(
        best_arrays=best_arrays,
        best_step=best_step,
        best_val_loss=best_val,
        metrics=metrics,
    )
