"""Differentiable primitives.

Every op computes plain numpy in forward, and, when a tape is active and
an input requires grad, records a closure that maps the output gradient to
input-gradient accumulations.  Ops never mutate their inputs and never
mutate the incoming gradient array.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import erf

from .tensor import Tensor, current_tape

ArrayLike = Union[Tensor, np.ndarray, float, int]

# Additive mask value: exp(-1e30 - anything representable) underflows to
# exactly 0.0, so masked attention weights are bit-exact zeros.
MASK_VALUE = -1e30

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _maybe_record(name: str, out: Tensor, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(name, out, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to `shape`, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = Tensor(a.data + b.data)
    except ValueError:
        raise ValueError(f"add: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.shape))

    return _maybe_record("add", out, (a, b), backward)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = Tensor(a.data * b.data)
    except ValueError:
        raise ValueError(f"mul: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.shape))

    return _maybe_record("mul", out, (a, b), backward)


def scale(a: ArrayLike, s: float) -> Tensor:
    a = _as_tensor(a)
    s = float(s)
    out = Tensor(a.data * s)

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g * s)

    return _maybe_record("scale", out, (a,), backward)


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Matrix product with numpy stacking semantics; operands must be >= 2-D.

    Stacked operands are contracted slice by slice, which keeps each row's
    arithmetic independent of how many other rows share the call.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul: operands must be >= 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = Tensor(np.matmul(a.data, b.data))
    except ValueError:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a.accumulate_grad(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                # shared weight under a stack: contract the flattened stack
                # in one product instead of materializing per-slice outers
                k = a.shape[-1]
                n = g.shape[-1]
                gb = np.matmul(a.data.reshape(-1, k).T, g.reshape(-1, n))
                b.accumulate_grad(gb)
            else:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
                b.accumulate_grad(_unbroadcast(gb, b.shape))

    return _maybe_record("matmul", out, (a, b), backward)


def concat(parts: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]

    def backward(g: np.ndarray) -> None:
        offset = 0
        for t, size in zip(tensors, sizes):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(offset, offset + size)
                t.accumulate_grad(g[tuple(index)])
            offset += size

    return _maybe_record("concat", out, tensors, backward)


def concat_rows(parts: Sequence[ArrayLike]) -> Tensor:
    """Stack along the first axis: (2, d) and (3, d) concatenate to (5, d)."""
    return concat(parts, axis=0)


def slice_rows(a: ArrayLike, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data[start:stop].copy())

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[start:stop] = g
            a.accumulate_grad(full)

    return _maybe_record("slice_rows", out, (a,), backward)


def repeat_rows(a: ArrayLike, times: int) -> Tensor:
    """Repeat each leading-axis entry `times` times consecutively."""
    a = _as_tensor(a)
    out = Tensor(np.repeat(a.data, times, axis=0))

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g.reshape(a.shape[0], times, *a.shape[1:]).sum(axis=1))

    return _maybe_record("repeat_rows", out, (a,), backward)


def reshape(a: ArrayLike, shape: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape))

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g.reshape(a.shape))

    return _maybe_record("reshape", out, (a,), backward)


def swapaxes(a: ArrayLike, axis1: int, axis2: int) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.swapaxes(a.data, axis1, axis2).copy())

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(np.swapaxes(g, axis1, axis2))

    return _maybe_record("swapaxes", out, (a,), backward)


def embedding_lookup(table: ArrayLike, ids: np.ndarray) -> Tensor:
    """Gather rows of `table` (n, d) by an integer index array."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(
            f"embedding_lookup: id out of range for table with {table.shape[0]} rows"
        )
    out = Tensor(table.data[ids])

    def backward(g: np.ndarray) -> None:
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids, g)
            table.accumulate_grad(gt)

    return _maybe_record("embedding_lookup", out, (table,), backward)


def softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            inner = (g * y).sum(axis=axis, keepdims=True)
            x.accumulate_grad((g - inner) * y)

    return _maybe_record("softmax", out, (x,), backward)


def layer_norm(x: ArrayLike, gain: ArrayLike, bias: ArrayLike, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis with learned gain and bias."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    d = x.shape[-1]
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = Tensor(xhat * gain.data + bias.data)

    def backward(g: np.ndarray) -> None:
        if gain.requires_grad:
            gain.accumulate_grad(_unbroadcast(g * xhat, gain.shape))
        if bias.requires_grad:
            bias.accumulate_grad(_unbroadcast(g, bias.shape))
        if x.requires_grad:
            gxhat = g * gain.data
            term = gxhat - gxhat.mean(axis=-1, keepdims=True)
            term -= xhat * (gxhat * xhat).sum(axis=-1, keepdims=True) / d
            x.accumulate_grad(term * inv)

    return _maybe_record("layer_norm", out, (x, gain, bias), backward)


def gelu(x: ArrayLike) -> Tensor:
    """Exact (erf-based) GELU."""
    x = _as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = Tensor(x.data * cdf)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
            x.accumulate_grad(g * (cdf + x.data * pdf))

    return _maybe_record("gelu", out, (x,), backward)


def _log_softmax_parts(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    lse = m[..., 0] + np.log(np.exp(shifted).sum(axis=-1))
    return shifted, lse


def cross_entropy_rows(
    logits: ArrayLike,
    target_ids: np.ndarray,
    weights: Optional[np.ndarray] = None,
) -> Tensor:
    """Weighted sum of per-row cross-entropies.

    logits: (n, V); target_ids: (n,) ints; weights: (n,) floats (default 1).
    Rows with weight 0 contribute nothing, gradient included.
    """
    logits = _as_tensor(logits)
    if logits.ndim != 2:
        raise ValueError(f"cross_entropy_rows: logits must be 2-D, got {logits.shape}")
    n, vocab = logits.shape
    target_ids = np.asarray(target_ids, dtype=np.int64)
    if target_ids.shape != (n,):
        raise ValueError(
            f"cross_entropy_rows: {n} logit rows vs target shape {target_ids.shape}"
        )
    if target_ids.size and (target_ids.min() < 0 or target_ids.max() >= vocab):
        raise IndexError(f"cross_entropy_rows: target id out of range 0..{vocab - 1}")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    rows = np.arange(n)
    _, lse = _log_softmax_parts(logits.data)
    per_row = lse - logits.data[rows, target_ids]
    out = Tensor(np.asarray((w * per_row).sum()))

    def backward(g: np.ndarray) -> None:
        if logits.requires_grad:
            shifted, _ = _log_softmax_parts(logits.data)
            e = np.exp(shifted)
            probs = e / e.sum(axis=-1, keepdims=True)
            grad = probs * w[:, None]
            grad[rows, target_ids] -= w
            logits.accumulate_grad(g * grad)

    return _maybe_record("cross_entropy_rows", out, (logits,), backward)


def cross_entropy(logits: ArrayLike, target_id: int) -> Tensor:
    """-log softmax(logits)[target_id] for a single logit row."""
    logits = _as_tensor(logits)
    if logits.ndim != 1:
        raise ValueError(f"cross_entropy: logits must be 1-D, got {logits.shape}")
    row = reshape(logits, (1, logits.shape[0]))
    return cross_entropy_rows(row, np.array([target_id]))


def sum_all(a: ArrayLike) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.asarray(a.data.sum()))

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(np.broadcast_to(g, a.shape).copy())

    return _maybe_record("sum_all", out, (a,), backward)


def causal_mask_array(n_queries: int, n_keys: int, kv_offset: int = 0) -> np.ndarray:
    """Additive mask: query i may attend key j iff j <= i + kv_offset."""
    q = np.arange(n_queries)[:, None]
    k = np.arange(n_keys)[None, :]
    return np.where(k <= q + kv_offset, 0.0, MASK_VALUE)
