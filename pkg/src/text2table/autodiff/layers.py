"""Learned layers: linear, layer norm, feed-forward, multi-head attention.

Two attention entry points share one parameter set: a full-sequence form
for encoder-style passes, and a cached step form for decoder-style passes
where queries are single positions attending a growing key/value cache.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import ops
from .tensor import Tensor, parameter


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=(fan_in, fan_out))


@dataclass
class LinearParams:
    w: Tensor
    b: Tensor

    @classmethod
    def create(cls, rng: np.random.Generator, fan_in: int, fan_out: int) -> "LinearParams":
        return cls(w=parameter(_xavier(rng, fan_in, fan_out)), b=parameter(np.zeros(fan_out)))

    def __call__(self, x) -> Tensor:
        return ops.add(ops.matmul(x, self.w), self.b)

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.w", self.w
        yield f"{prefix}.b", self.b


@dataclass
class LayerNormParams:
    gain: Tensor
    bias: Tensor

    @classmethod
    def create(cls, d: int) -> "LayerNormParams":
        return cls(gain=parameter(np.ones(d)), bias=parameter(np.zeros(d)))

    def __call__(self, x) -> Tensor:
        return ops.layer_norm(x, self.gain, self.bias)

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.gain", self.gain
        yield f"{prefix}.bias", self.bias


@dataclass
class FeedForwardParams:
    lin1: LinearParams
    lin2: LinearParams

    @classmethod
    def create(cls, rng: np.random.Generator, d: int, ffn_dim: int) -> "FeedForwardParams":
        return cls(
            lin1=LinearParams.create(rng, d, ffn_dim),
            lin2=LinearParams.create(rng, ffn_dim, d),
        )

    def __call__(self, x) -> Tensor:
        return self.lin2(ops.gelu(self.lin1(x)))

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield from self.lin1.named(f"{prefix}.lin1")
        yield from self.lin2.named(f"{prefix}.lin2")


@dataclass
class AttentionParams:
    wq: LinearParams
    wk: LinearParams
    wv: LinearParams
    wo: LinearParams

    @classmethod
    def create(cls, rng: np.random.Generator, d: int) -> "AttentionParams":
        return cls(
            wq=LinearParams.create(rng, d, d),
            wk=LinearParams.create(rng, d, d),
            wv=LinearParams.create(rng, d, d),
            wo=LinearParams.create(rng, d, d),
        )

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for sub, lin in (("wq", self.wq), ("wk", self.wk), ("wv", self.wv), ("wo", self.wo)):
            yield from lin.named(f"{prefix}.{sub}")


def _check_heads(d: int, heads: int) -> int:
    if heads < 1 or d % heads != 0:
        raise ValueError(f"model dim {d} is not divisible by heads {heads}")
    return d // heads


def multi_head_attention(
    p: AttentionParams,
    q_in,
    k_in,
    v_in,
    *,
    heads: int,
    causal_mask: bool = False,
    kv_offset: int = 0,
) -> Tensor:
    """Full-sequence attention: q_in (T, d) attends k_in/v_in (S, d).

    With causal_mask, query position i attends key positions <= i + kv_offset.
    """
    d = q_in.shape[-1]
    dh = _check_heads(d, heads)
    n_q, n_k = q_in.shape[0], k_in.shape[0]

    def split(x) -> Tensor:  # (T, d) -> (heads, T, dh)
        return ops.swapaxes(ops.reshape(x, (x.shape[0], heads, dh)), 0, 1)

    q = split(p.wq(q_in))
    k = split(p.wk(k_in))
    v = split(p.wv(v_in))
    scores = ops.scale(ops.matmul(q, ops.swapaxes(k, -1, -2)), 1.0 / math.sqrt(dh))
    if causal_mask:
        scores = ops.add(scores, ops.causal_mask_array(n_q, n_k, kv_offset)[None, :, :])
    ctx = ops.matmul(ops.softmax(scores), v)  # (heads, T, dh)
    merged = ops.reshape(ops.swapaxes(ctx, 0, 1), (n_q, d))
    return p.wo(merged)


def project_stepwise(lin: LinearParams, x, heads: int) -> Tensor:
    """Project a stacked single position (S, 1, d) to heads: (S, heads, 1, dh)."""
    d = x.shape[-1]
    dh = _check_heads(d, heads)
    y = lin(x)
    return ops.swapaxes(ops.reshape(y, (y.shape[0], 1, heads, dh)), 1, 2)


def attend_cached(p: AttentionParams, x, k_cache, v_cache, heads: int) -> Tensor:
    """One attention step: x (S, 1, d) against caches (S, heads, T, dh).

    The caches already hold every key/value position this query may see,
    so no mask is needed; causality holds by construction.
    """
    s, _, d = x.shape
    dh = _check_heads(d, heads)
    q = project_stepwise(p.wq, x, heads)
    scores = ops.scale(ops.matmul(q, ops.swapaxes(k_cache, -1, -2)), 1.0 / math.sqrt(dh))
    ctx = ops.matmul(ops.softmax(scores), v_cache)  # (S, heads, 1, dh)
    merged = ops.reshape(ops.swapaxes(ctx, 1, 2), (s, 1, d))
    return p.wo(merged)
