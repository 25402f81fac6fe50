"""Shared building blocks for the learned components.

Initialization draws from an explicit generator so every parameter in the
package is a pure function of (seed, architecture). ``named_parameters``
walks dataclasses depth-first in field order, which fixes a deterministic
parameter ordering used by the optimizer, the checkpoint container, and
parameter counting alike.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .autodiff import (
    Tensor,
    add,
    constant,
    gelu,
    layernorm,
    linear,
    matmul,
    mul,
    parameter,
    softmax,
    transpose,
)


@dataclass
class LinearParams:
    w: Tensor
    b: Tensor


@dataclass
class LayerNormParams:
    gain: Tensor
    bias: Tensor


@dataclass
class BlockParams:
    """Pre-norm transformer block: attention then MLP, residual around each."""

    ln1: LayerNormParams
    wq: LinearParams
    wk: LinearParams
    wv: LinearParams
    wo: LinearParams
    ln2: LayerNormParams
    fc1: LinearParams
    fc2: LinearParams


def init_linear(rng: np.random.Generator, n_in: int, n_out: int,
                scale: float | None = None) -> LinearParams:
    if scale is None:
        scale = 1.0 / math.sqrt(n_in)
    return LinearParams(w=parameter(rng.normal(0.0, scale, size=(n_in, n_out))),
                        b=parameter(np.zeros(n_out)))


def init_layernorm(d: int) -> LayerNormParams:
    return LayerNormParams(gain=parameter(np.ones(d)), bias=parameter(np.zeros(d)))


def init_block(rng: np.random.Generator, d: int, hidden: int) -> BlockParams:
    return BlockParams(
        ln1=init_layernorm(d),
        wq=init_linear(rng, d, d),
        wk=init_linear(rng, d, d),
        wv=init_linear(rng, d, d),
        wo=init_linear(rng, d, d),
        ln2=init_layernorm(d),
        fc1=init_linear(rng, d, hidden),
        fc2=init_linear(rng, hidden, d),
    )


def block_forward(x: Tensor, p: BlockParams) -> tuple[Tensor, Tensor]:
    """Apply the block to a [T, d] sequence; also returns attention rows."""
    d = x.shape[1]
    h = layernorm(x, p.ln1.gain, p.ln1.bias)
    q = linear(h, p.wq.w, p.wq.b)
    k = linear(h, p.wk.w, p.wk.b)
    v = linear(h, p.wv.w, p.wv.b)
    scores = mul(matmul(q, transpose(k)), constant(1.0 / math.sqrt(d)))
    probs = softmax(scores)
    attended = linear(matmul(probs, v), p.wo.w, p.wo.b)
    x = add(x, attended)
    h2 = layernorm(x, p.ln2.gain, p.ln2.bias)
    x = add(x, linear(gelu(linear(h2, p.fc1.w, p.fc1.b)), p.fc2.w, p.fc2.b))
    return x, probs


def sinusoidal_embedding(t: int, d: int) -> np.ndarray:
    """Fixed sin/cos position code for an integer timestep, sines first."""
    half = d // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    ang = t * freqs
    emb = np.concatenate([np.sin(ang), np.cos(ang)])
    if emb.size < d:  # odd widths pad with a zero
        emb = np.concatenate([emb, np.zeros(d - emb.size)])
    return emb


def named_parameters(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Yield (dotted name, tensor) for every Tensor reachable from obj."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            child = getattr(obj, f.name)
            sub = f"{prefix}.{f.name}" if prefix else f.name
            yield from named_parameters(child, sub)
    elif isinstance(obj, (list, tuple)):
        for i, child in enumerate(obj):
            sub = f"{prefix}.{i}" if prefix else str(i)
            yield from named_parameters(child, sub)
    # other field types (ints, arrays, strings) carry no parameters


def count_parameters(obj) -> int:
    return sum(t.size for _, t in named_parameters(obj))
