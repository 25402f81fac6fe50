"""Shared per-point MLP encoder with max pooling, PointNet style.

Every point passes through the same stack of affine layers with gelu
between them (none after the last), giving per-point features that are
equivariant to point order. The global descriptor is the columnwise max
over points, which is where permutation invariance comes from: max is
exact over any reordering of the same values, not merely approximate.
No input or feature transforms are learned; the clouds here are already
normalized upstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, constant, gelu, linear, reduce_max
from .errors import ConfigError, EmptyInputError
from .nn import LinearParams, init_linear


@dataclass
class PointNetParams:
    layers: list[LinearParams]
    dims: tuple[int, ...]


@dataclass
class PointFeatures:
    """Per-point feature rows plus their columnwise max."""

    per_point: Tensor
    pooled: Tensor


def init_pointnet(dims: tuple[int, ...], rng: np.random.Generator) -> PointNetParams:
    if len(dims) < 2:
        raise ConfigError(f"encoder needs at least input and output widths, got {dims}")
    layers = [init_linear(rng, dims[i], dims[i + 1]) for i in range(len(dims) - 1)]
    return PointNetParams(layers=layers, dims=tuple(dims))


def encode(points, params: PointNetParams) -> PointFeatures:
    """Encode an [M, 3] cloud into per-point features and a pooled descriptor."""
    x = points if isinstance(points, Tensor) else constant(points)
    if x.data.ndim != 2 or x.shape[1] != params.dims[0]:
        raise ConfigError(
            f"encoder expects [M, {params.dims[0]}] input, got shape {x.shape}")
    if x.shape[0] == 0:
        raise EmptyInputError("cannot encode an empty cloud")
    last = len(params.layers) - 1
    for i, layer in enumerate(params.layers):
        x = linear(x, layer.w, layer.b)
        if i != last:
            x = gelu(x)
    return PointFeatures(per_point=x, pooled=reduce_max(x, axis=0))
