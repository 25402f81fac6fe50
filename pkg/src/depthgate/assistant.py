"""Auxiliary action head and the gated pathway into the main denoiser.

The auxiliary head mirrors the main one at reduced width: its token
sequence is [projected per-point features; state token; action tokens],
and a single shared transformer block is applied once per main layer, so
depth costs no extra parameters. The output of application l is the
auxiliary hidden state for main layer l. Its own epsilon prediction
exists purely to carry a training loss; nothing downstream of sampling
ever reads it.

Features cross into the main head as ``h + alpha_l * T(h_aux_l, f3d)``
with per-layer scalar gates initialized to zero, so an untrained gate is
exactly a no-op while still exposing a finite-difference-checkable
gradient. Two forms of T are available: a token-wise MLP over the
up-projected auxiliary state concatenated with the pooled cloud
descriptor, and cross-attention from the auxiliary state into the
per-point features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    Tensor,
    add,
    concat,
    constant,
    gelu,
    layernorm,
    linear,
    matmul,
    mse_loss,
    mul,
    parameter,
    slice_rows,
    softmax,
    transpose,
)
from .errors import ConfigError, ShapeError
from .nn import (
    BlockParams,
    LayerNormParams,
    LinearParams,
    block_forward,
    count_parameters,
    init_block,
    init_layernorm,
    init_linear,
    sinusoidal_embedding,
)
from .expert import DiffusionSchedule, ExpertParams
from .pointnet import PointFeatures

__all__ = [
    "AssistantParams",
    "AssistantOutput",
    "InjectionParams",
    "init_assistant",
    "init_injection",
    "assistant_forward",
    "transform_features",
    "inject",
    "injection_terms",
    "map_timestep",
    "loss_aux",
    "total_loss",
    "check_parameter_budget",
]

INJECTION_MODES = ("projection", "cross_attention")


@dataclass
class AssistantParams:
    point_proj: LinearParams
    state_embed: LinearParams
    action_embed: LinearParams
    block: BlockParams
    final_ln: LayerNormParams
    head: LinearParams
    schedule: DiffusionSchedule
    applications: int
    d_aux: int
    n_points: int
    horizon: int
    d_action: int
    d_state: int

    @property
    def n_tokens(self) -> int:
        return self.n_points + 1 + self.horizon


@dataclass
class AssistantOutput:
    h_aux: list[Tensor]
    eps_aux: Tensor
    attention: list[Tensor] = field(default_factory=list)


@dataclass
class ProjectionLayer:
    up: LinearParams
    fc1: LinearParams
    fc2: LinearParams


@dataclass
class CrossAttentionLayer:
    wq: LinearParams
    wk: LinearParams
    wv: LinearParams
    wo: LinearParams


@dataclass
class InjectionParams:
    mode: str
    alphas: list[Tensor]
    layers: list  # ProjectionLayer or CrossAttentionLayer, one per main layer
    attn_dim: int | None = None


def init_assistant(*, d_aux: int, d_main: int, n_points: int, feature_dim: int,
                   horizon: int, d_action: int, d_state: int, applications: int,
                   k_aux: int, k_main: int, beta_start: float, beta_end: float,
                   hidden: int, seed: int = 0) -> AssistantParams:
    if d_aux >= d_main:
        raise ConfigError(f"auxiliary width {d_aux} must be smaller than main width {d_main}")
    if not 1 <= k_aux <= k_main:
        raise ConfigError(f"auxiliary horizon {k_aux} must lie in [1, {k_main}]")
    if applications < 1:
        raise ConfigError(f"need at least one block application, got {applications}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    return AssistantParams(
        point_proj=init_linear(rng, feature_dim, d_aux),
        state_embed=init_linear(rng, d_state, d_aux),
        action_embed=init_linear(rng, d_action, d_aux),
        block=init_block(rng, d_aux, hidden),
        final_ln=init_layernorm(d_aux),
        head=init_linear(rng, d_aux, d_action),
        schedule=DiffusionSchedule.linear(k_aux, beta_start, beta_end),
        applications=applications,
        d_aux=d_aux,
        n_points=n_points,
        horizon=horizon,
        d_action=d_action,
        d_state=d_state,
    )


def init_injection(*, mode: str, n_layers: int, d_aux: int, d_main: int,
                   feature_dim: int, hidden: int, attn_dim: int,
                   alpha_init: float = 0.0, seed: int = 0) -> InjectionParams:
    if mode not in INJECTION_MODES:
        raise ConfigError(f"unknown injection mode {mode!r}, expected one of {INJECTION_MODES}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    alphas = [parameter(alpha_init) for _ in range(n_layers)]
    layers = []
    for _ in range(n_layers):
        if mode == "projection":
            layers.append(ProjectionLayer(
                up=init_linear(rng, d_aux, d_main),
                fc1=init_linear(rng, d_main + feature_dim, hidden),
                fc2=init_linear(rng, hidden, d_main),
            ))
        else:
            layers.append(CrossAttentionLayer(
                wq=init_linear(rng, d_aux, attn_dim),
                wk=init_linear(rng, feature_dim, attn_dim),
                wv=init_linear(rng, feature_dim, attn_dim),
                wo=init_linear(rng, attn_dim, d_main),
            ))
    return InjectionParams(mode=mode, alphas=alphas, layers=layers,
                           attn_dim=attn_dim if mode == "cross_attention" else None)


def map_timestep(t: int, k_main: int, k_aux: int) -> int:
    """Compress a main timestep into the shorter auxiliary range (ceil map)."""
    if not 1 <= t <= k_main:
        raise ConfigError(f"timestep {t} outside [1, {k_main}]")
    return -((-t * k_aux) // k_main)


def assistant_forward(f3d: PointFeatures, state: np.ndarray, a_t, t_aux: int,
                      p: AssistantParams) -> AssistantOutput:
    """Run the shared block ``applications`` times over the auxiliary tokens.

    ``t_aux`` indexes the reduced schedule, see :func:`map_timestep`.
    The i-th application's output becomes ``h_aux`` for main layer i.
    """
    if not 1 <= t_aux <= p.schedule.k:
        raise ConfigError(f"auxiliary timestep {t_aux} outside [1, {p.schedule.k}]")
    if f3d.per_point.shape != (p.n_points, p.point_proj.w.shape[0]):
        raise ShapeError(
            f"per-point features {f3d.per_point.shape}, expected "
            f"({p.n_points}, {p.point_proj.w.shape[0]})")
    state = np.asarray(state, dtype=np.float64)
    if state.shape != (p.d_state,):
        raise ShapeError(f"state shape {state.shape}, expected ({p.d_state},)")
    a_t = a_t if isinstance(a_t, Tensor) else constant(a_t)
    if a_t.shape != (p.horizon, p.d_action):
        raise ShapeError(f"action shape {a_t.shape}, expected ({p.horizon}, {p.d_action})")

    point_tok = linear(f3d.per_point, p.point_proj.w, p.point_proj.b)
    state_tok = linear(constant(state[None, :]), p.state_embed.w, p.state_embed.b)
    action_tok = add(linear(a_t, p.action_embed.w, p.action_embed.b),
                     constant(sinusoidal_embedding(t_aux, p.d_aux)))
    x = concat([point_tok, state_tok, action_tok], axis=0)

    h_aux: list[Tensor] = []
    attention: list[Tensor] = []
    for _ in range(p.applications):
        x, probs = block_forward(x, p.block)
        h_aux.append(x)
        attention.append(probs)

    y = slice_rows(x, p.n_points + 1, p.n_tokens)
    y = layernorm(y, p.final_ln.gain, p.final_ln.bias)
    eps_aux = linear(y, p.head.w, p.head.b)
    return AssistantOutput(h_aux=h_aux, eps_aux=eps_aux, attention=attention)


def transform_features(h_aux_l: Tensor, f3d: PointFeatures, ip: InjectionParams,
                       layer: int) -> Tensor:
    """The feature bridge T for one layer; output is token-aligned with h_orig."""
    if not 0 <= layer < len(ip.layers):
        raise ShapeError(f"layer index {layer} outside [0, {len(ip.layers)})")
    lp = ip.layers[layer]
    if ip.mode == "projection":
        up = linear(h_aux_l, lp.up.w, lp.up.b)
        pooled_rows = add(constant(np.zeros((up.shape[0], f3d.pooled.shape[0]))), f3d.pooled)
        cat = concat([up, pooled_rows], axis=1)
        return linear(gelu(linear(cat, lp.fc1.w, lp.fc1.b)), lp.fc2.w, lp.fc2.b)
    q = linear(h_aux_l, lp.wq.w, lp.wq.b)
    k = linear(f3d.per_point, lp.wk.w, lp.wk.b)
    v = linear(f3d.per_point, lp.wv.w, lp.wv.b)
    scores = mul(matmul(q, transpose(k)), constant(1.0 / math.sqrt(ip.attn_dim)))
    ctx = matmul(softmax(scores), v)
    return linear(ctx, lp.wo.w, lp.wo.b)


def inject(h_orig: Tensor, h_aux_l: Tensor, f3d: PointFeatures, ip: InjectionParams,
           layer: int) -> Tensor:
    """Gated additive update ``h_orig + alpha_l * T(h_aux_l, f3d)``."""
    term = mul(transform_features(h_aux_l, f3d, ip, layer), ip.alphas[layer])
    if term.shape != h_orig.shape:
        raise ShapeError(
            f"layer {layer}: injection shape {term.shape} does not match hidden {h_orig.shape}")
    return add(h_orig, term)


def injection_terms(h_aux: list[Tensor], f3d: PointFeatures,
                    ip: InjectionParams) -> list[Tensor]:
    """Per-layer additive terms ``alpha_l * T(h_aux_l, f3d)`` for the main head."""
    if len(h_aux) != len(ip.layers):
        raise ShapeError(f"got {len(h_aux)} auxiliary states for {len(ip.layers)} layers")
    return [mul(transform_features(h, f3d, ip, i), ip.alphas[i])
            for i, h in enumerate(h_aux)]


def loss_aux(out: AssistantOutput, eps: np.ndarray) -> Tensor:
    return mse_loss(out.eps_aux, constant(eps))


def total_loss(main: Tensor, aux: Tensor, weight: float) -> Tensor:
    """Combined objective ``main + weight * aux``."""
    if weight < 0.0:
        raise ConfigError(f"auxiliary loss weight must be non-negative, got {weight}")
    return add(main, mul(aux, constant(weight)))


def check_parameter_budget(expert: ExpertParams, assistant: AssistantParams,
                           ip: InjectionParams, ratio_max: float) -> tuple[int, int]:
    """Enforce the side-branch budget; returns (side count, main count)."""
    side = count_parameters(assistant) + count_parameters(ip)
    main = count_parameters(expert)
    if side > ratio_max * main:
        raise ConfigError(
            f"auxiliary branch has {side} parameters, exceeding "
            f"{ratio_max} * {main} = {ratio_max * main:.0f}")
    return side, main
