"""Transformer denoiser over action chunks, conditioned on a 2-d raster.

Token layout is fixed and documented here once: first the image patch
tokens in row-major patch order, then a single proprioceptive state
token, then the H action tokens. The sinusoidal timestep code is added to
the action tokens only. Layers may receive an additive injection after
their block; absent injections and all-zero injections are exactly the
same computation.

Training follows the usual epsilon-prediction objective: corrupt a clean
chunk A to ``sqrt(abar_t) A + sqrt(1 - abar_t) eps`` and regress eps.
Sampling is the deterministic DDIM recursion from t = K down to 1, so a
sampled chunk is a pure function of (parameters, observation, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, add, concat, constant, layernorm, linear, mse_loss, slice_rows
from .errors import ConfigError, ShapeError
from .nn import (
    BlockParams,
    LayerNormParams,
    LinearParams,
    block_forward,
    init_block,
    init_layernorm,
    init_linear,
    sinusoidal_embedding,
)

__all__ = [
    "DiffusionSchedule",
    "ExpertParams",
    "ExpertOutput",
    "init_expert",
    "expert_forward",
    "patchify",
    "make_noisy",
    "loss_main",
    "sample_actions",
]


@dataclass(frozen=True)
class DiffusionSchedule:
    """Beta schedule and its cumulative alpha products for K steps."""

    betas: np.ndarray
    alpha_bar: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64)
        if b.ndim != 1 or b.size == 0:
            raise ConfigError(f"schedule needs a 1-d non-empty beta array, got shape {b.shape}")
        if np.any(b <= 0.0) or np.any(b >= 1.0):
            raise ConfigError("schedule values must lie strictly inside (0, 1)")
        expect = np.cumprod(1.0 - b)
        if not np.allclose(self.alpha_bar, expect, rtol=0.0, atol=1e-15):
            raise ConfigError("alpha_bar is not the cumulative product of (1 - beta)")
        if np.any(np.diff(self.alpha_bar) >= 0.0):
            raise ConfigError("alpha_bar must be strictly decreasing")

    @property
    def k(self) -> int:
        return self.betas.size

    @classmethod
    def linear(cls, k: int, beta_start: float, beta_end: float) -> "DiffusionSchedule":
        if k < 1:
            raise ConfigError(f"schedule needs at least one step, got k={k}")
        betas = np.linspace(beta_start, beta_end, k)
        return cls(betas=betas, alpha_bar=np.cumprod(1.0 - betas))

    def abar(self, t: int) -> float:
        """alpha_bar at one-based step t, with abar(0) = 1 by convention."""
        if not 0 <= t <= self.k:
            raise ConfigError(f"timestep {t} outside [0, {self.k}]")
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])


@dataclass
class ExpertParams:
    patch_embed: LinearParams
    state_embed: LinearParams
    action_embed: LinearParams
    blocks: list[BlockParams]
    final_ln: LayerNormParams
    head: LinearParams
    schedule: DiffusionSchedule
    image_size: int
    patch_size: int
    d_main: int
    horizon: int
    d_action: int
    d_state: int

    @property
    def n_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def n_tokens(self) -> int:
        return self.n_patches + 1 + self.horizon


@dataclass
class ExpertOutput:
    eps_hat: Tensor
    hidden: list[Tensor]
    attention: list[Tensor] = field(default_factory=list)


def init_expert(*, image_size: int, patch_size: int, d_main: int, n_layers: int,
                horizon: int, d_action: int, d_state: int, k_steps: int,
                beta_start: float, beta_end: float, mlp_ratio: int = 4,
                seed: int = 0) -> ExpertParams:
    if image_size % patch_size != 0:
        raise ConfigError(f"image size {image_size} not divisible by patch size {patch_size}")
    if n_layers < 1 or horizon < 1:
        raise ConfigError(f"need at least one layer and one action step, "
                          f"got {n_layers} and {horizon}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    return ExpertParams(
        patch_embed=init_linear(rng, patch_size * patch_size, d_main),
        state_embed=init_linear(rng, d_state, d_main),
        action_embed=init_linear(rng, d_action, d_main),
        blocks=[init_block(rng, d_main, mlp_ratio * d_main) for _ in range(n_layers)],
        final_ln=init_layernorm(d_main),
        head=init_linear(rng, d_main, d_action),
        schedule=DiffusionSchedule.linear(k_steps, beta_start, beta_end),
        image_size=image_size,
        patch_size=patch_size,
        d_main=d_main,
        horizon=horizon,
        d_action=d_action,
        d_state=d_state,
    )


def patchify(image: np.ndarray, patch: int) -> np.ndarray:
    """[S, S] raster to [P, patch*patch] rows, patches in row-major order."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] != img.shape[1]:
        raise ShapeError(f"expected a square raster, got shape {img.shape}")
    s = img.shape[0]
    if s % patch != 0:
        raise ShapeError(f"raster size {s} not divisible by patch size {patch}")
    g = s // patch
    return img.reshape(g, patch, g, patch).transpose(0, 2, 1, 3).reshape(g * g, patch * patch)


def expert_forward(image2d: np.ndarray, state: np.ndarray, a_t, t: int,
                   p: ExpertParams, injections: list[Tensor] | None = None) -> ExpertOutput:
    """Predict the corruption noise of ``a_t`` at step ``t``.

    ``injections`` is either None or one additive [n_tokens, d_main]
    tensor per layer, applied after that layer's block. Passing None and
    passing all zeros produce bit-identical outputs.
    """
    if not 1 <= t <= p.schedule.k:
        raise ConfigError(f"timestep {t} outside schedule range [1, {p.schedule.k}]")
    state = np.asarray(state, dtype=np.float64)
    if state.shape != (p.d_state,):
        raise ShapeError(f"state shape {state.shape}, expected ({p.d_state},)")
    a_t = a_t if isinstance(a_t, Tensor) else constant(a_t)
    if a_t.shape != (p.horizon, p.d_action):
        raise ShapeError(f"action shape {a_t.shape}, expected ({p.horizon}, {p.d_action})")
    if injections is not None and len(injections) != len(p.blocks):
        raise ShapeError(f"got {len(injections)} injections for {len(p.blocks)} layers")

    patches = linear(constant(patchify(image2d, p.patch_size)),
                     p.patch_embed.w, p.patch_embed.b)
    if patches.shape[0] != p.n_patches:
        raise ShapeError(f"raster yields {patches.shape[0]} patches, expected {p.n_patches}")
    state_tok = linear(constant(state[None, :]), p.state_embed.w, p.state_embed.b)
    action_tok = add(linear(a_t, p.action_embed.w, p.action_embed.b),
                     constant(sinusoidal_embedding(t, p.d_main)))
    x = concat([patches, state_tok, action_tok], axis=0)

    hidden: list[Tensor] = []
    attention: list[Tensor] = []
    for i, bp in enumerate(p.blocks):
        x, probs = block_forward(x, bp)
        if injections is not None:
            inj = injections[i]
            if inj.shape != x.shape:
                raise ShapeError(
                    f"injection for layer {i} has shape {inj.shape}, expected {x.shape}")
            x = add(x, inj)
        hidden.append(x)
        attention.append(probs)

    y = slice_rows(x, p.n_patches + 1, p.n_tokens)
    y = layernorm(y, p.final_ln.gain, p.final_ln.bias)
    y = linear(y, p.head.w, p.head.b)
    return ExpertOutput(eps_hat=y, hidden=hidden, attention=attention)


def make_noisy(actions: np.ndarray, t: int, eps: np.ndarray,
               schedule: DiffusionSchedule) -> np.ndarray:
    """Forward corruption: sqrt(abar_t) A + sqrt(1 - abar_t) eps."""
    ab = schedule.abar(t)
    if t == 0:
        raise ConfigError("corruption starts at t=1")
    return np.sqrt(ab) * np.asarray(actions) + np.sqrt(1.0 - ab) * np.asarray(eps)


def loss_main(out: ExpertOutput, eps: np.ndarray) -> Tensor:
    return mse_loss(out.eps_hat, constant(eps))


def sample_actions(image2d: np.ndarray, state: np.ndarray, p: ExpertParams,
                   injections_provider=None, seed: int = 0, eps_fn=None) -> np.ndarray:
    """Deterministic DDIM sampling from t = K down to 1.

    The only randomness is the seeded initial draw. ``injections_provider``
    maps (current chunk, t) to per-layer additive tensors and is the sole
    channel through which auxiliary machinery can influence the result.
    ``eps_fn`` overrides the denoiser entirely (testing hook).
    """
    sch = p.schedule
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((p.horizon, p.d_action))
    for t in range(sch.k, 0, -1):
        if eps_fn is not None:
            eps_hat = np.asarray(eps_fn(x, t), dtype=np.float64)
        else:
            inj = injections_provider(x, t) if injections_provider is not None else None
            eps_hat = expert_forward(image2d, state, constant(x), t, p, injections=inj).eps_hat.data
        ab_t = sch.abar(t)
        ab_prev = sch.abar(t - 1)
        x0 = (x - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
        x = np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev) * eps_hat
    return x
