"""End-to-end wiring from raw samples to losses and sampled actions.

Everything stateful about a run lives in one Policy value: the main
denoising head, and optionally the point encoder, the auxiliary head and
the gated bridge between them. Construction is fully determined by the
config; two policies built from equal configs are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assistant import (AssistantOutput, AssistantParams, InjectionParams,
                        assistant_forward, check_parameter_budget, init_assistant,
                        init_injection, injection_terms, loss_aux, map_timestep,
                        total_loss)
from .autodiff import Tensor, constant
from .config import RunConfig
from .datasets import TrajectorySample, split_code
from .errors import InsufficientPointsError
from .expert import (ExpertOutput, ExpertParams, expert_forward, init_expert,
                     loss_main, make_noisy, sample_actions)
from .geometry import (PointCloud, backproject, filter_outliers, merge_views,
                       normalize, sample_fps, sample_uniform)
from .nn import named_parameters
from .pointnet import PointFeatures, PointNetParams, encode, init_pointnet


@dataclass
class Policy:
    cfg: RunConfig
    expert: ExpertParams
    pointnet: PointNetParams | None
    assistant: AssistantParams | None
    injection: InjectionParams | None

    @property
    def uses_injection(self) -> bool:
        return self.injection is not None


def build_policy(cfg: RunConfig) -> Policy:
    cfg.validate()
    expert = init_expert(
        image_size=cfg.image_size, patch_size=cfg.patch_size, d_main=cfg.d_main,
        n_layers=cfg.n_layers, horizon=cfg.horizon, d_action=cfg.action_dim,
        d_state=cfg.state_dim, k_steps=cfg.k_steps, beta_start=cfg.beta_start,
        beta_end=cfg.beta_end, mlp_ratio=cfg.mlp_ratio, seed=cfg.seed)
    if cfg.no_injection:
        return Policy(cfg=cfg, expert=expert, pointnet=None, assistant=None,
                      injection=None)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    pointnet = init_pointnet(cfg.pointnet_dims, rng)
    assistant = init_assistant(
        d_aux=cfg.d_aux, d_main=cfg.d_main, n_points=cfg.n_points,
        feature_dim=cfg.feature_dim, horizon=cfg.horizon, d_action=cfg.action_dim,
        d_state=cfg.state_dim, applications=cfg.n_layers, k_aux=cfg.k_aux,
        k_main=cfg.k_steps, beta_start=cfg.beta_start, beta_end=cfg.beta_end,
        hidden=cfg.aux_hidden, seed=cfg.seed)
    injection = init_injection(
        mode=cfg.injection_mode, n_layers=cfg.n_layers, d_aux=cfg.d_aux,
        d_main=cfg.d_main, feature_dim=cfg.feature_dim, hidden=cfg.injection_hidden,
        attn_dim=cfg.injection_dim, alpha_init=cfg.alpha_init, seed=cfg.seed)
    check_parameter_budget(expert, assistant, injection, cfg.ratio_max)
    return Policy(cfg=cfg, expert=expert, pointnet=pointnet, assistant=assistant,
                  injection=injection)


def named_policy_parameters(policy: Policy) -> list[tuple[str, Tensor]]:
    """Deterministically ordered (name, tensor) pairs for every live part."""
    pairs = list(named_parameters(policy.expert, "expert"))
    if policy.uses_injection:
        pairs += list(named_parameters(policy.pointnet, "pointnet"))
        pairs += list(named_parameters(policy.assistant, "assistant"))
        pairs += list(named_parameters(policy.injection, "injection"))
    return pairs


def preprocess_cloud(sample: TrajectorySample, cfg: RunConfig) -> PointCloud:
    """Backproject, merge, clean, normalize and subsample one sample's views."""
    sampler = "uniform" if cfg.random_sampler else cfg.sampler
    cloud = merge_views([backproject(dm, view=v)
                         for v, dm in enumerate(sample.depth_maps)])
    if cfg.filter_enabled and len(cloud) > cfg.filter_k:
        cloud = filter_outliers(cloud, k=cfg.filter_k, alpha=cfg.filter_alpha)
    if cfg.normalize_enabled:
        cloud = normalize(cloud)
    if len(cloud) < cfg.n_points:
        raise InsufficientPointsError(
            f"sample {sample.index}: {len(cloud)} points left, need {cfg.n_points}")
    if sampler == "fps":
        sub, _ = sample_fps(cloud, cfg.n_points, seed_index=cfg.fps_seed_index)
    else:
        seed = np.random.SeedSequence(
            [cfg.seed, 40, split_code(sample.split), sample.index])
        sub, _ = sample_uniform(cloud, cfg.n_points, seed)
    return sub


def encode_cloud(cloud: PointCloud, policy: Policy) -> PointFeatures:
    return encode(cloud.points, policy.pointnet)


@dataclass
class LossBreakdown:
    total: Tensor
    main: Tensor
    aux: Tensor | None
    expert_out: ExpertOutput
    assistant_out: AssistantOutput | None


def forward_loss(policy: Policy, sample: TrajectorySample, t: int,
                 eps: np.ndarray, f3d: PointFeatures | None = None,
                 cloud: PointCloud | None = None) -> LossBreakdown:
    """One training forward pass at corruption step ``t`` with noise ``eps``.

    Both heads see the same corrupted chunk; the auxiliary head sees it at
    its compressed timestep. Preprocessed geometry never changes, so
    callers that loop can pass a cached ``cloud`` (encoded here, under the
    current encoder weights) or a ready ``f3d``.
    """
    cfg = policy.cfg
    a_t = make_noisy(sample.actions, t, eps, policy.expert.schedule)
    if not policy.uses_injection:
        out = expert_forward(sample.image2d, sample.state, a_t, t, policy.expert)
        main = loss_main(out, eps)
        return LossBreakdown(total=main, main=main, aux=None, expert_out=out,
                             assistant_out=None)
    if f3d is None:
        if cloud is None:
            cloud = preprocess_cloud(sample, cfg)
        f3d = encode_cloud(cloud, policy)
    t_aux = map_timestep(t, cfg.k_steps, cfg.k_aux)
    aux_out = assistant_forward(f3d, sample.state, constant(a_t), t_aux,
                                policy.assistant)
    terms = injection_terms(aux_out.h_aux, f3d, policy.injection)
    out = expert_forward(sample.image2d, sample.state, a_t, t, policy.expert,
                         injections=terms)
    main = loss_main(out, eps)
    aux = loss_aux(aux_out, eps)
    weight = 0.0 if cfg.no_aux_loss else cfg.lambda_aux
    return LossBreakdown(total=total_loss(main, aux, weight), main=main, aux=aux,
                         expert_out=out, assistant_out=aux_out)


def make_provider(policy: Policy, f3d: PointFeatures, state: np.ndarray):
    """Close over one sample's 3-d features for use during sampling."""
    cfg = policy.cfg

    def provider(x: np.ndarray, t: int) -> list[Tensor]:
        t_aux = map_timestep(t, cfg.k_steps, cfg.k_aux)
        aux_out = assistant_forward(f3d, state, constant(np.asarray(x)), t_aux,
                                    policy.assistant)
        return injection_terms(aux_out.h_aux, f3d, policy.injection)

    return provider


def predict_actions(policy: Policy, sample: TrajectorySample, seed,
                    cloud: PointCloud | None = None) -> np.ndarray:
    """Sample an action chunk for one held-out sample."""
    provider = None
    if policy.uses_injection:
        if cloud is None:
            cloud = preprocess_cloud(sample, policy.cfg)
        provider = make_provider(policy, encode_cloud(cloud, policy), sample.state)
    return sample_actions(sample.image2d, sample.state, policy.expert,
                          injections_provider=provider, seed=seed)
