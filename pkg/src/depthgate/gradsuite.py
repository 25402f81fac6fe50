"""Registry of gradient checks covering every differentiable op.

Each case builds a fresh randomized instance of one op (or one composite
built from many ops) and compares tape gradients against central
differences. Primitives are probed exhaustively; composites probe a
seeded subset of coordinates so the whole suite stays fast. Case seeds
derive from the case name, so runs are reproducible and adding a case
never shifts another case's draws.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import assistant as aux
from .autodiff import (GradCheckReport, Tensor, add, concat, gelu, grad_check,
                       layernorm, linear, matmul, mse_loss, mul, parameter,
                       reduce_max, reduce_sum, slice_rows, softmax, transpose)
from .config import RunConfig
from .datasets import build_sample
from .errors import ConfigError
from .expert import expert_forward, init_expert, loss_main, make_noisy
from .nn import block_forward, init_block, named_parameters
from .pipeline import Policy, forward_loss, preprocess_cloud
from .pointnet import PointFeatures, encode, init_pointnet


def _p(rng, *shape) -> Tensor:
    return parameter(rng.standard_normal(shape))


def _separated(rng, shape, axis) -> np.ndarray:
    """Random values with a pairwise gap along ``axis``.

    A finite-difference probe must not flip which entry is the maximum,
    so spread the values by their rank; order is preserved and the
    minimum gap (0.01) dwarfs the probe step.
    """
    base = rng.standard_normal(shape)
    ranks = np.argsort(np.argsort(base, axis=axis), axis=axis)
    return base + 0.01 * ranks


def _params_of(obj) -> list[Tensor]:
    return [t for _, t in named_parameters(obj)]


# each builder: rng -> (op called as op(*inputs), inputs)

def _case_add(rng):
    return add, [_p(rng, 5, 7), _p(rng, 5, 7)]


def _case_add_broadcast(rng):
    return add, [_p(rng, 4, 6), _p(rng, 6)]


def _case_mul(rng):
    return mul, [_p(rng, 5, 7), _p(rng, 5, 7)]


def _case_mul_broadcast(rng):
    return mul, [_p(rng, 3, 4, 5), _p(rng, 5)]


def _case_matmul(rng):
    return matmul, [_p(rng, 5, 4), _p(rng, 4, 6)]


def _case_transpose(rng):
    x = _p(rng, 3, 8)
    return (lambda t: matmul(transpose(t), t)), [x]


def _case_linear(rng):
    return linear, [_p(rng, 6, 5), _p(rng, 5, 4), _p(rng, 4)]


def _case_gelu(rng):
    return gelu, [_p(rng, 4, 9)]


def _case_softmax(rng):
    x = _p(rng, 5, 6)
    w = _p(rng, 5, 6)
    # weight the rows so the check sees more than the constant row sums
    return (lambda a, b: mul(softmax(a), b)), [x, w]


def _case_layernorm(rng):
    return layernorm, [_p(rng, 4, 8), _p(rng, 8), _p(rng, 8)]


def _case_concat(rng):
    parts = [_p(rng, 2, 4), _p(rng, 3, 4), _p(rng, 1, 4)]
    return (lambda *ps: gelu(concat(list(ps), axis=0))), parts


def _case_slice_rows(rng):
    x = _p(rng, 8, 5)
    return (lambda t: gelu(slice_rows(t, 2, 6))), [x]


def _case_reduce_max(rng):
    x = parameter(_separated(rng, (6, 7), axis=1))
    return (lambda t: reduce_max(t, axis=1)), [x]


def _case_reduce_max_axis0(rng):
    x = parameter(_separated(rng, (6, 7), axis=0))
    return (lambda t: reduce_max(t, axis=0)), [x]


def _case_reduce_sum(rng):
    x = _p(rng, 6, 7)
    return (lambda t: gelu(reduce_sum(t))), [x]


def _case_mse(rng):
    return mse_loss, [_p(rng, 5, 4), _p(rng, 5, 4)]


def _case_block(rng):
    d, hidden, tokens = 8, 16, 6
    bp = init_block(rng, d, hidden)
    x = _p(rng, tokens, d)
    inputs = [x] + _params_of(bp)
    return (lambda *_: block_forward(x, bp)[0]), inputs


def _case_pointnet(rng):
    params = init_pointnet((3, 6, 8), rng)
    pts = _p(rng, 10, 3)
    inputs = [pts] + _params_of(params)

    def op(*_):
        f = encode(pts, params)
        return add(reduce_sum(f.pooled), reduce_sum(f.per_point))

    return op, inputs


def _tiny_expert(rng_seed: int):
    return init_expert(image_size=8, patch_size=4, d_main=16, n_layers=2,
                       horizon=3, d_action=4, d_state=4, k_steps=4,
                       beta_start=0.1, beta_end=0.7, mlp_ratio=2, seed=rng_seed)


def _case_expert_loss(rng):
    p = _tiny_expert(int(rng.integers(1 << 31)))
    image = rng.standard_normal((8, 8))
    state = rng.standard_normal(4)
    actions = rng.standard_normal((3, 4))
    eps = rng.standard_normal((3, 4))
    t = int(rng.integers(1, 5))
    a_t = make_noisy(actions, t, eps, p.schedule)
    inputs = _params_of(p)
    return (lambda *_: loss_main(expert_forward(image, state, a_t, t, p), eps)), inputs


def _tiny_assistant(rng_seed: int):
    return aux.init_assistant(d_aux=8, d_main=16, n_points=4, feature_dim=6,
                              horizon=3, d_action=4, d_state=4, applications=2,
                              k_aux=2, k_main=4, beta_start=0.1, beta_end=0.7,
                              hidden=12, seed=rng_seed)


def _rand_features(rng, n_points=4, feature_dim=6) -> PointFeatures:
    return PointFeatures(per_point=_p(rng, n_points, feature_dim),
                         pooled=_p(rng, feature_dim))


def _case_assistant_loss(rng):
    p = _tiny_assistant(int(rng.integers(1 << 31)))
    f3d = _rand_features(rng)
    state = rng.standard_normal(4)
    a_t = rng.standard_normal((3, 4))
    eps = rng.standard_normal((3, 4))
    t_aux = int(rng.integers(1, 3))
    inputs = [f3d.per_point, f3d.pooled] + _params_of(p)

    def op(*_):
        return aux.loss_aux(aux.assistant_forward(f3d, state, a_t, t_aux, p), eps)

    return op, inputs


def _tiny_injection(rng, mode: str):
    ip = aux.init_injection(mode=mode, n_layers=2, d_aux=8, d_main=16,
                            feature_dim=6, hidden=6, attn_dim=8,
                            alpha_init=float(rng.standard_normal()),
                            seed=int(rng.integers(1 << 31)))
    return ip


def _case_bridge(rng, mode: str):
    ip = _tiny_injection(rng, mode)
    f3d = _rand_features(rng)
    h_aux = _p(rng, 8, 8)  # 4 point + 1 state + 3 action tokens
    inputs = [h_aux, f3d.per_point, f3d.pooled] + _params_of(ip)
    return (lambda *_: aux.transform_features(h_aux, f3d, ip, 1)), inputs


def _case_bridge_projection(rng):
    return _case_bridge(rng, "projection")


def _case_bridge_cross_attention(rng):
    return _case_bridge(rng, "cross_attention")


def _case_injection_gate(rng):
    ip = _tiny_injection(rng, "projection")
    # the gate must pass gradient at exactly zero, its initialization value
    ip.alphas[0].data[...] = 0.0
    f3d = _rand_features(rng)
    h_orig = _p(rng, 8, 16)
    h_aux = _p(rng, 8, 8)
    inputs = [h_orig, h_aux, f3d.per_point, f3d.pooled] + _params_of(ip)
    return (lambda *_: aux.inject(h_orig, h_aux, f3d, ip, 0)), inputs


def _tiny_config(mode: str) -> RunConfig:
    cfg = RunConfig(
        n_train=4, n_eval=2, image_size=8, patch_size=4, n_points=4,
        d_main=16, n_layers=2, horizon=3, action_dim=4, state_dim=4,
        encoder_dims=(6.0, 8.0), k_steps=4, k_aux=2, d_aux=8, aux_hidden=12,
        injection_mode=mode, injection_hidden=6, injection_dim=8,
        mlp_ratio=2, steps=1, batch_size=2, eval_subset=2)
    return cfg.validate()


def _tiny_policy(cfg: RunConfig, seed: int) -> Policy:
    # assembled directly: these shrunken dims need no budget enforcement
    expert = init_expert(image_size=cfg.image_size, patch_size=cfg.patch_size,
                         d_main=cfg.d_main, n_layers=cfg.n_layers,
                         horizon=cfg.horizon, d_action=cfg.action_dim,
                         d_state=cfg.state_dim, k_steps=cfg.k_steps,
                         beta_start=cfg.beta_start, beta_end=cfg.beta_end,
                         mlp_ratio=cfg.mlp_ratio, seed=seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    pointnet = init_pointnet(cfg.pointnet_dims, rng)
    assistant = aux.init_assistant(
        d_aux=cfg.d_aux, d_main=cfg.d_main, n_points=cfg.n_points,
        feature_dim=cfg.feature_dim, horizon=cfg.horizon, d_action=cfg.action_dim,
        d_state=cfg.state_dim, applications=cfg.n_layers, k_aux=cfg.k_aux,
        k_main=cfg.k_steps, beta_start=cfg.beta_start, beta_end=cfg.beta_end,
        hidden=cfg.aux_hidden, seed=seed)
    injection = aux.init_injection(
        mode=cfg.injection_mode, n_layers=cfg.n_layers, d_aux=cfg.d_aux,
        d_main=cfg.d_main, feature_dim=cfg.feature_dim, hidden=cfg.injection_hidden,
        attn_dim=cfg.injection_dim, alpha_init=0.05, seed=seed)
    return Policy(cfg=cfg, expert=expert, pointnet=pointnet, assistant=assistant,
                  injection=injection)


def _case_pipeline(rng, mode: str):
    cfg = _tiny_config(mode)
    seed = int(rng.integers(1 << 31))
    policy = _tiny_policy(cfg, seed)
    sample = build_sample(cfg, "train", int(rng.integers(cfg.n_train)))
    cloud = preprocess_cloud(sample, cfg)
    t = int(rng.integers(1, cfg.k_steps + 1))
    eps = rng.standard_normal((cfg.horizon, cfg.action_dim))
    inputs = ([t for _, t in named_parameters(policy.expert)]
              + [t for _, t in named_parameters(policy.pointnet)]
              + [t for _, t in named_parameters(policy.assistant)]
              + [t for _, t in named_parameters(policy.injection)])
    # Zero-init biases plus blank image patches put layernorm inputs exactly
    # on the constant manifold, where curvature ~1/sqrt(eps) breaks finite
    # differences.  Jitter to a generic point before probing.
    for tensor in inputs:
        tensor.data += 0.05 * rng.standard_normal(tensor.data.shape)

    def op(*_):
        return forward_loss(policy, sample, t, eps, cloud=cloud).total

    return op, inputs


def _case_pipeline_projection(rng):
    return _case_pipeline(rng, "projection")


def _case_pipeline_cross_attention(rng):
    return _case_pipeline(rng, "cross_attention")


@dataclass(frozen=True)
class GradCase:
    name: str
    build: Callable
    max_entries: int | None = None


CASES: tuple[GradCase, ...] = (
    GradCase("add", _case_add),
    GradCase("add_broadcast", _case_add_broadcast),
    GradCase("mul", _case_mul),
    GradCase("mul_broadcast", _case_mul_broadcast),
    GradCase("matmul", _case_matmul),
    GradCase("transpose", _case_transpose),
    GradCase("linear", _case_linear),
    GradCase("gelu", _case_gelu),
    GradCase("softmax", _case_softmax),
    GradCase("layernorm", _case_layernorm),
    GradCase("concat", _case_concat),
    GradCase("slice_rows", _case_slice_rows),
    GradCase("reduce_max", _case_reduce_max),
    GradCase("reduce_max_axis0", _case_reduce_max_axis0),
    GradCase("reduce_sum", _case_reduce_sum),
    GradCase("mse_loss", _case_mse),
    GradCase("block", _case_block, max_entries=24),
    GradCase("pointnet_encode", _case_pointnet, max_entries=24),
    GradCase("expert_loss", _case_expert_loss, max_entries=24),
    GradCase("assistant_loss", _case_assistant_loss, max_entries=24),
    GradCase("bridge_projection", _case_bridge_projection, max_entries=24),
    GradCase("bridge_cross_attention", _case_bridge_cross_attention, max_entries=24),
    GradCase("injection_gate", _case_injection_gate, max_entries=24),
    GradCase("pipeline_projection", _case_pipeline_projection, max_entries=16),
    GradCase("pipeline_cross_attention", _case_pipeline_cross_attention,
             max_entries=16),
)

_BY_NAME = {c.name: c for c in CASES}


@dataclass
class CaseResult:
    name: str
    instances: int
    max_rel_err: float
    passed: bool


def case_names() -> list[str]:
    return [c.name for c in CASES]


def run_case(name: str, instances: int = 20, step: float = 1e-5,
             tol: float = 1e-4) -> CaseResult:
    case = _BY_NAME.get(name)
    if case is None:
        raise ConfigError(f"unknown gradient case {name!r}")
    worst = 0.0
    base = zlib.crc32(case.name.encode("utf-8"))
    for i in range(instances):
        rng = np.random.default_rng(np.random.SeedSequence([base, i]))
        op, inputs = case.build(rng)
        report: GradCheckReport = grad_check(op, inputs, step=step, tol=tol,
                                             max_entries=case.max_entries, seed=i)
        worst = max(worst, report.max_rel_err)
    return CaseResult(name=name, instances=instances, max_rel_err=worst,
                      passed=worst <= tol)


def run_suite(names: list[str] | None = None, instances: int = 20,
              step: float = 1e-5, tol: float = 1e-4) -> list[CaseResult]:
    return [run_case(n, instances=instances, step=step, tol=tol)
            for n in (names if names is not None else case_names())]
