"""Training, evaluation and ablation drivers.

Two files per run carry the results. ``metrics.jsonl`` holds one JSON
record per evaluation point and is byte-identical across reruns of the
same config on the same machine; anything wall-clock goes to
``timing.jsonl`` instead so determinism of the metrics stream is never
polluted. A binary checkpoint is written alongside every record.

Randomness budget of a run, all derived from the master seed:
    [seed, 20]           training stream: per step, the batch indices
                         first, then one (t, eps) pair per sample
    [seed, 30, index]    sampling noise for held-out sample ``index``
Dataset streams are documented in the dataset module.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import AdamState, Tape, Tensor, add, adam_step, constant, mul
from .checkpoint import CheckpointData, load_checkpoint, restore_into, save_checkpoint
from .config import RunConfig, config_from_ini, config_to_ini
from .datasets import (TrajectorySample, depth_floor, load_dataset,
                       make_ambiguity_dataset)
from .errors import ConfigError, ParseError
from .pipeline import (Policy, build_policy, forward_loss, named_policy_parameters,
                       predict_actions, preprocess_cloud)

ABLATION_VARIANTS = ("full", "no_injection", "no_aux_loss")


def _finite_or_none(x) -> float | None:
    x = float(x)
    return x if np.isfinite(x) else None


def _append_json_line(path: Path, record: dict) -> None:
    line = json.dumps(record, sort_keys=True, allow_nan=False)
    with open(path, "a", encoding="utf-8") as f:
        f.write(line + "\n")
        f.flush()


def read_metrics(path: str | Path) -> list[dict]:
    """Load a metrics stream, discarding a torn trailing line if present."""
    p = Path(path)
    if not p.exists():
        raise ParseError(f"metrics file not found: {p}")
    raw = p.read_bytes().decode("utf-8")
    records = []
    lines = raw.split("\n")
    complete, tail = lines[:-1], lines[-1]
    for i, line in enumerate(complete):
        if not line:
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as e:
            raise ParseError(f"{p}: bad record on line {i + 1}: {e}") from None
    if tail:
        try:
            records.append(json.loads(tail))
        except json.JSONDecodeError:
            pass  # torn write from an interrupted run; drop it
    return records


@dataclass
class EvalResult:
    n: int
    mse: float
    mse_depth: float
    per_sample: list[dict]


def evaluate(policy: Policy, samples: list[TrajectorySample],
             subset: int | None = None, clouds: dict | None = None) -> EvalResult:
    """Score sampled chunks against ground truth actions.

    ``mse`` averages over every action coordinate; ``mse_depth`` over the
    depth offset column only, which is the coordinate the flat 2-d view
    cannot disambiguate. Each sample draws its own sampling seed from its
    index, so scores do not depend on evaluation order or subset size.
    """
    if subset is not None:
        samples = samples[:subset]
    if not samples:
        raise ConfigError("cannot evaluate on an empty sample list")
    per = []
    se_sum = 0.0
    sed_sum = 0.0
    for s in samples:
        seed = np.random.SeedSequence([policy.cfg.seed, 30, s.index])
        cloud = clouds.get(s.index) if clouds is not None else None
        pred = predict_actions(policy, s, seed, cloud=cloud)
        err = pred - s.actions
        mse = float(np.mean(err * err))
        mse_depth = float(np.mean(err[:, 2] * err[:, 2]))
        per.append({"index": s.index, "mse": mse, "mse_depth": mse_depth})
        se_sum += mse
        sed_sum += mse_depth
    n = len(samples)
    return EvalResult(n=n, mse=se_sum / n, mse_depth=sed_sum / n, per_sample=per)


@dataclass
class TrainResult:
    policy: Policy
    run_dir: Path
    records: list[dict]
    final_step: int
    aborted: bool

    @property
    def metrics_path(self) -> Path:
        return self.run_dir / "metrics.jsonl"


def _load_or_build_data(cfg: RunConfig) -> tuple[list[TrajectorySample],
                                                 list[TrajectorySample]]:
    if cfg.data_dir:
        root = Path(cfg.data_dir)
        return (load_dataset(root / "train"), load_dataset(root / "eval"))
    return (make_ambiguity_dataset(cfg, "train"), make_ambiguity_dataset(cfg, "eval"))


def _build_clouds(samples, cfg) -> dict:
    return {s.index: preprocess_cloud(s, cfg) for s in samples}


def train(cfg: RunConfig, run_dir: str | Path | None = None, data=None,
          _loss_hook=None) -> TrainResult:
    """Full optimization loop with periodic evaluation and checkpoints.

    ``data`` is an optional (train_samples, eval_samples) pair, letting
    ablation variants share one generated dataset. A non-finite batch loss
    aborts the run without applying that step's update, leaving the last
    record's checkpoint as the rollback point and appending an event
    record so the abort is visible in the metrics stream.
    """
    cfg.validate()
    out = Path(run_dir) if run_dir is not None else Path(cfg.run_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(config_to_ini(cfg), encoding="utf-8")
    metrics_path = out / "metrics.jsonl"
    timing_path = out / "timing.jsonl"
    metrics_path.write_text("", encoding="utf-8")
    timing_path.write_text("", encoding="utf-8")

    train_samples, eval_samples = data if data is not None else _load_or_build_data(cfg)
    if not train_samples:
        raise ConfigError("training split is empty")
    policy = build_policy(cfg)
    params = named_policy_parameters(policy)
    states = [AdamState.for_param(t) for _, t in params]
    train_clouds = _build_clouds(train_samples, cfg) if policy.uses_injection else {}
    eval_clouds = (_build_clouds(eval_samples[:cfg.eval_subset], cfg)
                   if policy.uses_injection else None)

    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 20]))
    t0 = time.monotonic()
    records: list[dict] = []
    sums = {"total": 0.0, "main": 0.0, "aux": 0.0, "n": 0}

    def alphas() -> list[float]:
        if not policy.uses_injection:
            return []
        return [float(a.data) for a in policy.injection.alphas]

    def write_record(step: int) -> None:
        ev = evaluate(policy, eval_samples, subset=cfg.eval_subset, clouds=eval_clouds)
        n = sums["n"]
        rec = {
            "step": step,
            "loss_total": _finite_or_none(sums["total"] / n) if n else None,
            "loss_main": _finite_or_none(sums["main"] / n) if n else None,
            "loss_aux": (_finite_or_none(sums["aux"] / n)
                         if n and policy.uses_injection else None),
            "eval_mse": _finite_or_none(ev.mse),
            "eval_mse_depth": _finite_or_none(ev.mse_depth),
            "eval_n": ev.n,
            "alphas": alphas(),
        }
        records.append(rec)
        _append_json_line(metrics_path, rec)
        _append_json_line(timing_path, {"step": step,
                                        "elapsed_s": time.monotonic() - t0})
        ckpt_tensors = ([("param." + name, t) for name, t in params]
                        + [("adam_m." + name, st.m) for (name, _), st in zip(params, states)]
                        + [("adam_v." + name, st.v) for (name, _), st in zip(params, states)])
        save_checkpoint(out / f"ckpt_{step:06d}.bin", step, config_to_ini(cfg),
                        ckpt_tensors)
        sums.update(total=0.0, main=0.0, aux=0.0, n=0)

    write_record(0)
    aborted = False
    final_step = 0
    for step in range(1, cfg.steps + 1):
        indices = rng.integers(0, len(train_samples), size=cfg.batch_size)
        step_main = 0.0
        step_aux = 0.0
        with Tape() as tape:
            totals: list[Tensor] = []
            for idx in indices:
                s = train_samples[int(idx)]
                t = int(rng.integers(1, cfg.k_steps + 1))
                eps = rng.standard_normal((cfg.horizon, cfg.action_dim))
                lb = forward_loss(policy, s, t, eps,
                                  cloud=train_clouds.get(s.index))
                totals.append(lb.total)
                step_main += float(lb.main.data)
                if lb.aux is not None:
                    step_aux += float(lb.aux.data)
            batch_total = totals[0]
            for extra in totals[1:]:
                batch_total = add(batch_total, extra)
            batch_total = mul(batch_total, constant(1.0 / len(totals)))
            loss_val = float(batch_total.data)
            if _loss_hook is not None:
                loss_val = float(_loss_hook(step, loss_val))
            if not np.isfinite(loss_val):
                rec = {"step": step, "event": "non_finite_loss"}
                records.append(rec)
                _append_json_line(metrics_path, rec)
                aborted = True
                break
            tape.backward(batch_total)
        for (_, p), st in zip(params, states):
            adam_step(p, st, lr=cfg.lr, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2,
                      eps=cfg.adam_eps)
        sums["total"] += loss_val
        sums["main"] += step_main / len(totals)
        sums["aux"] += step_aux / len(totals)
        sums["n"] += 1
        final_step = step
        if step % cfg.eval_every == 0 or step == cfg.steps:
            write_record(step)
    return TrainResult(policy=policy, run_dir=out, records=records,
                       final_step=final_step, aborted=aborted)


def restore_policy(path: str | Path) -> tuple[Policy, int, CheckpointData]:
    """Rebuild a policy from a checkpoint; parameters match bit for bit."""
    ck = load_checkpoint(path)
    cfg = config_from_ini(ck.config_text)
    policy = build_policy(cfg)
    stored = {name[len("param."):]: arr for name, arr in ck.tensors.items()
              if name.startswith("param.")}
    restore_into(named_policy_parameters(policy), stored)
    return policy, ck.step, ck


def _variant_config(cfg: RunConfig, variant: str) -> RunConfig:
    if variant not in ABLATION_VARIANTS:
        raise ConfigError(f"unknown ablation variant {variant!r}; "
                          f"expected one of {ABLATION_VARIANTS}")
    d = cfg.as_dict()
    d["no_injection"] = variant == "no_injection"
    d["no_aux_loss"] = variant == "no_aux_loss"
    return RunConfig(**d).validate()


def ablate(cfg: RunConfig, run_root: str | Path,
           variants: tuple[str, ...] = ABLATION_VARIANTS) -> dict:
    """Train every variant on one shared dataset and tabulate the results.

    The 2-d-only variant is the reference point: its depth error should
    sit at the ambiguity floor, and the full model should cut it down.
    """
    root = Path(run_root)
    root.mkdir(parents=True, exist_ok=True)
    data = _load_or_build_data(cfg)
    floor = depth_floor(cfg)
    summary: dict = {"depth_floor": floor, "variants": {}}
    for variant in variants:
        vcfg = _variant_config(cfg, variant)
        result = train(vcfg, run_dir=root / variant, data=data)
        final = next(r for r in reversed(result.records) if "eval_mse" in r)
        summary["variants"][variant] = {
            "final_step": result.final_step,
            "aborted": result.aborted,
            "eval_mse": final["eval_mse"],
            "eval_mse_depth": final["eval_mse_depth"],
            "depth_ratio_vs_floor": (final["eval_mse_depth"] / floor
                                     if floor > 0 else None),
            "alpha_trajectory": [
                {"step": r["step"], "alphas": r["alphas"]}
                for r in result.records if "alphas" in r],
        }
    (root / "ablation.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    (root / "ablation.txt").write_text(format_ablation_table(summary),
                                       encoding="utf-8")
    return summary


def format_ablation_table(summary: dict) -> str:
    floor = summary["depth_floor"]
    lines = [
        f"{'variant':<14} {'eval_mse':>12} {'depth_mse':>12} {'vs_floor':>10}",
        "-" * 51,
    ]
    for name, v in summary["variants"].items():
        ratio = v["depth_ratio_vs_floor"]
        lines.append(f"{name:<14} {v['eval_mse']:>12.6f} {v['eval_mse_depth']:>12.6f} "
                     f"{(f'{ratio:.3f}' if ratio is not None else 'n/a'):>10}")
    lines.append(f"ambiguity floor (depth mse): {floor:.6f}")
    return "\n".join(lines) + "\n"
