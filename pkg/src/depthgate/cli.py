"""Command line entry points.

``main`` is importable and side-effect free apart from the work itself,
so tests drive it in process. Exit codes: 0 on success, 1 when a domain
error (bad config, malformed file, degenerate input) stops the command,
2 for usage errors. Domain failures print exactly one line to stderr of
the form ``depthgate: <category>: <message>``.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from pathlib import Path

import numpy as np

from .config import load_config, schema_help
from .datasets import build_sample, depth_floor, make_ambiguity_dataset, save_dataset
from .errors import DepthgateError
from .geometry import (backproject, filter_outliers, merge_views, normalize,
                       sample_fps, sample_uniform, write_ply)
from .gradsuite import case_names, run_suite
from .harness import ablate, evaluate, format_ablation_table, restore_policy, train

WORKERS_ENV = "DEPTHGATE_WORKERS"


def _category(exc: DepthgateError) -> str:
    name = type(exc).__name__
    name = name[:-len("Error")] if name.endswith("Error") else name
    return re.sub(r"(?<!^)(?=[A-Z])", "-", name).lower() or "error"


def _worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise DepthgateError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise DepthgateError(f"{WORKERS_ENV} must be positive, got {n}")
    return n


def _gen_split(args) -> list:
    cfg, split, indices = args
    return [build_sample(cfg, split, i) for i in indices]


def _generate(cfg, split: str) -> list:
    """Per-sample seeding makes the result independent of the worker count."""
    n = cfg.n_train if split == "train" else cfg.n_eval
    workers = _worker_count()
    if workers == 1 or n < 2 * workers:
        return [build_sample(cfg, split, i) for i in range(n)]
    import multiprocessing

    chunks = [(cfg, split, list(range(w, n, workers))) for w in range(workers)]
    with multiprocessing.Pool(workers) as pool:
        parts = pool.map(_gen_split, chunks)
    by_index = {s.index: s for part in parts for s in part}
    return [by_index[i] for i in range(n)]


def _add_config_args(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", metavar="FILE", default=None,
                    help="INI config file; defaults apply when omitted")
    sp.add_argument("-o", "--override", action="append", default=[],
                    metavar="SEC.KEY=VAL", help="override one config key")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="depthgate",
        description="3-d-aware diffusion action policy on a synthetic "
                    "depth-ambiguity benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("gen-data", help="render both dataset splits to disk")
    _add_config_args(sp)
    sp.add_argument("--out", metavar="DIR", default=None,
                    help="output directory (default: io.data_dir)")

    sp = sub.add_parser("train", help="run the optimization loop")
    _add_config_args(sp)
    sp.add_argument("--run-dir", metavar="DIR", default=None,
                    help="output directory (default: io.run_dir)")

    sp = sub.add_parser("eval", help="score a checkpoint on the held-out split")
    sp.add_argument("checkpoint", metavar="CKPT")
    sp.add_argument("--subset", type=int, default=None,
                    help="limit to the first N held-out samples")

    sp = sub.add_parser("ablate", help="train all variants and tabulate")
    _add_config_args(sp)
    sp.add_argument("--run-root", metavar="DIR", default=None,
                    help="output root (default: io.run_dir)")
    sp.add_argument("--variants", default=None,
                    help="comma-separated subset of full,no_injection,no_aux_loss")

    sp = sub.add_parser("export-cloud", help="write one sample's point cloud as PLY")
    _add_config_args(sp)
    sp.add_argument("--split", choices=("train", "eval"), default="train")
    sp.add_argument("--index", type=int, default=0)
    sp.add_argument("--out", metavar="FILE", required=True)
    sp.add_argument("--filter", action="store_true", help="apply outlier removal")
    sp.add_argument("--normalize", action="store_true", help="center and rescale")
    sp.add_argument("--sample", choices=("none", "fps", "uniform"), default="none",
                    help="subsample to pipeline.n_points")

    sp = sub.add_parser("grad-check", help="finite-difference gradient audit")
    sp.add_argument("--ops", default=None,
                    help="comma-separated case names (default: all)")
    sp.add_argument("--instances", type=int, default=20)
    sp.add_argument("--step", type=float, default=1e-5)
    sp.add_argument("--tol", type=float, default=1e-4)

    sub.add_parser("keys", help="list every config key with type and default")
    return parser


def _cmd_gen_data(args) -> int:
    cfg = load_config(args.config, args.override)
    out = Path(args.out) if args.out else (Path(cfg.data_dir) if cfg.data_dir else None)
    if out is None:
        raise DepthgateError("gen-data needs --out or a non-empty io.data_dir")
    for split in ("train", "eval"):
        samples = _generate(cfg, split)
        save_dataset(samples, cfg, out / split)
        print(f"wrote {len(samples)} {split} samples to {out / split}")
    print(f"ambiguity floor (depth mse): {depth_floor(cfg):.6g}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config, args.override)
    result = train(cfg, run_dir=args.run_dir)
    last = result.records[-1]
    print(json.dumps(last, sort_keys=True))
    if result.aborted:
        print("depthgate: numeric: training aborted on a non-finite loss",
              file=sys.stderr)
        return 1
    return 0


def _cmd_eval(args) -> int:
    policy, step, _ = restore_policy(args.checkpoint)
    cfg = policy.cfg
    if cfg.data_dir:
        from .datasets import load_dataset
        samples = load_dataset(Path(cfg.data_dir) / "eval")
    else:
        samples = make_ambiguity_dataset(cfg, "eval")
    res = evaluate(policy, samples, subset=args.subset)
    print(json.dumps({"checkpoint_step": step, "n": res.n, "mse": res.mse,
                      "mse_depth": res.mse_depth,
                      "depth_floor": depth_floor(cfg)}, sort_keys=True))
    return 0


def _cmd_ablate(args) -> int:
    cfg = load_config(args.config, args.override)
    root = Path(args.run_root) if args.run_root else Path(cfg.run_dir)
    variants = (tuple(v.strip() for v in args.variants.split(",") if v.strip())
                if args.variants else ("full", "no_injection", "no_aux_loss"))
    summary = ablate(cfg, root, variants=variants)
    print(format_ablation_table(summary), end="")
    return 0


def _cmd_export_cloud(args) -> int:
    cfg = load_config(args.config, args.override)
    sample = build_sample(cfg, args.split, args.index)
    cloud = merge_views([backproject(dm, view=v)
                         for v, dm in enumerate(sample.depth_maps)])
    if args.filter:
        cloud = filter_outliers(cloud, k=cfg.filter_k, alpha=cfg.filter_alpha)
    if args.normalize:
        cloud = normalize(cloud)
    if args.sample == "fps":
        cloud, _ = sample_fps(cloud, cfg.n_points, seed_index=cfg.fps_seed_index)
    elif args.sample == "uniform":
        from .datasets import split_code
        seed = np.random.SeedSequence([cfg.seed, 40, split_code(args.split), args.index])
        cloud, _ = sample_uniform(cloud, cfg.n_points, seed)
    write_ply(cloud, args.out)
    print(f"wrote {len(cloud)} points to {args.out}")
    return 0


def _cmd_grad_check(args) -> int:
    names = ([n.strip() for n in args.ops.split(",") if n.strip()]
             if args.ops else case_names())
    results = run_suite(names, instances=args.instances, step=args.step,
                        tol=args.tol)
    failed = False
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<26} max_rel_err={r.max_rel_err:.3e} "
              f"instances={r.instances} {status}")
        failed = failed or not r.passed
    return 1 if failed else 0


def _cmd_keys(_args) -> int:
    print(schema_help())
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "export-cloud": _cmd_export_cloud,
    "grad-check": _cmd_grad_check,
    "keys": _cmd_keys,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    try:
        return _COMMANDS[args.command](args)
    except DepthgateError as e:
        print(f"depthgate: {_category(e)}: {e}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main(sys.argv[1:]))
