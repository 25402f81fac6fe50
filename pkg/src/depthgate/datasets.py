"""Depth-ambiguity benchmark: scenes whose 2-d views hide the target depth.

Samples come in groups that share one lateral target position and differ
only in target depth, drawn from a fixed list of alternatives. The flat
2-d raster is orthographic and depth-blind, so within a group every
alternative produces byte-identical 2-d input while the supervised action
chunk moves the end effector to a different depth. A policy that ignores
3-d input therefore cannot do better on the depth coordinate than
predicting the mean alternative; ``depth_floor`` returns that limit.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig, config_to_ini
from .depthio import load_depth_file, save_depth_file
from .errors import ConfigError, ParseError
from .scenes import (CameraIntrinsics, DepthMap, Plane, Scene, Sphere,
                     add_depth_noise, render_depth, render_id_raster)

_SPLIT_CODES = {"train": 0, "eval": 1}


def _arrays_equal(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape and a.dtype == b.dtype and a.tobytes() == b.tobytes()


@dataclass
class TrajectorySample:
    """One supervised example: rendered views plus the target action chunk."""

    index: int
    split: str
    group: int
    alt: int
    target_depth: float
    depth_maps: list[DepthMap]
    image2d: np.ndarray  # [S, S] float64 in [0, 1]
    state: np.ndarray  # [state_dim]
    actions: np.ndarray  # [horizon, action_dim]

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrajectorySample):
            return NotImplemented
        if (self.index, self.split, self.group, self.alt) != (
                other.index, other.split, other.group, other.alt):
            return False
        if self.target_depth != other.target_depth:
            return False
        if len(self.depth_maps) != len(other.depth_maps):
            return False
        for a, b in zip(self.depth_maps, other.depth_maps):
            if a.intrinsics != b.intrinsics or a.far_clip != b.far_clip:
                return False
            if not _arrays_equal(a.depth, b.depth) or not _arrays_equal(a.valid, b.valid):
                return False
        return (_arrays_equal(self.image2d, other.image2d)
                and _arrays_equal(self.state, other.state)
                and _arrays_equal(self.actions, other.actions))


def split_code(split: str) -> int:
    """Stable integer id of a split name, used inside seed derivations."""
    try:
        return _SPLIT_CODES[split]
    except KeyError:
        raise ConfigError(f"unknown split {split!r}; expected one of "
                          f"{sorted(_SPLIT_CODES)}") from None


def camera_for(cfg: RunConfig) -> CameraIntrinsics:
    s = cfg.image_size
    return CameraIntrinsics(fx=cfg.focal, fy=cfg.focal, cx=s / 2.0, cy=s / 2.0,
                            width=s, height=s)


def build_sample(cfg: RunConfig, split: str, index: int) -> TrajectorySample:
    """Render one sample; identical (seed, split, index) gives identical bytes."""
    if cfg.action_dim < 3:
        raise ConfigError(f"action_dim must be at least 3, got {cfg.action_dim}")
    code = split_code(split)
    n_alt = len(cfg.depth_alternatives)
    group, alt = divmod(index, n_alt)

    # lateral position is a group-level draw, so alternatives pair up exactly
    group_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 10, code, group]))
    x, y = group_rng.uniform(-cfg.lateral_range, cfg.lateral_range, size=2)
    depth = float(cfg.depth_alternatives[alt])

    scene = Scene((
        Plane(depth=cfg.background_depth, object_id=0),
        Sphere(center=(float(x), float(y), depth), radius=cfg.target_radius, object_id=1),
    ))
    intr = camera_for(cfg)
    maps = []
    for view in range(cfg.n_views):
        dm = render_depth(scene, intr, far_clip=cfg.far_clip)
        noise_seed = np.random.SeedSequence([cfg.seed, 11, code, index, view])
        dm = add_depth_noise(dm, sigma=cfg.noise_sigma, dropout=cfg.noise_dropout,
                             seed=noise_seed)
        maps.append(dm)

    image2d = render_id_raster(scene, cfg.image_size, cfg.image_size, cfg.ortho_scale)

    state = np.zeros(cfg.state_dim, dtype=np.float64)
    state[2] = cfg.ee_height

    offset = np.array([x, y, depth - cfg.ee_height], dtype=np.float64)
    actions = np.zeros((cfg.horizon, cfg.action_dim), dtype=np.float64)
    actions[:, :3] = offset
    if cfg.action_dim > 3:
        actions[:, 3] = (np.arange(cfg.horizon, dtype=np.float64) + 1.0) / cfg.horizon

    return TrajectorySample(index=index, split=split, group=group, alt=alt,
                            target_depth=depth, depth_maps=maps, image2d=image2d,
                            state=state, actions=actions)


def make_ambiguity_dataset(cfg: RunConfig, split: str) -> list[TrajectorySample]:
    n = cfg.n_train if split == "train" else cfg.n_eval
    split_code(split)
    return [build_sample(cfg, split, i) for i in range(n)]


def depth_floor(cfg: RunConfig) -> float:
    """Depth-coordinate MSE of the best depth-blind predictor.

    Lateral position is recoverable from the 2-d view, so only the depth
    offset is irreducible: its best constant guess is the mean alternative
    and the resulting squared error is the population variance of the
    alternatives (groups cycle uniformly through them).
    """
    alts = np.asarray(cfg.depth_alternatives, dtype=np.float64)
    return float(np.mean((alts - alts.mean()) ** 2))


def _fmt_row(row: np.ndarray) -> str:
    return " ".join("%.17g" % v for v in row)


def _parse_row(text: str, width: int, where: str) -> np.ndarray:
    parts = text.split()
    if len(parts) != width:
        raise ParseError(f"{where}: expected {width} values, got {len(parts)}")
    return np.array([float(p) for p in parts], dtype=np.float64)


def save_dataset(samples: list[TrajectorySample], cfg: RunConfig,
                 dirpath: str | Path) -> None:
    """Write one directory per sample plus a manifest and the full config."""
    root = Path(dirpath)
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.ini").write_text(config_to_ini(cfg), encoding="utf-8")
    manifest = ["[dataset]", f"count = {len(samples)}", ""]
    (root / "dataset.ini").write_text("\n".join(manifest), encoding="utf-8")
    for s in samples:
        d = root / f"sample_{s.index:05d}"
        d.mkdir(exist_ok=True)
        lines = [
            "[sample]",
            f"index = {s.index}",
            f"split = {s.split}",
            f"group = {s.group}",
            f"alt = {s.alt}",
            "target_depth = %.17g" % s.target_depth,
            f"n_views = {len(s.depth_maps)}",
            "",
            "[state]",
            f"values = {_fmt_row(s.state)}",
            "",
            "[actions]",
        ]
        lines += [f"row_{i:02d} = {_fmt_row(row)}" for i, row in enumerate(s.actions)]
        lines.append("")
        lines.append("[image2d]")
        lines += [f"row_{i:02d} = {_fmt_row(row)}" for i, row in enumerate(s.image2d)]
        lines.append("")
        (d / "record.ini").write_text("\n".join(lines), encoding="utf-8")
        for v, dm in enumerate(s.depth_maps):
            save_depth_file(dm, d / f"view_{v:02d}.depth")


def load_dataset(dirpath: str | Path) -> list[TrajectorySample]:
    """Read a directory written by save_dataset; exact inverse of it."""
    import configparser

    root = Path(dirpath)
    manifest_path = root / "dataset.ini"
    if not manifest_path.exists():
        raise ParseError(f"not a dataset directory (no dataset.ini): {root}")
    manifest = configparser.ConfigParser()
    manifest.read_file(open(manifest_path, encoding="utf-8"))
    try:
        count = manifest.getint("dataset", "count")
    except (configparser.Error, ValueError) as e:
        raise ParseError(f"bad dataset manifest {manifest_path}: {e}") from None

    samples = []
    for idx in range(count):
        d = root / f"sample_{idx:05d}"
        rec_path = d / "record.ini"
        if not rec_path.exists():
            raise ParseError(f"missing sample record: {rec_path}")
        rec = configparser.ConfigParser()
        try:
            rec.read_file(open(rec_path, encoding="utf-8"))
            index = rec.getint("sample", "index")
            split = rec.get("sample", "split")
            group = rec.getint("sample", "group")
            alt = rec.getint("sample", "alt")
            target_depth = rec.getfloat("sample", "target_depth")
            n_views = rec.getint("sample", "n_views")
            state_row = rec.get("state", "values")
            action_items = sorted(rec.items("actions"))
            image_items = sorted(rec.items("image2d"))
        except (configparser.Error, ValueError) as e:
            raise ParseError(f"bad sample record {rec_path}: {e}") from None
        if index != idx:
            raise ParseError(f"{rec_path}: index {index} does not match directory")
        state = np.array([float(p) for p in state_row.split()], dtype=np.float64)
        action_width = len(action_items[0][1].split()) if action_items else 0
        image_width = len(image_items[0][1].split()) if image_items else 0
        actions = np.stack([
            _parse_row(v, action_width, f"{rec_path} {k}") for k, v in action_items])
        image2d = np.stack([
            _parse_row(v, image_width, f"{rec_path} {k}") for k, v in image_items])
        maps = [load_depth_file(d / f"view_{v:02d}.depth") for v in range(n_views)]
        samples.append(TrajectorySample(
            index=index, split=split, group=group, alt=alt, target_depth=target_depth,
            depth_maps=maps, image2d=image2d, state=state, actions=actions))
    return samples
