"""Run configuration: a flat dataclass bound to an INI-style schema.

Every knob lives in the schema table below, which is the single source of
truth for sections, types, defaults, and help text. File parsing and
command-line overrides both go through it, so an unknown or ill-typed key
fails loudly with the offending name, and the CLI help can enumerate
every key without a hand-maintained list.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class _Key:
    section: str
    name: str
    type: str  # int | float | bool | str | floats
    default: object
    help: str

    @property
    def dotted(self) -> str:
        return f"{self.section}.{self.name}"

    @property
    def attr(self) -> str:
        return self.name


_SCHEMA: list[_Key] = [
    _Key("run", "seed", "int", 0, "master seed; every stream derives from it"),
    _Key("data", "n_train", "int", 2000, "training split size"),
    _Key("data", "n_eval", "int", 500, "held-out split size"),
    _Key("data", "image_size", "int", 16, "square raster edge for depth and 2-d views"),
    _Key("data", "focal", "float", 16.0, "pinhole focal length in pixels (fx = fy)"),
    _Key("data", "far_clip", "float", 10.0, "depth beyond this renders invalid"),
    _Key("data", "background_depth", "float", 5.0, "frontal backdrop plane depth"),
    _Key("data", "depth_alternatives", "floats", (1.5, 3.0),
         "candidate target depths; pairs share identical 2-d views"),
    _Key("data", "lateral_range", "float", 0.4, "targets drawn uniformly in +-range (x and y)"),
    _Key("data", "target_radius", "float", 0.25, "target sphere radius"),
    _Key("data", "ortho_scale", "float", 10.0, "pixels per meter in the 2-d id raster"),
    _Key("data", "ee_height", "float", 2.25, "end effector z; actions are offsets from it"),
    _Key("data", "noise_sigma", "float", 0.0, "relative Gaussian depth noise"),
    _Key("data", "noise_dropout", "float", 0.0, "fraction of valid pixels dropped"),
    _Key("data", "n_views", "int", 1, "depth views per sample (shared camera frame)"),
    _Key("pipeline", "filter_enabled", "bool", True, "statistical outlier removal on/off"),
    _Key("pipeline", "filter_k", "int", 8, "neighbors for the outlier statistic"),
    _Key("pipeline", "filter_alpha", "float", 2.0, "outlier threshold in std units"),
    _Key("pipeline", "normalize_enabled", "bool", True, "center and scale clouds to unit ball"),
    _Key("pipeline", "sampler", "str", "fps", "point sampler: fps or uniform"),
    _Key("pipeline", "n_points", "int", 16, "points kept per cloud (must equal patch count)"),
    _Key("pipeline", "fps_seed_index", "int", 0, "starting index for farthest point sampling"),
    _Key("model", "d_main", "int", 64, "main head width"),
    _Key("model", "n_layers", "int", 4, "main head depth"),
    _Key("model", "horizon", "int", 8, "action chunk length"),
    _Key("model", "action_dim", "int", 4, "per-step action width"),
    _Key("model", "state_dim", "int", 8, "proprioceptive state width"),
    _Key("model", "patch_size", "int", 4, "square patch edge for the 2-d raster"),
    _Key("model", "encoder_dims", "floats", (32.0, 64.0, 64.0),
         "point encoder widths after the 3-d input"),
    _Key("model", "k_steps", "int", 8, "diffusion steps in the main head"),
    _Key("model", "beta_start", "float", 0.1, "first beta of the linear schedule"),
    _Key("model", "beta_end", "float", 0.7, "last beta of the linear schedule"),
    _Key("model", "mlp_ratio", "int", 4, "block MLP width multiplier"),
    _Key("model", "d_aux", "int", 16, "auxiliary head width (must be below d_main)"),
    _Key("model", "aux_hidden", "int", 64, "auxiliary block MLP width"),
    _Key("model", "k_aux", "int", 2, "auxiliary diffusion steps, at most k_steps"),
    _Key("model", "injection_mode", "str", "projection",
         "feature bridge form: projection or cross_attention"),
    _Key("model", "injection_hidden", "int", 32, "bridge MLP width (projection mode)"),
    _Key("model", "injection_dim", "int", 32, "bridge attention width (cross_attention mode)"),
    _Key("model", "alpha_init", "float", 0.0, "initial value of the per-layer gates"),
    _Key("model", "ratio_max", "float", 0.25, "auxiliary/main parameter budget"),
    _Key("train", "steps", "int", 10000, "optimizer steps"),
    _Key("train", "batch_size", "int", 4, "samples averaged per step"),
    _Key("train", "lr", "float", 3e-4, "Adam learning rate, no schedule"),
    _Key("train", "adam_beta1", "float", 0.9, "Adam first-moment decay"),
    _Key("train", "adam_beta2", "float", 0.999, "Adam second-moment decay"),
    _Key("train", "adam_eps", "float", 1e-8, "Adam denominator floor"),
    _Key("train", "lambda_aux", "float", 0.5, "auxiliary loss weight"),
    _Key("train", "eval_every", "int", 2500, "steps between metric records"),
    _Key("train", "eval_subset", "int", 100, "held-out samples scored at each record"),
    _Key("ablation", "no_injection", "bool", False, "drop the 3-d branch entirely"),
    _Key("ablation", "no_aux_loss", "bool", False, "keep injection, zero the auxiliary loss"),
    _Key("ablation", "random_sampler", "bool", False, "uniform point sampling instead of fps"),
    _Key("io", "data_dir", "str", "", "dataset directory; empty means generate in memory"),
    _Key("io", "run_dir", "str", "runs/default", "output directory for one training run"),
]

_BY_DOTTED = {k.dotted: k for k in _SCHEMA}
_BY_ATTR = {k.attr: k for k in _SCHEMA}
assert len(_BY_ATTR) == len(_SCHEMA), "schema attribute names must be unique"


def _convert(key: _Key, raw: str):
    raw = raw.strip()
    try:
        if key.type == "int":
            return int(raw)
        if key.type == "float":
            return float(raw)
        if key.type == "floats":
            vals = tuple(float(x) for x in raw.split())
            if not vals:
                raise ValueError("empty list")
            return vals
        if key.type == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return raw
    except ValueError as e:
        raise ConfigError(f"bad value for {key.dotted}: {e}") from None


class RunConfig:
    """All run settings; attribute names match schema keys one to one."""

    def __init__(self, **kwargs):
        for k in _SCHEMA:
            setattr(self, k.attr, kwargs.pop(k.attr, k.default))
        if kwargs:
            raise ConfigError(f"unknown config attribute(s): {sorted(kwargs)}")

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.as_dict() == other.as_dict()

    def as_dict(self) -> dict[str, object]:
        return {k.attr: getattr(self, k.attr) for k in _SCHEMA}

    @property
    def n_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def pointnet_dims(self) -> tuple[int, ...]:
        return (3,) + tuple(int(d) for d in self.encoder_dims)

    @property
    def feature_dim(self) -> int:
        return int(self.encoder_dims[-1])

    def validate(self) -> "RunConfig":
        """Cross-field consistency; call before doing any real work."""
        c = self
        if c.image_size <= 0 or c.patch_size <= 0 or c.image_size % c.patch_size != 0:
            raise ConfigError(
                f"image_size {c.image_size} must be a positive multiple of "
                f"patch_size {c.patch_size}")
        if c.n_points != c.n_patches:
            raise ConfigError(
                f"pipeline.n_points ({c.n_points}) must equal the patch count "
                f"({c.n_patches}) so auxiliary and main token grids align")
        if c.d_aux >= c.d_main:
            raise ConfigError(f"d_aux ({c.d_aux}) must be smaller than d_main ({c.d_main})")
        if not 1 <= c.k_aux <= c.k_steps:
            raise ConfigError(f"k_aux ({c.k_aux}) must lie in [1, k_steps={c.k_steps}]")
        if c.injection_mode not in ("projection", "cross_attention"):
            raise ConfigError(f"injection_mode must be projection or cross_attention, "
                              f"got {c.injection_mode!r}")
        if c.sampler not in ("fps", "uniform"):
            raise ConfigError(f"sampler must be fps or uniform, got {c.sampler!r}")
        if len(c.depth_alternatives) < 2:
            raise ConfigError(
                f"need at least 2 depth alternatives, got {len(c.depth_alternatives)}")
        if any(d <= 0.0 for d in c.depth_alternatives):
            raise ConfigError("depth alternatives must be positive")
        if max(c.depth_alternatives) > c.far_clip:
            raise ConfigError("depth alternatives must not exceed far_clip")
        if c.background_depth <= max(c.depth_alternatives) or c.background_depth > c.far_clip:
            raise ConfigError(
                f"background_depth {c.background_depth} must sit behind all depth "
                f"alternatives and inside far_clip {c.far_clip}")
        if c.n_views < 1:
            raise ConfigError(f"n_views must be at least 1, got {c.n_views}")
        if c.batch_size < 1 or c.steps < 0:
            raise ConfigError("batch_size must be positive and steps non-negative")
        if not 0.0 <= c.ratio_max <= 1.0:
            raise ConfigError(f"ratio_max must lie in [0, 1], got {c.ratio_max}")
        if c.lambda_aux < 0.0:
            raise ConfigError(f"lambda_aux must be non-negative, got {c.lambda_aux}")
        if c.eval_every < 1 or c.eval_subset < 1:
            raise ConfigError("eval_every and eval_subset must be positive")
        if c.horizon < 1 or c.action_dim < 1 or c.state_dim < 1:
            raise ConfigError("horizon, action_dim and state_dim must be positive")
        return c


def apply_override(cfg: RunConfig, spec: str) -> None:
    """Apply one ``section.key=value`` override in place."""
    if "=" not in spec:
        raise ConfigError(f"override {spec!r} is not of the form section.key=value")
    dotted, raw = spec.split("=", 1)
    dotted = dotted.strip()
    key = _BY_DOTTED.get(dotted)
    if key is None:
        raise ConfigError(f"unknown config key {dotted!r}")
    setattr(cfg, key.attr, _convert(key, raw))


def _apply_parser(cfg: RunConfig, parser: configparser.ConfigParser,
                  origin: str) -> None:
    for section in parser.sections():
        for name, raw in parser.items(section):
            dotted = f"{section}.{name}"
            key = _BY_DOTTED.get(dotted)
            if key is None:
                raise ConfigError(f"unknown config key {dotted!r} in {origin}")
            setattr(cfg, key.attr, _convert(key, raw))


def load_config(path: str | Path | None = None,
                overrides: list[str] | None = None) -> RunConfig:
    """Defaults, then the INI file if given, then overrides; then validate."""
    cfg = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser()
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            with open(p, encoding="utf-8") as f:
                parser.read_file(f)
        except configparser.Error as e:
            raise ConfigError(f"malformed config {p}: {e}") from None
        _apply_parser(cfg, parser, str(p))
    for spec in overrides or []:
        apply_override(cfg, spec)
    return cfg.validate()


def config_from_ini(text: str) -> RunConfig:
    """Parse serialized config text (for example out of a checkpoint)."""
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config text: {e}") from None
    cfg = RunConfig()
    _apply_parser(cfg, parser, "config text")
    return cfg.validate()


def config_to_ini(cfg: RunConfig) -> str:
    """Serialize every key, grouped by section, parseable by load_config."""
    parser = configparser.ConfigParser()
    for k in _SCHEMA:
        if not parser.has_section(k.section):
            parser.add_section(k.section)
        val = getattr(cfg, k.attr)
        if k.type == "floats":
            text = " ".join(repr(float(v)) for v in val)
        elif k.type == "float":
            text = repr(float(val))
        else:
            text = str(val)
        parser.set(k.section, k.name, text)
    out = []
    for section in parser.sections():
        out.append(f"[{section}]")
        for name, val in parser.items(section):
            out.append(f"{name} = {val}")
        out.append("")
    return "\n".join(out)


def schema_help() -> str:
    """Human-readable key reference generated from the schema."""
    lines = []
    section = None
    for k in _SCHEMA:
        if k.section != section:
            section = k.section
            lines.append(f"[{section}]")
        if k.type == "floats":
            default = " ".join(str(v) for v in k.default)
        else:
            default = str(k.default)
        lines.append(f"  {k.name} ({k.type}, default {default}): {k.help}")
    return "\n".join(lines)


def schema_keys() -> list[str]:
    return [k.dotted for k in _SCHEMA]
