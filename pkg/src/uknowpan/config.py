"""Flat ``key = value`` configuration: schema, parsing, validation and profiles.

Precedence is built-in defaults < profile < config file < command-line flags.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .errors import ConfigError


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text) -> tuple:
    if isinstance(text, (tuple, list)):
        return tuple(int(v) for v in text)
    text = str(text).strip()
    return tuple(int(v) for v in text.split(",") if v.strip()) if text else ()


def _floats(text) -> tuple:
    if isinstance(text, (tuple, list)):
        return tuple(float(v) for v in text)
    text = str(text).strip()
    return tuple(float(v) for v in text.split(",") if v.strip()) if text else ()


def _choice(*options: str) -> Callable:
    def parse(text):
        text = str(text).strip()
        if text not in options:
            raise ValueError(f"expected one of {options}, got {text!r}")
        return text

    return parse


@dataclass(frozen=True)
class Key:
    name: str
    parse: Callable
    default: Any
    help: str
    full: Any = None  # full-scale value when it differs from the desk default

    def describe(self) -> str:
        text = f"{self.help} (default: {format_value(self.default)}"
        if self.full is not None:
            text += f"; full scale: {format_value(self.full)}"
        return text + ")"


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


SELECTORS = ("teacher", "student_L1", "student_KD", "student_UKnow")

SCHEMA = [
    Key("seed", int, 0, "master seed; every random stream is derived from it"),
    Key("profile", _choice("desk", "full"), "desk", "named bundle of scale settings applied before file and flags"),
    # data
    Key("bands", int, 4, "multispectral bands B"),
    Key("height", int, 64, "PAN patch height"),
    Key("width", int, 64, "PAN patch width"),
    Key("train_scenes", int, 64, "synthetic training scenes"),
    Key("val_scenes", int, 16, "synthetic validation scenes"),
    # model
    Key("base_channels", int, 16, "channels C0 of the first U-Net stage"),
    Key("stages", int, 3, "U-Net stages"),
    Key("multipliers", _ints, (1, 2, 4), "channel multiplier per stage"),
    Key("vector_dim", int, 32, "compact vector size D"),
    Key("prior_width", int, 16, "prior network channels"),
    Key("prior_blocks", int, 4, "prior network ResBlocks"),
    Key("extractor_width", int, 16, "vector extractor channels"),
    Key("cond_kind", _choice("SWT", "DWT"), "SWT", "wavelet transform feeding the conditioning stack"),
    Key("ffa_on", _bool, True, "feed-forward attention in the teacher encoder"),
    Key("hqfe_on", _bool, True, "frequency/wavelet attention in the teacher decoder"),
    # diffusion
    Key("diffusion_steps", int, 500, "forward-process length T"),
    Key("ddim_steps", int, 25, "sampling steps"),
    Key("beta_start", float, 1e-4, "first noise variance"),
    Key("beta_end", float, 0.02, "last noise variance"),
    # optimisation
    Key("iterations", int, 5000, "teacher training iterations", 300_000),
    Key("prior_iterations", int, 1000, "prior network training iterations", 300_000),
    Key("distill_iterations", int, 2000, "student distillation iterations", 300_000),
    Key("batch_size", int, 8, "scenes per step", 32),
    Key("crop", int, 32, "training crop size in PAN pixels (0 = whole scene)", 0),
    Key("lr", float, 1e-3, "initial learning rate", 1e-4),
    Key("lr_decay", float, 0.5, "learning-rate decay factor"),
    Key("lr_decay_every", int, 10_000, "iterations between decays"),
    Key("beta1", float, 0.9, "first-moment decay"),
    Key("beta2", float, 0.999, "second-moment decay"),
    Key("weight_decay", float, 1e-4, "decoupled weight decay"),
    Key("adam_eps", float, 1e-8, "moment-step epsilon"),
    Key("dtype", _choice("float32", "float64"), "float32", "training precision"),
    # distillation
    Key("selector", _choice(*SELECTORS), "student_UKnow", "distillation objective"),
    Key("lambda_s", float, 0.1, "soft-loss weight"),
    Key("lambda_f", float, 0.001, "feature-loss weight"),
    Key("tau", float, 1.0, "uncertainty offset tau"),
    Key("gamma", float, 1e-3, "feature-loss smoothing constant"),
    Key("alpha", _floats, (), "per-tap feature weights (empty = all 1)"),
    # evaluation and bookkeeping
    Key("val_every", int, 250, "iterations between validation passes (0 = only at the end)"),
    Key("q_window", int, 8, "Q2n block size", 32),
    Key("eval_mode", _choice("reduced", "full"), "reduced", "evaluation protocol"),
    Key("checkpoint_every", int, 0, "iterations between intermediate checkpoints (0 = final only)"),
    Key("preview_bands", _ints, (2, 1, 0), "bands rendered in PNG previews"),
    Key("ablation_seeds", _ints, (0, 1, 2), "seeds for the ablation matrix"),
]

KEYS = {k.name: k for k in SCHEMA}
DEFAULTS = {k.name: k.default for k in SCHEMA}
PROFILES = {
    "desk": {},
    "full": {k.name: k.full for k in SCHEMA if k.full is not None},
}


def validate(raw: dict, source: str = "config") -> dict:
    out = {}
    for name, value in raw.items():
        key = KEYS.get(name)
        if key is None:
            raise ConfigError(f"{source}: unknown key {name!r}")
        try:
            out[name] = key.parse(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: bad value for {name!r}: {exc}") from None
    return out


def parse_config_text(text: str, source: str = "config") -> dict:
    """Parse UTF-8 ``key = value`` lines; ``#`` starts a comment."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        name, value = (part.strip() for part in body.split("=", 1))
        if not name:
            raise ConfigError(f"{source}:{lineno}: missing key")
        if name in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {name!r}")
        raw[name] = value
    return validate(raw, source)


def load_config_file(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {p}: {exc}") from None
    return parse_config_text(text, str(p))


def resolve(file_values: dict | None = None, flag_values: dict | None = None) -> dict:
    file_values = dict(file_values or {})
    flag_values = dict(flag_values or {})
    profile = flag_values.get("profile", file_values.get("profile", DEFAULTS["profile"]))
    merged = dict(DEFAULTS)
    merged.update(PROFILES[profile])
    merged.update(file_values)
    merged.update(flag_values)
    merged["profile"] = profile
    return merged


def to_text(values: dict) -> str:
    return "".join(f"{k} = {format_value(values[k])}\n" for k in KEYS if k in values)
