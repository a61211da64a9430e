"""Flat ``key = value`` run configuration with one section per stage.

Relative paths in ``[data]`` resolve against the config file's directory.
A written manifest is itself a loadable config, with absolute paths.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .mixing import GlobalAugConfig, LocalAugConfig
from .selection import SelectionConfig
from .trainer import Toggles, TrainConfig

DATA_KEYS = ("source", "target", "target_val", "remap", "labeled_frames", "pretrained",
             "source_label_dir", "target_label_dir")
_TRAIN_SCALARS = {"beta": float, "gamma": int, "epochs": int, "pretrain_epochs": int,
                  "finetune_epochs": int, "batch_size": int, "lr": float, "hidden": int,
                  "feature_scale": float, "mode": str}
_TRAIN_FLAGS = ("dice_all_classes", "pretrain_global_aug", "eval_teacher")
_ON = {"on", "true", "yes", "1"}
_OFF = {"off", "false", "no", "0"}


def parse_bool(text):
    t = str(text).strip().lower()
    if t in _ON:
        return True
    if t in _OFF:
        return False
    raise ConfigError(f"expected on/off, got {text!r}")


def _pair(text):
    parts = [p.strip() for p in str(text).split(",")]
    if len(parts) != 2:
        raise ConfigError(f"expected 'low, high', got {text!r}")
    return tuple(float(p) for p in parts)


def _fmt(v):
    if isinstance(v, bool):
        return "on" if v else "off"
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    data: dict = field(default_factory=dict)
    seed: int = 0

    def path(self, key):
        value = self.data.get(key)
        return Path(value) if value else None


def _section(parser, name):
    return parser[name] if parser.has_section(name) else {}


def load_config(path) -> RunConfig:
    parser = configparser.ConfigParser()
    try:
        if not parser.read(path):
            raise ConfigError(f"cannot read config {path}")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    return from_parser(parser, Path(path).resolve().parent)


def from_parser(parser, base_dir=Path(".")) -> RunConfig:
    try:
        return _from_parser(parser, Path(base_dir))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad config value: {exc}") from None


def _from_parser(parser, base_dir):
    tr = _section(parser, "train")
    kw = {}
    for key, conv in _TRAIN_SCALARS.items():
        if key in tr:
            kw[key] = conv(tr[key])
    for key in _TRAIN_FLAGS:
        if key in tr:
            kw[key] = parse_bool(tr[key])
    if tr.get("target_class_ratio", "").strip():
        kw["target_class_ratio"] = float(tr["target_class_ratio"])
    sel = _section(parser, "selection")
    kw["selection"] = SelectionConfig(**{k: float(sel[k]) for k in ("alpha", "mu", "zeta")
                                         if k in sel})
    la = _section(parser, "local_aug")
    loc = {k: _pair(la[k]) for k in ("rotation", "scale") if k in la}
    if "keep" in la:
        loc["keep"] = float(la["keep"])
    kw["local_aug"] = LocalAugConfig(**loc)
    ga = _section(parser, "global_aug")
    kw["global_aug"] = GlobalAugConfig(**{k: _pair(ga[k]) for k in
                                          ("rotation", "translation", "scale") if k in ga})
    tg = _section(parser, "toggles")
    unknown = set(tg) - set(Toggles.names())
    if unknown:
        raise ConfigError(f"unknown toggles {sorted(unknown)}")
    kw["toggles"] = Toggles(**{k: parse_bool(v) for k, v in tg.items()})
    data = {}
    for key, value in _section(parser, "data").items():
        if key not in DATA_KEYS:
            raise ConfigError(f"unknown data key {key!r}")
        value = value.strip()
        if value and not key.endswith("_label_dir"):
            value = str((base_dir / value).resolve())
        data[key] = value
    seed = int(tr.get("seed", 0))
    return RunConfig(TrainConfig(**kw), data, seed)


def to_parser(run: RunConfig) -> configparser.ConfigParser:
    t = run.train
    parser = configparser.ConfigParser()
    parser["data"] = {k: run.data[k] for k in DATA_KEYS if run.data.get(k)}
    train = {"seed": str(run.seed)}
    train.update({k: _fmt(getattr(t, k)) for k in _TRAIN_SCALARS})
    train.update({k: _fmt(getattr(t, k)) for k in _TRAIN_FLAGS})
    train["target_class_ratio"] = _fmt(t.target_class_ratio)
    parser["train"] = train
    parser["selection"] = {k: _fmt(getattr(t.selection, k)) for k in ("alpha", "mu", "zeta")}
    parser["local_aug"] = {k: _fmt(getattr(t.local_aug, k)) for k in ("rotation", "scale", "keep")}
    parser["global_aug"] = {k: _fmt(getattr(t.global_aug, k))
                            for k in ("rotation", "translation", "scale")}
    parser["toggles"] = {f.name: _fmt(getattr(t.toggles, f.name)) for f in fields(Toggles)}
    return parser


def dump_config(run: RunConfig, path, extra: dict | None = None):
    parser = to_parser(run)
    if extra:
        parser["run"] = {k: str(v) for k, v in extra.items()}
    with open(path, "w") as fh:
        parser.write(fh)


def with_overrides(run: RunConfig, seed=None, mode=None, toggles=None, **params) -> RunConfig:
    """Apply CLI-style overrides. ``params`` may hold zeta/alpha/mu/beta/gamma."""
    t = run.train
    sel_kw = {k: params[k] for k in ("zeta", "alpha", "mu") if params.get(k) is not None}
    if sel_kw:
        t = replace(t, selection=replace(t.selection, **sel_kw))
    if params.get("beta") is not None:
        t = replace(t, beta=float(params["beta"]))
    if params.get("gamma") is not None:
        t = replace(t, gamma=int(params["gamma"]))
    if mode is not None:
        t = replace(t, mode=mode)
    if toggles:
        unknown = set(toggles) - set(Toggles.names())
        if unknown:
            raise ConfigError(f"unknown toggles {sorted(unknown)}")
        t = replace(t, toggles=replace(t.toggles, **toggles))
    return RunConfig(t, dict(run.data), run.seed if seed is None else int(seed))


def parse_toggle(text):
    name, sep, value = text.partition("=")
    if not sep:
        raise ConfigError(f"toggle must look like name=on|off, got {text!r}")
    return name.strip(), parse_bool(value)
