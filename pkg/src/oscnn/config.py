"""Run configuration files (INI syntax, read with :mod:`configparser`).

Recognized sections and keys::

    [toy]        out_dir, seed, per_class, class_count, proxy_count, mode
    [data]       development, validation, evaluation, object_proxy, scene_proxy
    [output]     dir
    [pretrain]   TrainConfig keys (see below)
    [finetune]   TrainConfig keys
    [seeds]      pretrain, finetune
    [stream <label>]  flavor, crop_size         (one section per stream)
    [fusion]     weights = <label>:<w>, ...     (optional override)
    [score]      workers

TrainConfig keys: momentum, batch_size, base_lr, hidden_lr_multiplier,
schedule (``iter:lr, iter:lr, ...``), stop_iteration, weight_decay.
Relative paths are resolved against the directory holding the config file.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .fusion import FusionSpec
from .layers import PRESETS
from .optim import TrainConfig
from .streams import TOY_CROP, StreamId


class ConfigError(ValueError):
    pass


_INT_KEYS = {"batch_size", "stop_iteration"}
_FLOAT_KEYS = {"momentum", "base_lr", "hidden_lr_multiplier", "weight_decay"}


def parse_schedule(text: str) -> Tuple[Tuple[int, float], ...]:
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            t, lr = item.split(":")
            out.append((int(t), float(lr)))
        except ValueError:
            raise ConfigError(f"bad schedule entry {item!r}; expected iter:lr") from None
    return tuple(out)


def train_config_from_section(section) -> TrainConfig:
    kwargs = {}
    for key, raw in section.items():
        if key in _INT_KEYS:
            kwargs[key] = int(raw)
        elif key in _FLOAT_KEYS:
            kwargs[key] = float(raw)
        elif key == "schedule":
            kwargs[key] = parse_schedule(raw)
        else:
            raise ConfigError(f"[{section.name}]: unknown key {key!r}")
    try:
        return TrainConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"[{section.name}]: {exc}") from None


@dataclass(frozen=True)
class StreamDecl:
    id: StreamId
    flavor: str
    crop_size: int = TOY_CROP


@dataclass
class RunConfig:
    base_dir: Path
    toy: Dict[str, str] = field(default_factory=dict)
    data: Dict[str, Path] = field(default_factory=dict)
    output_dir: Optional[Path] = None
    pretrain: Optional[TrainConfig] = None
    finetune: Optional[TrainConfig] = None
    seeds: Dict[str, int] = field(default_factory=dict)
    streams: List[StreamDecl] = field(default_factory=list)
    fusion: Optional[FusionSpec] = None
    score_workers: int = 1

    def path(self, key: str) -> Path:
        if key not in self.data:
            raise ConfigError(f"[data] has no {key!r} path")
        return self.data[key]

    def seed(self, stage: str) -> int:
        if stage not in self.seeds:
            raise ConfigError(f"[seeds] must give a {stage!r} seed")
        return self.seeds[stage]

    def require_output(self) -> Path:
        if self.output_dir is None:
            raise ConfigError("[output] dir is required")
        return self.output_dir

    def stream(self, label: str) -> StreamDecl:
        for decl in self.streams:
            if decl.id.label == label:
                return decl
        raise ConfigError(f"no [stream {label}] section")


def load_config(path) -> RunConfig:
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    base = path.resolve().parent
    cfg = RunConfig(base_dir=base)

    def resolve(p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else Path(os.path.normpath(base / q))

    try:
        for section in parser.sections():
            sec = parser[section]
            if section == "toy":
                cfg.toy = dict(sec)
                if "out_dir" in sec:
                    cfg.toy["out_dir"] = str(resolve(sec["out_dir"]))
            elif section == "data":
                cfg.data = {k: resolve(v) for k, v in sec.items()}
            elif section == "output":
                cfg.output_dir = resolve(sec["dir"])
            elif section in ("pretrain", "finetune"):
                setattr(cfg, section, train_config_from_section(sec))
            elif section == "seeds":
                cfg.seeds = {k: int(v) for k, v in sec.items()}
            elif section.startswith("stream "):
                sid = StreamId.parse(section[len("stream "):].strip())
                flavor = sec.get("flavor", "")
                if flavor not in PRESETS:
                    raise ConfigError(f"[{section}]: flavor must be one of {PRESETS}")
                cfg.streams.append(StreamDecl(sid, flavor, sec.getint("crop_size", TOY_CROP)))
            elif section == "fusion":
                if "weights" in sec:
                    comps = []
                    for item in sec["weights"].split(","):
                        label, w = item.strip().rsplit(":", 1)
                        comps.append((label.strip(), float(w)))
                    cfg.fusion = FusionSpec(tuple(comps))
            elif section == "score":
                cfg.score_workers = sec.getint("workers", 1)
            else:
                raise ConfigError(f"unknown section [{section}]")
    except ConfigError:
        raise
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    labels = [d.id.label for d in cfg.streams]
    if len(set(labels)) != len(labels):
        raise ConfigError("duplicate stream sections")
    return cfg
