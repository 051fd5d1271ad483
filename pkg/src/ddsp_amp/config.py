"""Run configuration files (INI-style `key = value`, unknown keys rejected).

Example::

    [run]
    model = F               # preset letter: A, B (Concat-GRU) or C, D, E, F (DDSP)
    data = data/synthetic   # dataset root with seen/ and unseen/ folders
    output_dir = runs/f
    seed = 0

    [train]
    segment_length = 8192   # defaults to 8192 for DDSP, 2048 for baselines
    lr0 = 0.002
    max_epochs = 100
    lr_halve_patience = 2
    early_stop_patience = 4
    batch_size = 32
    warmup = 1024
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields
from pathlib import Path

from .trainer import TrainConfig

PRESETS = ("A", "B", "C", "D", "E", "F")
_RUN_KEYS = {"model", "data", "output_dir", "seed"}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"seed"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: str
    data: Path
    output_dir: Path
    train: TrainConfig

    @property
    def seed(self) -> int:
        return self.train.seed


def default_segment_length(model: str) -> int:
    return 2048 if model in ("A", "B") else 8192


def parse_run_config(text: str, base: Path = Path(".")) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    unknown_sections = set(cp.sections()) - {"run", "train"}
    if unknown_sections:
        raise ConfigError(f"unknown sections: {sorted(unknown_sections)}")
    run = dict(cp["run"]) if cp.has_section("run") else {}
    train = dict(cp["train"]) if cp.has_section("train") else {}
    for keys, allowed, sec in ((run, _RUN_KEYS, "run"), (train, _TRAIN_KEYS, "train")):
        bad = set(keys) - allowed
        if bad:
            raise ConfigError(f"unknown keys in [{sec}]: {sorted(bad)}")
    for key in ("model", "data", "output_dir"):
        if key not in run:
            raise ConfigError(f"[run] needs {key!r}")
    model = run["model"].strip().upper()
    if model not in PRESETS:
        raise ConfigError(f"model must be one of {PRESETS}, got {run['model']!r}")
    kwargs = {"seed": int(run.get("seed", 0)), "segment_length": default_segment_length(model)}
    types = {f.name: f.type for f in fields(TrainConfig)}
    try:
        for k, v in train.items():
            kwargs[k] = float(v) if types[k] in (float, "float") else int(v)
        tc = TrainConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"bad [train] value: {exc}") from exc
    return RunConfig(model, base / run["data"], base / run["output_dir"], tc)


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such config file: {path}")
    return parse_run_config(path.read_text(), path.parent)
