"""Flat ``key = value`` experiment configuration with a typed schema.

One text file (or repeated ``--set`` flags) drives every command. Keys are
either top-level run settings, training hyperparameters under ``train.``,
goal-conditioned hyperparameters under ``gcrl.``, or ablation axes under
``grid.`` whose values are comma-separated lists applied per sweep cell.
Unknown keys and untypeable values are rejected by name. Tuple-valued keys
(``train.widths``) use commas, so they cannot themselves be grid axes.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field

from sscp.gcrl import GCConfig
from sscp.sscql import TrainConfig

COMMANDS = (
    "gen-data",
    "train-bc",
    "train-offline",
    "finetune",
    "train-online",
    "train-gcrl",
    "eval",
    "bench",
    "ablate",
)
TRAIN_COMMANDS = ("train-bc", "train-offline", "finetune", "train-online", "train-gcrl")


class ConfigError(ValueError):
    """Bad key, bad value, or a structurally invalid configuration."""


@dataclass
class ExperimentConfig:
    """Everything a run needs; serialized verbatim into each output directory."""

    command: str = ""
    env: str = "point_reach"
    dataset: str = ""
    out: str = "runs/run"
    seed: int = 0
    tag: str = "medium"
    n_transitions: int = 10_000
    traj_len: int = 0  # 0 means the environment horizon
    checkpoint: str = ""
    inference: str = "flat"
    bench_actions: int = 10_000
    euler_steps: int = 32
    ablate_command: str = "train-offline"
    train: TrainConfig = field(default_factory=TrainConfig)
    gcrl: GCConfig = field(default_factory=GCConfig)
    grid: dict[str, list[str]] = field(default_factory=dict)


_SECTIONS = {"train": TrainConfig, "gcrl": GCConfig}


def _scalar_fields(cls) -> dict[str, type]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


_TOP_FIELDS = {
    name: tp
    for name, tp in _scalar_fields(ExperimentConfig).items()
    if name not in (*_SECTIONS, "grid")
}


def known_keys() -> tuple[str, ...]:
    keys = list(_TOP_FIELDS)
    for section, cls in _SECTIONS.items():
        keys += [f"{section}.{name}" for name in _scalar_fields(cls)]
    return tuple(sorted(keys))


def _parse_value(key: str, raw: str, tp):
    raw = raw.strip()
    origin = typing.get_origin(tp)
    try:
        if tp is bool:
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(f"expected a boolean, got {raw!r}")
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        if tp is str:
            return raw
        if origin is tuple:
            elem = typing.get_args(tp)[0]
            if not raw:
                return ()
            return tuple(_parse_value(key, part, elem) for part in raw.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad value for key {key!r}: {exc}") from None
    raise ConfigError(f"key {key!r} has unsupported type {tp}")


def _render_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_render_value(v) for v in value)
    return str(value)


def set_key(cfg: ExperimentConfig, key: str, raw: str) -> None:
    """Apply one ``key = value`` assignment; unknown keys raise by name."""
    if key.startswith("grid."):
        target = key[len("grid.") :]
        _require_leaf(target)
        values = [part.strip() for part in raw.split(",") if part.strip()]
        if not values:
            raise ConfigError(f"grid key {key!r} needs at least one value")
        scratch = clone_config(cfg)
        for value in values:  # surface bad cell values at config time
            set_key(scratch, target, value)
        cfg.grid[target] = values
        return
    if "." in key:
        section, _, name = key.partition(".")
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config key {key!r}")
        fields = _scalar_fields(_SECTIONS[section])
        if name not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(getattr(cfg, section), name, _parse_value(key, raw, fields[name]))
        return
    if key not in _TOP_FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    setattr(cfg, key, _parse_value(key, raw, _TOP_FIELDS[key]))


def _require_leaf(key: str) -> None:
    if key.startswith("grid.") or key == "grid":
        raise ConfigError(f"grid axes cannot nest: {key!r}")
    if key in _TOP_FIELDS:
        return
    section, _, name = key.partition(".")
    if section in _SECTIONS and name in _scalar_fields(_SECTIONS[section]):
        return
    raise ConfigError(f"unknown config key {key!r}")


def apply_text(cfg: ExperimentConfig, text: str) -> None:
    """Apply a config file's assignments in order."""
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        set_key(cfg, key.strip(), raw.strip())


def to_text(cfg: ExperimentConfig) -> str:
    """Render the fully resolved configuration; round-trips via apply_text."""
    lines = []
    for name in sorted(_TOP_FIELDS):
        lines.append(f"{name} = {_render_value(getattr(cfg, name))}")
    for section in sorted(_SECTIONS):
        sub = getattr(cfg, section)
        for name in sorted(_scalar_fields(_SECTIONS[section])):
            lines.append(f"{section}.{name} = {_render_value(getattr(sub, name))}")
    for key in sorted(cfg.grid):
        lines.append(f"grid.{key} = {','.join(cfg.grid[key])}")
    return "\n".join(lines) + "\n"


def from_text(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    apply_text(cfg, text)
    return cfg


def clone_config(cfg: ExperimentConfig) -> ExperimentConfig:
    return dataclasses.replace(
        cfg,
        train=dataclasses.replace(cfg.train),
        gcrl=dataclasses.replace(cfg.gcrl),
        grid={k: list(v) for k, v in cfg.grid.items()},
    )


def validate(cfg: ExperimentConfig) -> None:
    """Re-run dataclass invariants after raw setattr overlays."""
    try:
        dataclasses.replace(cfg.train)
        dataclasses.replace(cfg.gcrl)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.command and cfg.command not in COMMANDS:
        raise ConfigError(f"unknown command {cfg.command!r}")
    if cfg.inference not in ("flat", "hier"):
        raise ConfigError(f"inference must be 'flat' or 'hier', got {cfg.inference!r}")
    if cfg.ablate_command not in TRAIN_COMMANDS:
        raise ConfigError(
            f"ablate_command must be one of {TRAIN_COMMANDS}, got {cfg.ablate_command!r}"
        )
