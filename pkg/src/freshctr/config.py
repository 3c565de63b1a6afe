"""INI run configuration: sections [world], [schedule], [train], [kd], [regimes].

Durations accept a unit suffix: ``s``, ``m``, ``h`` or ``d`` (``14d``,
``4h``); bare integers are seconds. ``trend_events`` is a JSON list of
objects with keys ``time``, ``entity``, ``shift``, ``duration``.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path

from .datagen import TrendEvent, WorldConfig
from .distill import KdConfig
from .pipeline import Regime, Schedule
from .training import TrainConfig

_UNITS = {"s": 1, "m": 60, "h": 3600, "d": 86400}


def parse_duration(text: str | int) -> int:
    s = str(text).strip().lower()
    if s and s[-1] in _UNITS:
        return int(round(float(s[:-1]) * _UNITS[s[-1]]))
    return int(s)


@dataclass
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    schedule: Schedule = field(default_factory=Schedule)
    train: TrainConfig = field(default_factory=TrainConfig)
    regimes: tuple[Regime, ...] = tuple(Regime)
    days: int = 1


def _bool(v: str) -> bool:
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.replace(" ", "").split(",") if x)


def _section(cp, name, allowed) -> dict:
    if not cp.has_section(name):
        return {}
    items = dict(cp.items(name))
    unknown = set(items) - set(allowed)
    if unknown:
        raise ValueError(f"unknown keys in [{name}]: {sorted(unknown)}")
    return items


def _typed(cls, items: dict, overrides=None) -> dict:
    overrides = overrides or {}
    types = {f.name: f.type for f in dc_fields(cls)}
    out = {}
    for k, v in items.items():
        if k in overrides:
            out[k] = overrides[k](v)
        elif types[k] in ("int", int):
            out[k] = int(v)
        elif types[k] in ("float", float):
            out[k] = float(v)
        elif types[k] in ("bool", bool):
            out[k] = _bool(v)
        else:
            out[k] = v
    return out


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_string(text)
    extra = set(cp.sections()) - {"world", "schedule", "train", "kd", "regimes"}
    if extra:
        raise ValueError(f"unknown config sections: {sorted(extra)}")

    world_keys = [f.name for f in dc_fields(WorldConfig)]
    world = _typed(WorldConfig, _section(cp, "world", world_keys), {
        "trend_events": lambda v: tuple(TrendEvent(**e) for e in json.loads(v)),
        "shift_time": lambda v: None if v.strip() in ("", "none") else parse_duration(v),
    })

    sched_keys = [f.name for f in dc_fields(Schedule)] + ["days"]
    sched = _section(cp, "schedule", sched_keys)
    days = int(sched.pop("days", 1))
    schedule = {k: parse_duration(v) for k, v in sched.items()}

    train_keys = [f.name for f in dc_fields(TrainConfig) if f.name != "kd"]
    train = _typed(TrainConfig, _section(cp, "train", train_keys), {"hidden": _ints})
    kd = _typed(KdConfig, _section(cp, "kd", [f.name for f in dc_fields(KdConfig)]))

    reg = _section(cp, "regimes", ["enabled"])
    regimes = tuple(Regime(r.strip()) for r in reg.get("enabled", ",".join(r.value for r in Regime)).split(",") if r.strip())

    return RunConfig(
        world=WorldConfig(**world),
        schedule=Schedule(**schedule),
        train=TrainConfig(kd=KdConfig(**kd), **train),
        regimes=regimes,
        days=days,
    )


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


DEFAULT_CONFIG = """\
[world]
n_items_initial = 40
n_publishers = 8
n_user_segments = 6
base_ctr = 0.1
drift_sigma = 0.02
new_item_rate = 0.5
impressions_per_hour = 2000
seed = 0
trend_events = []

[schedule]
teacher_period = 24h
teacher_window = 14d
student_period = 4h
student_window = 4h
days = 1

[train]
learning_rate = 0.05
batch_size = 256
teacher_epochs = 1
student_epochs = 2
seed = 0
hidden = 32,16
item_dim = 8
other_dim = 4
carry_optimizer_state = false

[kd]
alpha = 0.5
temperature = 2.0
scale_distill_by_T2 = false

[regimes]
enabled = baseline,kd_only,ws_only,ws_kd
"""
