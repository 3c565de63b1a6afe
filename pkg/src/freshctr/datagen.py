"""Synthetic impression stream with a known click-probability function.

The world has a fixed set of publishers and user segments and a growing
set of items. Each item carries a latent logit that follows a Gaussian
random walk (one step per simulated hour), per-segment and per-publisher
interaction terms, and a popularity logit that controls how often it is
shown. New items arrive as a Poisson process. Trend events add a
temporary logit shift to one entity, and an optional abrupt shift moves
every item's logit at a single point in time.

Every random draw is keyed by purpose and by hour or item index, so the
stream is a pure function of :class:`WorldConfig` and any time slice of it
can be generated on its own.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import expit

from . import _rng
from .records import FIELDS, Dataset

HOUR = 3600
DAY = 24 * HOUR


def item_id(i: int) -> str:
    return f"item_{i}"


def publisher_id(k: int) -> str:
    return f"pub_{k}"


def segment_id(k: int) -> str:
    return f"seg_{k}"


def hour_value(hour_of_day: int) -> str:
    return f"h{hour_of_day:02d}"


HOUR_VALUES = tuple(hour_value(h) for h in range(24))


@dataclass(frozen=True)
class TrendEvent:
    time: int
    entity: str
    shift: float
    duration: int

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("trend event duration must be positive")


@dataclass(frozen=True)
class WorldConfig:
    n_items_initial: int = 40
    n_publishers: int = 8
    n_user_segments: int = 6
    base_ctr: float = 0.1
    drift_sigma: float = 0.02
    new_item_rate: float = 0.5
    trend_events: tuple[TrendEvent, ...] = ()
    impressions_per_hour: int = 2000
    seed: int = 0
    item_logit_sd: float = 0.8
    interaction_sd: float = 0.5
    popularity_sd: float = 0.5
    hour_amplitude: float = 0.3
    shift_time: int | None = None
    shift_sd: float = 1.0

    def __post_init__(self):
        events = tuple(e if isinstance(e, TrendEvent) else TrendEvent(**e) for e in self.trend_events)
        object.__setattr__(self, "trend_events", events)
        for name in ("n_items_initial", "n_publishers", "n_user_segments", "impressions_per_hour"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.base_ctr < 1:
            raise ValueError("base_ctr must lie in (0, 1)")
        for name in ("drift_sigma", "new_item_rate", "item_logit_sd", "interaction_sd",
                     "popularity_sd", "hour_amplitude", "shift_sd"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be finite and non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trend_events"] = [asdict(e) for e in self.trend_events]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WorldConfig":
        d = dict(d)
        d["trend_events"] = tuple(TrendEvent(**e) for e in d.get("trend_events", ()))
        return cls(**d)


def inject_event(cfg: WorldConfig, entity: str, time: int, shift: float, duration: int) -> WorldConfig:
    """``cfg`` with one more trend event."""
    return replace(cfg, trend_events=cfg.trend_events + (TrendEvent(int(time), entity, float(shift), int(duration)),))


@dataclass
class WorldTruth:
    """Ground truth behind a generated stream: births, latent trajectories, interactions."""

    config: WorldConfig
    birth_times: np.ndarray          # (n_items,)
    latent: np.ndarray               # (n_hours, n_items), nan before the birth hour
    popularity: np.ndarray           # (n_items,)
    segment_interaction: np.ndarray  # (n_items, n_segments)
    publisher_interaction: np.ndarray  # (n_items, n_publishers)
    shift_jump: np.ndarray           # (n_items,)
    item_index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.item_index = {item_id(i): i for i in range(len(self.birth_times))}

    @property
    def n_items(self) -> int:
        return len(self.birth_times)

    @property
    def n_hours(self) -> int:
        return self.latent.shape[0]

    @property
    def item_ids(self) -> tuple[str, ...]:
        return tuple(item_id(i) for i in range(self.n_items))

    def birth_time(self, item: str) -> int:
        try:
            return int(self.birth_times[self.item_index[item]])
        except KeyError:
            raise KeyError(f"unknown item id {item!r} in world truth") from None

    def item_ctr_trajectory(self, item: str) -> np.ndarray:
        """Hourly CTR from the item's latent logit alone (nan before birth)."""
        return expit(self.latent[:, self.item_index[item]])

    def _entity_masks(self, entity: str, items, pubs, segs):
        if entity in self.item_index:
            return items == self.item_index[entity]
        if entity.startswith("pub_") and entity[4:].isdigit() and int(entity[4:]) < self.config.n_publishers:
            return pubs == int(entity[4:])
        if entity.startswith("seg_") and entity[4:].isdigit() and int(entity[4:]) < self.config.n_user_segments:
            return segs == int(entity[4:])
        raise ValueError(f"trend event references nonexistent entity {entity!r}")

    def logits_from_indices(self, ts, items, pubs, segs) -> np.ndarray:
        cfg = self.config
        hours = ts // HOUR
        if len(ts) and hours.max() >= self.n_hours:
            raise ValueError("timestamps beyond the simulated horizon of this world truth")
        hod = hours % 24
        z = self.latent[hours, items] + self.segment_interaction[items, segs] + self.publisher_interaction[items, pubs]
        z = z + cfg.hour_amplitude * np.sin(2.0 * np.pi * hod / 24.0)
        for ev in cfg.trend_events:
            active = (ts >= ev.time) & (ts < ev.time + ev.duration)
            mask = active & self._entity_masks(ev.entity, items, pubs, segs)
            z = z + np.where(mask, ev.shift, 0.0)
        if cfg.shift_time is not None:
            z = z + np.where(ts >= cfg.shift_time, self.shift_jump[items], 0.0)
        return z

    def true_ctr(self, data: Dataset) -> np.ndarray:
        """Per-impression click probability for a dataset drawn from this world."""
        def column(name, prefix, limit, lookup=None):
            out = []
            for v in data.categories[name]:
                if lookup is not None:
                    idx = lookup.get(v)
                elif v.startswith(prefix) and v[len(prefix):].isdigit() and int(v[len(prefix):]) < limit:
                    idx = int(v[len(prefix):])
                else:
                    idx = None
                out.append(-1 if idx is None else idx)
            mapping = np.array(out + [-1], dtype=np.int64)
            col = mapping[data.codes[name]]
            if len(col) and col.min() < 0:
                bad = data.categories[name][data.codes[name][np.argmax(col < 0)]]
                raise KeyError(f"unknown {name} {bad!r} in world truth join")
            return col

        items = column("item", "", 0, self.item_index)
        pubs = column("publisher", "pub_", self.config.n_publishers)
        segs = column("user_segment", "seg_", self.config.n_user_segments)
        if len(items) and np.any(data.timestamps < self.birth_times[items]):
            raise ValueError("dataset has impressions of items before their birth time")
        return expit(self.logits_from_indices(data.timestamps, items, pubs, segs))

    # sidecar -------------------------------------------------------------

    def to_dict(self) -> dict:
        def arr(a):
            return [None if not np.isfinite(x) else float(x) for x in np.asarray(a, dtype=np.float64).ravel()]

        return {
            "config": self.config.to_dict(),
            "n_hours": int(self.n_hours),
            "items": [
                {
                    "id": item_id(i),
                    "birth_time": int(self.birth_times[i]),
                    "popularity": float(self.popularity[i]),
                    "shift_jump": float(self.shift_jump[i]),
                    "segment_interaction": arr(self.segment_interaction[i]),
                    "publisher_interaction": arr(self.publisher_interaction[i]),
                    "latent_logit_by_hour": arr(self.latent[:, i]),
                }
                for i in range(self.n_items)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WorldTruth":
        items = d["items"]
        n_hours = int(d["n_hours"])

        def arr(v):
            return np.array([np.nan if x is None else x for x in v], dtype=np.float64)

        latent = np.stack([arr(it["latent_logit_by_hour"]) for it in items], axis=1) if items else np.zeros((n_hours, 0))
        return cls(
            config=WorldConfig.from_dict(d["config"]),
            birth_times=np.array([it["birth_time"] for it in items], dtype=np.int64),
            latent=latent.reshape(n_hours, len(items)),
            popularity=np.array([it["popularity"] for it in items], dtype=np.float64),
            segment_interaction=np.stack([arr(it["segment_interaction"]) for it in items]),
            publisher_interaction=np.stack([arr(it["publisher_interaction"]) for it in items]),
            shift_jump=np.array([it["shift_jump"] for it in items], dtype=np.float64),
        )


def _publisher_weights(n: int) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1)
    return w / w.sum()


def simulate_world(cfg: WorldConfig, n_hours: int) -> WorldTruth:
    """World state for hours ``0 .. n_hours - 1``."""
    seed = cfg.seed
    births = [0] * cfg.n_items_initial
    for h in range(n_hours):
        if cfg.new_item_rate > 0:
            rng = _rng.keyed_rng(seed, _rng.WORLD_ARRIVALS, h)
            k = int(rng.poisson(cfg.new_item_rate))
            births.extend(int(t) + h * HOUR for t in np.sort(rng.integers(0, HOUR, k)))
    births = np.array(births, dtype=np.int64)
    n_items = len(births)

    base_logit = math.log(cfg.base_ctr) - math.log1p(-cfg.base_ctr)
    base = np.empty(n_items)
    pop = np.empty(n_items)
    seg_int = np.empty((n_items, cfg.n_user_segments))
    pub_int = np.empty((n_items, cfg.n_publishers))
    jump = np.empty(n_items)
    for i in range(n_items):
        rng = _rng.keyed_rng(seed, _rng.WORLD_ITEM, i)
        base[i] = base_logit + cfg.item_logit_sd * rng.standard_normal()
        pop[i] = cfg.popularity_sd * rng.standard_normal()
        seg_int[i] = cfg.interaction_sd * rng.standard_normal(cfg.n_user_segments)
        pub_int[i] = cfg.interaction_sd * rng.standard_normal(cfg.n_publishers)
        jump[i] = cfg.shift_sd * _rng.keyed_rng(seed, _rng.WORLD_SHIFT, i).standard_normal()

    latent = np.full((n_hours, n_items), np.nan)
    birth_hours = births // HOUR
    for h in range(n_hours):
        born_now = birth_hours == h
        latent[h, born_now] = base[born_now]
        if h == 0:
            continue
        older = int(np.searchsorted(births, h * HOUR, side="left"))
        step = latent[h - 1, :older]
        if cfg.drift_sigma > 0 and older:
            step = step + cfg.drift_sigma * _rng.keyed_rng(seed, _rng.WORLD_WALK, h).standard_normal(older)
        latent[h, :older] = step
    return WorldTruth(cfg, births, latent, pop, seg_int, pub_int, jump)


def generate_stream(cfg: WorldConfig, t0: int, t1: int) -> tuple[Dataset, WorldTruth]:
    """Impressions with ``t0 <= timestamp < t1`` and the truth behind them."""
    if not t0 < t1:
        raise ValueError(f"need t0 < t1, got {t0}, {t1}")
    if t0 < 0:
        raise ValueError("the simulated clock starts at 0")
    n_hours = -(-int(t1) // HOUR)
    for ev in cfg.trend_events:
        n_hours = max(n_hours, -(-(ev.time + ev.duration) // HOUR))
    truth = simulate_world(cfg, n_hours)
    for ev in cfg.trend_events:
        truth._entity_masks(ev.entity, np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64))

    cum_pop = np.cumsum(np.exp(truth.popularity))
    pub_w = _publisher_weights(cfg.n_publishers)
    n = cfg.impressions_per_hour
    chunks = []
    for h in range(int(t0) // HOUR, -(-int(t1) // HOUR)):
        rng = _rng.keyed_rng(cfg.seed, _rng.WORLD_IMPRESSIONS, h)
        ts = h * HOUR + np.sort(rng.integers(0, HOUR, n))
        u_item = rng.random(n)
        pubs = rng.choice(cfg.n_publishers, size=n, p=pub_w)
        segs = rng.integers(0, cfg.n_user_segments, n)
        u_click = rng.random(n)
        alive = np.searchsorted(truth.birth_times, ts, side="right")
        items = np.searchsorted(cum_pop, u_item * cum_pop[alive - 1], side="right")
        items = np.minimum(items, alive - 1)
        p = expit(truth.logits_from_indices(ts, items, pubs, segs))
        clicks = (u_click < p).astype(np.int8)
        keep = (ts >= t0) & (ts < t1)
        chunks.append((ts[keep], items[keep], pubs[keep], segs[keep], clicks[keep]))

    ts, items, pubs, segs, clicks = (np.concatenate(c) for c in zip(*chunks))
    data = Dataset(
        timestamps=ts,
        codes={
            "item": items,
            "publisher": pubs,
            "user_segment": segs,
            "hour_of_day": (ts // HOUR) % 24,
        },
        categories={
            "item": truth.item_ids,
            "publisher": tuple(publisher_id(k) for k in range(cfg.n_publishers)),
            "user_segment": tuple(segment_id(k) for k in range(cfg.n_user_segments)),
            "hour_of_day": HOUR_VALUES,
        },
        clicks=clicks,
        fields=FIELDS,
    )
    return data, truth


def slice_window(dataset: Dataset, t_start: int, t_end: int) -> Dataset:
    """Impressions with ``t_start <= timestamp < t_end``, order preserved."""
    if not t_start < t_end:
        raise ValueError(f"need t_start < t_end, got {t_start}, {t_end}")
    return dataset.window(t_start, t_end)
