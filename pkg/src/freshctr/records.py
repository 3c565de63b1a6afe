"""Impression records and the columnar dataset that holds them."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

FIELDS: tuple[str, ...] = ("item", "publisher", "user_segment", "hour_of_day")


@dataclass(frozen=True)
class Impression:
    timestamp: int
    features: Mapping[str, str]
    click: int
    soft_target: float | None = None

    def __post_init__(self):
        if self.click not in (0, 1):
            raise ValueError(f"click must be 0 or 1, got {self.click!r}")


@dataclass(eq=False)
class Dataset:
    """Time-ordered impressions stored column-wise.

    Feature values are kept as integer codes into a per-field ``categories``
    tuple, so a window of the stream is a cheap view and vocabulary lookups
    are done once per distinct value rather than once per row.
    """

    timestamps: np.ndarray
    codes: dict[str, np.ndarray]
    categories: dict[str, tuple[str, ...]]
    clicks: np.ndarray
    soft_targets: np.ndarray | None = None
    fields: tuple[str, ...] = field(default=FIELDS)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.clicks = np.asarray(self.clicks, dtype=np.int8)
        n = len(self.timestamps)
        if self.clicks.shape != (n,):
            raise ValueError("clicks and timestamps differ in length")
        if set(self.codes) != set(self.fields) or set(self.categories) != set(self.fields):
            raise ValueError("codes/categories must cover exactly the dataset fields")
        for name in self.fields:
            self.codes[name] = np.asarray(self.codes[name], dtype=np.int32)
            if self.codes[name].shape != (n,):
                raise ValueError(f"codes for field {name!r} have the wrong length")
        if self.soft_targets is not None:
            self.soft_targets = np.asarray(self.soft_targets, dtype=np.float64)
            if self.soft_targets.shape != (n,):
                raise ValueError("soft_targets and timestamps differ in length")
        if n > 1 and np.any(np.diff(self.timestamps) < 0):
            raise ValueError("timestamps must be non-decreasing")
        if n and not np.all((self.clicks == 0) | (self.clicks == 1)):
            raise ValueError("clicks must be 0 or 1")

    # construction -----------------------------------------------------

    @classmethod
    def empty(cls, fields: Sequence[str] = FIELDS, with_soft_targets: bool = False) -> "Dataset":
        fields = tuple(fields)
        return cls(
            timestamps=np.zeros(0, np.int64),
            codes={f: np.zeros(0, np.int32) for f in fields},
            categories={f: () for f in fields},
            clicks=np.zeros(0, np.int8),
            soft_targets=np.zeros(0) if with_soft_targets else None,
            fields=fields,
        )

    @classmethod
    def from_impressions(cls, impressions: Iterable[Impression], fields: Sequence[str] | None = None) -> "Dataset":
        impressions = list(impressions)
        if fields is None:
            fields = tuple(impressions[0].features) if impressions else FIELDS
        fields = tuple(fields)
        lookup: dict[str, dict[str, int]] = {f: {} for f in fields}
        codes = {f: np.empty(len(impressions), np.int32) for f in fields}
        has_soft = bool(impressions) and impressions[0].soft_target is not None
        soft = np.empty(len(impressions)) if has_soft else None
        for i, imp in enumerate(impressions):
            for f in fields:
                table = lookup[f]
                codes[f][i] = table.setdefault(imp.features[f], len(table))
            if has_soft:
                if imp.soft_target is None:
                    raise ValueError("soft_target must be set on all impressions or none")
                soft[i] = imp.soft_target
        return cls(
            timestamps=np.array([imp.timestamp for imp in impressions], dtype=np.int64),
            codes=codes,
            categories={f: tuple(lookup[f]) for f in fields},
            clicks=np.array([imp.click for imp in impressions], dtype=np.int8),
            soft_targets=soft,
            fields=fields,
        )

    # access -----------------------------------------------------------

    def __len__(self) -> int:
        return len(self.timestamps)

    def __getitem__(self, i: int) -> Impression:
        i = range(len(self))[i]
        return Impression(
            timestamp=int(self.timestamps[i]),
            features={f: self.categories[f][self.codes[f][i]] for f in self.fields},
            click=int(self.clicks[i]),
            soft_target=None if self.soft_targets is None else float(self.soft_targets[i]),
        )

    def __iter__(self) -> Iterator[Impression]:
        for i in range(len(self)):
            yield self[i]

    def values(self, name: str) -> np.ndarray:
        """Decoded feature values of one field (object array of str)."""
        cats = np.array(self.categories[name] + ("",), dtype=object)
        return cats[self.codes[name]]

    def first_appearance(self, name: str) -> list[str]:
        """Distinct values of ``name`` in order of first appearance."""
        codes = self.codes[name]
        if len(codes) == 0:
            return []
        uniq, first = np.unique(codes, return_index=True)
        order = np.argsort(first, kind="stable")
        cats = self.categories[name]
        return [cats[c] for c in uniq[order]]

    def take(self, index) -> "Dataset":
        return Dataset(
            timestamps=self.timestamps[index],
            codes={f: self.codes[f][index] for f in self.fields},
            categories=dict(self.categories),
            clicks=self.clicks[index],
            soft_targets=None if self.soft_targets is None else self.soft_targets[index],
            fields=self.fields,
        )

    def window(self, t_start: int, t_end: int) -> "Dataset":
        """Impressions with ``t_start <= timestamp < t_end`` (half-open)."""
        lo = int(np.searchsorted(self.timestamps, t_start, side="left"))
        hi = int(np.searchsorted(self.timestamps, t_end, side="left"))
        return self.take(slice(lo, max(lo, hi)))

    def with_soft_targets(self, soft_targets: np.ndarray | None) -> "Dataset":
        return Dataset(
            timestamps=self.timestamps,
            codes=dict(self.codes),
            categories=dict(self.categories),
            clicks=self.clicks,
            soft_targets=soft_targets,
            fields=self.fields,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        if self.fields != other.fields or len(self) != len(other):
            return False
        if not (np.array_equal(self.timestamps, other.timestamps) and np.array_equal(self.clicks, other.clicks)):
            return False
        if (self.soft_targets is None) != (other.soft_targets is None):
            return False
        if self.soft_targets is not None and not np.array_equal(self.soft_targets, other.soft_targets):
            return False
        return all(np.array_equal(self.values(f), other.values(f)) for f in self.fields)

    __hash__ = None
