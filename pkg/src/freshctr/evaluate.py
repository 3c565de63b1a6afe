"""Offline metrics and paired regime comparison."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .distill import binary_ce
from .nn_core import CtrModel, clamp_prob, predict
from .records import Dataset

BUCKETS = ("new", "old")


def _mean(x) -> float | None:
    return float(np.mean(x)) if len(x) else None


def log_loss_from_predictions(clicks, probs) -> float:
    clicks = np.asarray(clicks, dtype=np.float64)
    if len(clicks) == 0:
        raise ValueError("log loss of an empty window is undefined")
    return float(np.mean(binary_ce(clicks, clamp_prob(np.asarray(probs, dtype=np.float64)))))


def auc_score(clicks, scores) -> float | None:
    """Rank-based ROC AUC with average ranks for ties; None for single-class input."""
    clicks = np.asarray(clicks)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int((clicks == 1).sum())
    n_neg = len(clicks) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores, method="average")
    u = ranks[clicks == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def log_loss(model: CtrModel, window: Dataset) -> float:
    """Mean binary CE of the model's clicks predictions over ``window``."""
    if len(window) == 0:
        raise ValueError("log loss of an empty window is undefined")
    return log_loss_from_predictions(window.clicks, predict(model, window))


def auc(model: CtrModel, window: Dataset) -> float | None:
    return auc_score(window.clicks, predict(model, window))


@dataclass
class BucketMetrics:
    n: int
    log_loss: float | None = None
    mean_predicted: float | None = None
    empirical_ctr: float | None = None
    true_ctr_error: float | None = None


@dataclass
class MetricsReport:
    regime: str
    cycle_time: int
    window_start: int
    window_end: int
    n_examples: int
    log_loss: float
    auc: float | None
    calibration_error: float
    buckets: dict[str, BucketMetrics] = field(default_factory=dict)
    seed: int = 0
    model_id: str = ""

    def to_record(self) -> dict:
        d = asdict(self)
        d["buckets"] = {k: asdict(v) for k, v in self.buckets.items()}
        return d

    @classmethod
    def from_record(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        d["buckets"] = {k: BucketMetrics(**v) for k, v in d.get("buckets", {}).items()}
        return cls(**d)

    def metric(self, name: str) -> float | None:
        """``log_loss``, ``auc``, ``calibration_error`` or ``<bucket>.<field>``."""
        if "." in name:
            bucket, attr = name.split(".", 1)
            b = self.buckets.get(bucket)
            return None if b is None else getattr(b, attr)
        return getattr(self, name)


def _bucket_metrics(clicks, probs, true_ctr) -> BucketMetrics:
    if len(clicks) == 0:
        return BucketMetrics(0)
    return BucketMetrics(
        n=int(len(clicks)),
        log_loss=log_loss_from_predictions(clicks, probs),
        mean_predicted=float(np.mean(probs)),
        empirical_ctr=float(np.mean(clicks)),
        true_ctr_error=None if true_ctr is None else float(np.mean(np.abs(probs - true_ctr))),
    )


def item_is_new(window: Dataset, truth, age_threshold: float, reference_time: int | None = None) -> np.ndarray:
    """True where the impression's item is younger than ``age_threshold`` at ``reference_time``.

    ``reference_time`` defaults to the window start (the deployment time).
    """
    if reference_time is None:
        reference_time = int(window.timestamps[0]) if len(window) else 0
    births = np.array([truth.birth_time(v) for v in window.categories["item"]] + [0], dtype=np.float64)
    age = reference_time - births[window.codes["item"]]
    return age < age_threshold


def age_bucket_report(model: CtrModel, window: Dataset, truth, age_threshold: float,
                      reference_time: int | None = None, probs=None) -> dict[str, BucketMetrics]:
    if probs is None:
        probs = predict(model, window)
    true_ctr = truth.true_ctr(window) if truth is not None else None
    new = item_is_new(window, truth, age_threshold, reference_time)
    out = {}
    for name, mask in (("new", new), ("old", ~new)):
        out[name] = _bucket_metrics(window.clicks[mask], probs[mask], None if true_ctr is None else true_ctr[mask])
    return out


def evaluate_model(model: CtrModel, window: Dataset, *, regime: str, cycle_time: int, window_start: int,
                   window_end: int, truth=None, age_threshold: float = math.inf, seed: int = 0,
                   model_id: str = "") -> MetricsReport:
    if len(window) == 0:
        raise ValueError("cannot evaluate on an empty window")
    probs = predict(model, window)
    buckets = {}
    if truth is not None:
        buckets = age_bucket_report(model, window, truth, age_threshold, reference_time=cycle_time, probs=probs)
    return MetricsReport(
        regime=regime,
        cycle_time=int(cycle_time),
        window_start=int(window_start),
        window_end=int(window_end),
        n_examples=len(window),
        log_loss=log_loss_from_predictions(window.clicks, probs),
        auc=auc_score(window.clicks, probs),
        calibration_error=abs(float(np.mean(probs)) - float(np.mean(window.clicks))),
        buckets=buckets,
        seed=int(seed),
        model_id=model_id,
    )


class MisalignedComparisonError(ValueError):
    pass


@dataclass
class ComparisonRow:
    metric: str
    reference: str
    candidate: str
    per_seed_delta: dict[int, float]
    mean_delta: float
    n_negative: int
    n_positive: int
    n_zero: int


@dataclass
class ComparisonTable:
    rows: list[ComparisonRow]

    COLUMNS = ("metric", "reference", "candidate", "mean_delta", "n_seeds", "n_negative", "n_positive",
               "n_zero", "per_seed_delta")

    def to_tsv(self) -> str:
        lines = ["\t".join(self.COLUMNS)]
        for r in self.rows:
            per_seed = ";".join(f"{s}:{d:.9g}" for s, d in sorted(r.per_seed_delta.items()))
            lines.append("\t".join([
                r.metric, r.reference, r.candidate, f"{r.mean_delta:.9g}", str(len(r.per_seed_delta)),
                str(r.n_negative), str(r.n_positive), str(r.n_zero), per_seed,
            ]))
        return "\n".join(lines) + "\n"


def _key(r: MetricsReport):
    return (r.seed, r.cycle_time, r.window_start, r.window_end, r.n_examples)


def compare_regimes(reports: Iterable[MetricsReport], reference: str, candidate: str,
                    metrics: Sequence[str] = ("log_loss",)) -> ComparisonTable:
    """Paired per-seed deltas ``candidate - reference``.

    Both regimes must have been evaluated on exactly the same
    (seed, window) keys; anything else raises.
    """
    by_regime = defaultdict(dict)
    for r in reports:
        k = _key(r)
        if k in by_regime[r.regime]:
            raise MisalignedComparisonError(f"duplicate report for regime {r.regime!r} at {k}")
        by_regime[r.regime][k] = r
    ref, cand = by_regime.get(reference, {}), by_regime.get(candidate, {})
    if not ref or not cand:
        raise MisalignedComparisonError(f"no reports for {reference!r} or {candidate!r}")
    if set(ref) != set(cand):
        raise MisalignedComparisonError(
            f"{reference!r} and {candidate!r} were evaluated on different seeds/windows"
        )
    rows = []
    for metric in metrics:
        per_seed = defaultdict(list)
        for k in sorted(ref):
            a, b = ref[k].metric(metric), cand[k].metric(metric)
            if a is None or b is None:
                continue
            per_seed[k[0]].append(b - a)
        deltas = {s: float(np.mean(v)) for s, v in per_seed.items()}
        vals = list(deltas.values())
        rows.append(ComparisonRow(
            metric=metric,
            reference=reference,
            candidate=candidate,
            per_seed_delta=deltas,
            mean_delta=float(np.mean(vals)) if vals else 0.0,
            n_negative=sum(v < 0 for v in vals),
            n_positive=sum(v > 0 for v in vals),
            n_zero=sum(v == 0 for v in vals),
        ))
    return ComparisonTable(rows)
