"""Seeded experiments comparing regimes on purpose-built worlds."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .datagen import DAY, HOUR, WorldConfig, generate_stream
from .evaluate import log_loss
from .pipeline import Regime, Schedule, TEACHER, run_pipeline, train_student, train_teacher
from .training import TrainConfig


@dataclass(frozen=True)
class ForgettingSetup:
    world: WorldConfig = field(default_factory=lambda: WorldConfig(new_item_rate=0.0, shift_sd=1.0))
    train: TrainConfig = field(default_factory=TrainConfig)
    phase_a: int = 7 * DAY
    fresh: int = 4 * HOUR
    holdout: int = 4 * HOUR


@dataclass
class ForgettingResult:
    seed: int
    log_loss_a: dict[str, float]
    log_loss_b: dict[str, float]


def forgetting_run(seed: int, setup: ForgettingSetup = ForgettingSetup()) -> ForgettingResult:
    """Teacher on phase A, students on the first hours after an abrupt shift.

    The A holdout replays the same world with the shift switched off, over
    the same hours as the B holdout, so it is A-distribution traffic that
    no model trained on.
    """
    s = setup.phase_a
    world = replace(setup.world, seed=seed, shift_time=s)
    cfg = replace(setup.train, seed=seed)
    end = s + setup.fresh + setup.holdout
    data, _ = generate_stream(world, 0, end)
    holdout_a, _ = generate_stream(replace(world, shift_time=None), s + setup.fresh, end)
    holdout_b = data.window(s + setup.fresh, end)
    fresh = data.window(s, s + setup.fresh)

    teacher, _, _ = train_teacher(data.window(0, s), cfg, model_id=f"{TEACHER}@{s}")
    models = {TEACHER: teacher}
    for regime in (Regime.WS_ONLY, Regime.WS_KD):
        models[regime.value], _, _ = train_student(regime, teacher, None, fresh, cfg)
    return ForgettingResult(
        seed,
        {k: log_loss(m, holdout_a) for k, m in models.items()},
        {k: log_loss(m, holdout_b) for k, m in models.items()},
    )


@dataclass(frozen=True)
class FreshnessSetup:
    world: WorldConfig = field(default_factory=lambda: WorldConfig(new_item_rate=0.5))
    schedule: Schedule = field(default_factory=Schedule)
    train: TrainConfig = field(default_factory=TrainConfig)
    days: int = 1


@dataclass
class FreshnessResult:
    seed: int
    teacher_error: dict[str, float]
    student_error: dict[str, float]
    counts: dict[str, int]

    def relative_improvement(self, bucket: str) -> float:
        t = self.teacher_error[bucket]
        return (t - self.student_error[bucket]) / t


def _pooled_error(reports, bucket: str) -> tuple[float, int]:
    n = sum(r.buckets[bucket].n for r in reports)
    if n == 0:
        return float("nan"), 0
    err = sum(r.buckets[bucket].true_ctr_error * r.buckets[bucket].n for r in reports if r.buckets[bucket].n)
    return err / n, n


def freshness_run(seed: int, setup: FreshnessSetup = FreshnessSetup(),
                  regime: Regime = Regime.WS_KD) -> FreshnessResult:
    """Pooled |predicted - true| CTR error of the students vs the stale daily teacher."""
    res = run_pipeline(replace(setup.world, seed=seed), setup.schedule, [regime],
                       replace(setup.train, seed=seed), setup.days, keep_models=False)
    students = res.reports_for(regime.value)
    teachers = res.reports_for(TEACHER)
    teacher_err, student_err, counts = {}, {}, {}
    for b in ("new", "old"):
        teacher_err[b], counts[b] = _pooled_error(teachers, b)
        student_err[b], _ = _pooled_error(students, b)
    return FreshnessResult(seed, teacher_err, student_err, counts)


def seeds_where(flags) -> int:
    return int(np.sum(list(flags)))
