"""Teacher/student deployment cadence on a simulated clock.

At every teacher tick a teacher is trained from scratch on the preceding
``teacher_window``. At every student tick each requested regime trains a
model and deploys it; the deployed model is scored on the following
``student_period`` of traffic, which no model has seen.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

import numpy as np

from . import _rng
from .checkpoint import canonical_json, save_checkpoint
from .datagen import DAY, HOUR, WorldConfig, generate_stream
from .distill import precompute_soft_targets
from .evaluate import MetricsReport, compare_regimes, evaluate_model
from .nn_core import CtrModel, OptimizerState, Vocabulary, default_spec
from .records import Dataset
from .training import TrainConfig, TrainingLog, fit
from .warmstart import carry_optimizer_state, expand_vocabulary, scratch_start, warm_start

TEACHER = "teacher"


class Regime(str, Enum):
    BASELINE = "baseline"
    KD_ONLY = "kd_only"
    WS_ONLY = "ws_only"
    WS_KD = "ws_kd"

    @property
    def warm(self) -> bool:
        return self in (Regime.WS_ONLY, Regime.WS_KD)

    @property
    def distills(self) -> bool:
        return self in (Regime.KD_ONLY, Regime.WS_KD)


@dataclass(frozen=True)
class Schedule:
    teacher_period: int = DAY
    teacher_window: int = 14 * DAY
    student_period: int = 4 * HOUR
    student_window: int = 4 * HOUR

    def __post_init__(self):
        for name in ("teacher_period", "teacher_window", "student_period", "student_window"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.student_period > self.teacher_period:
            raise ValueError("student_period must not exceed teacher_period")
        if self.teacher_period % self.student_period:
            raise ValueError("teacher_period must be a multiple of student_period")

    @property
    def students_per_teacher(self) -> int:
        return self.teacher_period // self.student_period

    def teacher_ticks(self, n_days: int) -> list[int]:
        return [self.teacher_window + d * self.teacher_period for d in range(n_days)]

    def student_ticks(self, teacher_tick: int) -> list[int]:
        return [teacher_tick + k * self.student_period for k in range(self.students_per_teacher)]

    def horizon(self, n_days: int) -> int:
        return self.teacher_window + n_days * self.teacher_period


def config_hash(*parts) -> str:
    blob = canonical_json([p.to_dict() if hasattr(p, "to_dict") else p for p in parts])
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class RegistryEntry:
    deploy_time: int
    model_id: str
    regime: str
    window_start: int
    window_end: int
    parent_teacher_id: str | None
    digest: str = ""


class DeploymentRegistry:
    """Append-only deployment log.

    Each lane (a regime, or ``"teacher"``) has strictly increasing deploy
    times; entries across lanes are ordered by time.
    """

    def __init__(self):
        self.entries: list[RegistryEntry] = []
        self._ids: set[str] = set()

    def deploy(self, entry: RegistryEntry):
        if entry.model_id in self._ids:
            raise ValueError(f"model id {entry.model_id!r} already deployed")
        if self.entries and entry.deploy_time < self.entries[-1].deploy_time:
            raise ValueError("deployments must be appended in time order")
        lane = [e for e in self.entries if e.regime == entry.regime]
        if lane and entry.deploy_time <= lane[-1].deploy_time:
            raise ValueError(f"deploy time {entry.deploy_time} not after previous {entry.regime!r} deployment")
        if entry.parent_teacher_id is not None and entry.parent_teacher_id not in self._ids:
            raise ValueError(f"unknown parent teacher {entry.parent_teacher_id!r}")
        self.entries.append(entry)
        self._ids.add(entry.model_id)

    def active(self, regime: str, t: int) -> RegistryEntry | None:
        found = None
        for e in self.entries:
            if e.regime == regime and e.deploy_time <= t:
                found = e
        return found

    def lane(self, regime: str) -> list[RegistryEntry]:
        return [e for e in self.entries if e.regime == regime]

    def get(self, model_id: str) -> RegistryEntry:
        for e in self.entries:
            if e.model_id == model_id:
                return e
        raise KeyError(model_id)

    def to_jsonl(self) -> str:
        return "".join(canonical_json(asdict(e)).decode() + "\n" for e in self.entries)

    @classmethod
    def from_jsonl(cls, text: str) -> "DeploymentRegistry":
        reg = cls()
        for line in text.splitlines():
            if line.strip():
                reg.deploy(RegistryEntry(**json.loads(line)))
        return reg


class DataSource:
    """Window access to a stream that remembers who read what."""

    def __init__(self, data: Dataset):
        self.data = data
        self.access_log: list[tuple[str, int, int, int]] = []

    def window(self, reader: str, t_start: int, t_end: int) -> Dataset:
        out = self.data.window(t_start, t_end)
        self.access_log.append((reader, int(t_start), int(t_end), len(out)))
        return out

    def reads_by(self, reader: str) -> list[tuple[int, int]]:
        return [(a, b) for r, a, b, _ in self.access_log if r == reader]


def _label_rate(data: Dataset) -> float:
    return float(np.mean(data.clicks)) if len(data) else 0.0


def train_teacher(history: Dataset, cfg: TrainConfig, seed: int | None = None,
                  model_id: str = TEACHER, cfg_hash: str = "") -> tuple[CtrModel, OptimizerState, TrainingLog]:
    """Scratch model trained with plain cross entropy on ``history``."""
    if len(history) == 0:
        raise ValueError("cannot train a teacher on an empty window")
    seed = cfg.seed if seed is None else seed
    spec = default_spec(history.fields, cfg.item_dim, cfg.other_dim, cfg.hidden)
    vocab = expand_vocabulary(Vocabulary(history.fields), history)
    model = scratch_start(spec, vocab, seed)
    state = OptimizerState.zeros_like(model)
    log = fit(model, state, history, epochs=cfg.teacher_epochs, batch_size=cfg.batch_size,
              learning_rate=cfg.learning_rate, seed=seed)
    model.meta.update(model_id=model_id, label_rate=_label_rate(history), config_hash=cfg_hash,
                      epoch_losses=[float(x) for x in log.epoch_losses],
                      window=[int(history.timestamps[0]), int(history.timestamps[-1]) + 1])
    return model, state, log


def train_student(regime: Regime | str, teacher: CtrModel | None, history: Dataset | None,
                  fresh: Dataset | None, cfg: TrainConfig, seed: int | None = None, *,
                  teacher_state: OptimizerState | None = None, model_id: str = "",
                  cfg_hash: str = "") -> tuple[CtrModel, OptimizerState, TrainingLog]:
    regime = Regime(regime)
    seed = cfg.seed if seed is None else seed
    if (regime.warm or regime.distills) and teacher is None:
        raise ValueError(f"regime {regime.value} needs a teacher")
    data = fresh if regime.warm else history
    if data is None or len(data) == 0:
        which = "fresh" if regime.warm else "history"
        raise ValueError(f"regime {regime.value} needs a non-empty {which} window")

    if regime.warm:
        model = warm_start(teacher, expand_vocabulary(teacher.vocab, data), seed)
        if cfg.carry_optimizer_state and teacher_state is not None:
            state = carry_optimizer_state(teacher_state, model)
        else:
            state = OptimizerState.zeros_like(model)
    else:
        spec = default_spec(data.fields, cfg.item_dim, cfg.other_dim, cfg.hidden)
        model = scratch_start(spec, expand_vocabulary(Vocabulary(data.fields), data), seed)
        state = OptimizerState.zeros_like(model)

    kd = None
    if regime.distills:
        data = precompute_soft_targets(teacher, data, cfg.kd.temperature)
        kd = cfg.kd
    log = fit(model, state, data, epochs=cfg.student_epochs, batch_size=cfg.batch_size,
              learning_rate=cfg.learning_rate, seed=seed, kd=kd)
    model.meta.update(model_id=model_id, regime=regime.value, label_rate=_label_rate(data),
                      config_hash=cfg_hash, epoch_losses=[float(x) for x in log.epoch_losses],
                      window=[int(data.timestamps[0]), int(data.timestamps[-1]) + 1])
    if teacher is not None:
        model.meta["teacher_id"] = teacher.meta.get("model_id")
        model.meta["teacher_config_hash"] = teacher.meta.get("config_hash")
    return model, state, log


@dataclass
class CostRecord:
    model_id: str
    lane: str
    samples: int
    epochs: int
    steps: int
    wall_time: float


@dataclass
class PipelineResult:
    registry: DeploymentRegistry
    reports: list[MetricsReport]
    costs: list[CostRecord]
    access_log: list[tuple[str, int, int, int]]
    models: dict[str, CtrModel] = field(default_factory=dict)
    config_hash: str = ""

    def reports_for(self, lane: str) -> list[MetricsReport]:
        return [r for r in self.reports if r.regime == lane]


def _model_seed(base: int, lane: str, t: int) -> int:
    # students of all regimes at one tick share a seed so regimes stay paired
    tag = 1 if lane == TEACHER else 2
    return _rng.derive_seed(base, tag, t)


def run_pipeline(world: WorldConfig, schedule: Schedule, regimes: Iterable[Regime | str], cfg: TrainConfig,
                 n_days: int = 1, *, data: Dataset | None = None, truth=None, out_dir=None,
                 max_workers: int = 1, keep_models: bool = True) -> PipelineResult:
    """Simulate ``n_days`` teacher periods after a ``teacher_window`` warmup."""
    regimes = sorted({Regime(r) for r in regimes}, key=lambda r: list(Regime).index(r))
    if n_days < 1:
        raise ValueError("the horizon must cover at least teacher_window + one teacher_period")
    horizon = schedule.horizon(n_days)
    if data is None:
        data, truth = generate_stream(world, 0, horizon)
    elif len(data) and data.timestamps[-1] < horizon - schedule.student_period:
        raise ValueError("supplied data does not cover the simulation horizon")
    source = DataSource(data)
    chash = config_hash(world, asdict(schedule), cfg, [r.value for r in regimes])
    registry = DeploymentRegistry()
    reports, costs, models = [], [], {}

    def train_one(regime, t, teacher, teacher_state, teacher_id):
        model_id = f"{regime.value}@{t}"
        try:
            if regime.warm:
                hist = None
                fresh = source.window(model_id, t - schedule.student_window, t)
            else:
                hist = source.window(model_id, t - schedule.teacher_window, t)
                fresh = None
            model, _, log = train_student(regime, teacher, hist, fresh, cfg, _model_seed(cfg.seed, "student", t),
                                          teacher_state=teacher_state, model_id=model_id, cfg_hash=chash)
        except Exception as exc:
            raise RuntimeError(f"training {model_id} failed: {exc}") from exc
        return regime, model_id, model, log, (hist if hist is not None else fresh)

    pool = ThreadPoolExecutor(max_workers) if max_workers > 1 else None
    try:
        for t_teacher in schedule.teacher_ticks(n_days):
            teacher_id = f"{TEACHER}@{t_teacher}"
            try:
                history = source.window(teacher_id, t_teacher - schedule.teacher_window, t_teacher)
                teacher, teacher_state, tlog = train_teacher(
                    history, cfg, _model_seed(cfg.seed, TEACHER, t_teacher), teacher_id, chash)
            except Exception as exc:
                raise RuntimeError(f"training {teacher_id} failed: {exc}") from exc
            registry.deploy(_entry(t_teacher, teacher_id, TEACHER, history, t_teacher - schedule.teacher_window,
                                   t_teacher, None, out_dir, teacher))
            costs.append(CostRecord(teacher_id, TEACHER, tlog.samples, tlog.epochs, tlog.steps, tlog.wall_time))
            if keep_models:
                models[teacher_id] = teacher

            for t in schedule.student_ticks(t_teacher):
                eval_window = source.window(f"eval@{t}", t, t + schedule.student_period)
                jobs = [(r, t, teacher, teacher_state, teacher_id) for r in regimes]
                results = list(pool.map(lambda a: train_one(*a), jobs)) if pool else [train_one(*a) for a in jobs]
                reports.append(_report(teacher, TEACHER, teacher_id, t, schedule, eval_window, truth, cfg))
                for regime, model_id, model, log, used in results:
                    if regime.warm:
                        w0 = t - schedule.student_window
                    else:
                        w0 = t - schedule.teacher_window
                    registry.deploy(_entry(t, model_id, regime.value, used, w0, t, teacher_id, out_dir, model))
                    costs.append(CostRecord(model_id, regime.value, log.samples, log.epochs, log.steps, log.wall_time))
                    reports.append(_report(model, regime.value, model_id, t, schedule, eval_window, truth, cfg))
                    if keep_models:
                        models[model_id] = model
    finally:
        if pool:
            pool.shutdown()

    result = PipelineResult(registry, reports, costs, source.access_log, models, chash)
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


def _entry(t, model_id, lane, used, w0, w1, parent, out_dir, model) -> RegistryEntry:
    from .checkpoint import model_digest

    digest = model_digest(model)
    if out_dir is not None:
        ckpt_dir = Path(out_dir) / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, None, ckpt_dir / f"{model_id.replace('@', '_')}.ckpt")
    return RegistryEntry(int(t), model_id, lane, int(w0), int(w1), parent, digest)


def _report(model, lane, model_id, t, schedule, window, truth, cfg) -> MetricsReport:
    return evaluate_model(model, window, regime=lane, cycle_time=t, window_start=t,
                          window_end=t + schedule.student_period, truth=truth,
                          age_threshold=schedule.teacher_period, seed=cfg.seed, model_id=model_id)


SUMMARY_METRICS = ("log_loss", "auc", "calibration_error", "new.true_ctr_error", "old.true_ctr_error")


def summary_table(result: PipelineResult, reference: str = TEACHER) -> str:
    lanes = sorted({r.regime for r in result.reports} - {reference})
    rows = []
    for lane in lanes:
        rows.extend(compare_regimes(result.reports, reference, lane, SUMMARY_METRICS).rows)
    from .evaluate import ComparisonTable

    return ComparisonTable(rows).to_tsv()


def write_outputs(result: PipelineResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "registry.jsonl").write_text(result.registry.to_jsonl(), encoding="utf-8")
    (out / "metrics.jsonl").write_text(
        "".join(canonical_json(r.to_record()).decode() + "\n" for r in result.reports), encoding="utf-8")
    (out / "summary.tsv").write_text(summary_table(result), encoding="utf-8")
    # wall times vary between runs; kept apart from the reproducible outputs
    (out / "costs.jsonl").write_text(
        "".join(canonical_json(asdict(c)).decode() + "\n" for c in result.costs), encoding="utf-8")
    return out


@dataclass
class CostReport:
    records: list[CostRecord]
    teacher_samples: float = 0.0
    student_samples: dict[str, float] = field(default_factory=dict)
    sample_ratio: dict[str, float] = field(default_factory=dict)
    teacher_wall: float = 0.0
    student_wall: dict[str, float] = field(default_factory=dict)
    wall_ratio: dict[str, float] = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return not self.records


def measure_training_cost(run: PipelineResult | Iterable[CostRecord]) -> CostReport:
    """Mean samples and wall time per teacher vs per student, by regime."""
    records = list(run.costs if isinstance(run, PipelineResult) else run)
    report = CostReport(records)
    teachers = [c for c in records if c.lane == TEACHER]
    if not teachers:
        return report
    report.teacher_samples = float(np.mean([c.samples for c in teachers]))
    report.teacher_wall = float(np.mean([c.wall_time for c in teachers]))
    for lane in sorted({c.lane for c in records} - {TEACHER}):
        lane_recs = [c for c in records if c.lane == lane]
        s = float(np.mean([c.samples for c in lane_recs]))
        w = float(np.mean([c.wall_time for c in lane_recs]))
        report.student_samples[lane] = s
        report.student_wall[lane] = w
        report.sample_ratio[lane] = report.teacher_samples / s if s else float("inf")
        report.wall_ratio[lane] = report.teacher_wall / w if w else float("inf")
    return report
