from dataclasses import replace

import numpy as np
import pytest

from freshctr.checkpoint import checkpoint_bytes
from freshctr.datagen import DAY, HOUR
from freshctr.distill import KdConfig
from freshctr.nn_core import predict
from freshctr.pipeline import (
    TEACHER,
    CostRecord,
    DeploymentRegistry,
    Regime,
    RegistryEntry,
    Schedule,
    measure_training_cost,
    run_pipeline,
    train_student,
    train_teacher,
)
from freshctr.training import TrainConfig
from freshctr.warmstart import expand_vocabulary, warm_start

SMALL = Schedule(teacher_window=2 * DAY)


@pytest.fixture(scope="module")
def small_run(tiny_world):
    return run_pipeline(tiny_world, SMALL, list(Regime), TrainConfig(seed=1), n_days=1)


def test_schedule_validation():
    with pytest.raises(ValueError):
        Schedule(student_period=5 * HOUR)
    with pytest.raises(ValueError):
        Schedule(student_period=2 * DAY)
    assert Schedule().students_per_teacher == 6
    assert Schedule().student_ticks(0) == [0, 4 * HOUR, 8 * HOUR, 12 * HOUR, 16 * HOUR, 20 * HOUR]


def test_teacher_on_all_zero_labels(tiny_stream):
    data, _ = tiny_stream
    w = data.window(0, 12 * HOUR)
    zeros = w.take(slice(None))
    zeros.clicks = np.zeros_like(zeros.clicks)
    cfg = TrainConfig(teacher_epochs=2)
    teacher, _, _ = train_teacher(zeros, cfg)
    from freshctr.warmstart import scratch_start

    init = scratch_start(teacher.spec, teacher.vocab, cfg.seed)
    assert teacher.meta["label_rate"] == 0.0
    assert predict(teacher, zeros).mean() < 0.1 * predict(init, zeros).mean()


def test_teacher_loss_decreases_and_is_reproducible(tiny_stream):
    data, _ = tiny_stream
    cfg = TrainConfig(teacher_epochs=3)
    a, _, log = train_teacher(data.window(0, DAY), cfg)
    assert log.epoch_losses[-1] < log.epoch_losses[0]
    b, _, _ = train_teacher(data.window(0, DAY), cfg)
    assert checkpoint_bytes(a) == checkpoint_bytes(b)
    with pytest.raises(ValueError, match="empty"):
        train_teacher(data.window(10 * DAY, 11 * DAY), cfg)


@pytest.fixture(scope="module")
def teacher_and_fresh(tiny_stream):
    data, _ = tiny_stream
    teacher, state, _ = train_teacher(data.window(0, DAY), TrainConfig())
    return teacher, state, data.window(DAY, DAY + 4 * HOUR), data.window(0, DAY)


def test_ws_kd_alpha_zero_equals_ws_only(teacher_and_fresh):
    teacher, _, fresh, _ = teacher_and_fresh
    cfg = TrainConfig(kd=KdConfig(alpha=0.0))
    a, _, _ = train_student(Regime.WS_KD, teacher, None, fresh, cfg, 5)
    b, _, _ = train_student(Regime.WS_ONLY, teacher, None, fresh, cfg, 5)
    for k, v in a.params().items():
        assert v.tobytes() == b.params()[k].tobytes()


def test_kd_only_alpha_zero_equals_baseline(teacher_and_fresh):
    teacher, _, _, hist = teacher_and_fresh
    cfg = TrainConfig(kd=KdConfig(alpha=0.0))
    a, _, _ = train_student(Regime.KD_ONLY, teacher, hist, None, cfg, 5)
    b, _, _ = train_student(Regime.BASELINE, None, hist, None, cfg, 5)
    for k, v in a.params().items():
        assert v.tobytes() == b.params()[k].tobytes()


def test_zero_epoch_ws_only_is_warm_start(teacher_and_fresh):
    teacher, _, fresh, _ = teacher_and_fresh
    s, _, _ = train_student(Regime.WS_ONLY, teacher, None, fresh, TrainConfig(student_epochs=0), 8)
    ws = warm_start(teacher, expand_vocabulary(teacher.vocab, fresh), 8)
    for k, v in ws.params().items():
        assert v.tobytes() == s.params()[k].tobytes()


def test_student_vocab_grows_with_new_items(teacher_and_fresh):
    teacher, _, fresh, _ = teacher_and_fresh
    s, _, _ = train_student(Regime.WS_KD, teacher, None, fresh, TrainConfig())
    assert s.vocab.size("item") > teacher.vocab.size("item")
    assert s.meta["teacher_id"] == teacher.meta["model_id"]


def test_student_carry_optimizer_state(teacher_and_fresh):
    teacher, state, fresh, _ = teacher_and_fresh
    reset, _, _ = train_student(Regime.WS_ONLY, teacher, None, fresh, TrainConfig(), 1, teacher_state=state)
    carried, st, _ = train_student(Regime.WS_ONLY, teacher, None, fresh, TrainConfig(carry_optimizer_state=True),
                                   1, teacher_state=state)
    assert checkpoint_bytes(reset) != checkpoint_bytes(carried)
    assert np.all(st.accumulators["output/bias"] >= state.accumulators["output/bias"])


def test_student_errors(teacher_and_fresh, tiny_stream):
    teacher, _, fresh, _ = teacher_and_fresh
    with pytest.raises(ValueError, match="teacher"):
        train_student(Regime.WS_ONLY, None, None, fresh, TrainConfig())
    with pytest.raises(ValueError, match="teacher"):
        train_student(Regime.KD_ONLY, None, fresh, None, TrainConfig())
    with pytest.raises(ValueError, match="non-empty"):
        train_student(Regime.WS_KD, teacher, None, fresh.window(0, 1), TrainConfig())


def test_one_day_deploys_one_teacher_and_six_students(small_run):
    reg = small_run.registry
    assert len(reg.lane(TEACHER)) == 1
    for r in Regime:
        lane = reg.lane(r.value)
        assert len(lane) == 6
        t0 = SMALL.teacher_window
        assert [e.deploy_time for e in lane] == [t0 + k * 4 * HOUR for k in range(6)]


def test_registry_times_and_lineage(small_run):
    reg = small_run.registry
    times = [e.deploy_time for e in reg.entries]
    assert times == sorted(times)
    ids = {e.model_id for e in reg.entries}
    for e in reg.entries:
        assert e.parent_teacher_id is None or e.parent_teacher_id in ids
    # one active model per regime at any time after the first deployment
    t = SMALL.teacher_window + 9 * HOUR
    assert reg.active("ws_kd", t).deploy_time == SMALL.teacher_window + 8 * HOUR
    assert reg.active("ws_kd", 0) is None
    assert DeploymentRegistry.from_jsonl(reg.to_jsonl()).entries == reg.entries


def test_fresh_only_isolation(small_run):
    for e in small_run.registry.entries:
        reads = [(a, b) for r, a, b, _ in small_run.access_log if r == e.model_id]
        if e.regime in ("ws_only", "ws_kd"):
            assert reads == [(e.deploy_time - 4 * HOUR, e.deploy_time)]
        elif e.regime != TEACHER:
            assert reads == [(e.deploy_time - SMALL.teacher_window, e.deploy_time)]
        assert (e.window_start, e.window_end) == reads[0]


def test_students_of_a_day_share_the_teacher(small_run):
    parents = {e.parent_teacher_id for e in small_run.registry.entries if e.regime != TEACHER}
    assert parents == {f"{TEACHER}@{SMALL.teacher_window}"}


def test_reports_cover_every_deployment(small_run):
    assert len(small_run.reports) == 6 * (len(Regime) + 1)
    for rep in small_run.reports:
        assert rep.window_end - rep.window_start == 4 * HOUR
        assert rep.buckets["new"].n + rep.buckets["old"].n == rep.n_examples


def test_registry_rejects_bad_deployments():
    reg = DeploymentRegistry()
    reg.deploy(RegistryEntry(10, "teacher@10", TEACHER, 0, 10, None))
    with pytest.raises(ValueError):
        reg.deploy(RegistryEntry(10, "teacher@10b", TEACHER, 0, 10, None))
    with pytest.raises(ValueError):
        reg.deploy(RegistryEntry(12, "ws_kd@12", "ws_kd", 8, 12, "teacher@99"))
    reg.deploy(RegistryEntry(12, "ws_kd@12", "ws_kd", 8, 12, "teacher@10"))
    with pytest.raises(ValueError):
        reg.deploy(RegistryEntry(11, "ws_only@11", "ws_only", 7, 11, "teacher@10"))


def test_parallel_regimes_match_sequential(tiny_world, small_run):
    par = run_pipeline(tiny_world, SMALL, list(Regime), TrainConfig(seed=1), n_days=1, max_workers=4)
    assert par.registry.entries == small_run.registry.entries
    assert par.reports == small_run.reports


def test_horizon_must_be_positive(tiny_world):
    with pytest.raises(ValueError):
        run_pipeline(tiny_world, SMALL, [Regime.WS_KD], TrainConfig(), n_days=0)


def test_training_cost(small_run):
    rep = measure_training_cost(small_run)
    assert rep.sample_ratio["ws_kd"] == pytest.approx(12, rel=0.05)
    assert rep.student_samples["baseline"] == pytest.approx(rep.teacher_samples, rel=0.05)
    assert measure_training_cost([]).empty
    recs = [CostRecord("t", TEACHER, 8400, 1, 1, 2.0), CostRecord("s", "ws_kd", 100, 1, 1, 0.1)]
    assert measure_training_cost(recs).sample_ratio["ws_kd"] == 84.0
    assert measure_training_cost(recs).wall_ratio["ws_kd"] == pytest.approx(20.0)


def test_production_scale_sample_ratio():
    # 12M student samples vs 100M teacher samples
    recs = [CostRecord("t", TEACHER, 100_000_000, 1, 1, 1.0), CostRecord("s", "ws_kd", 12_000_000, 1, 1, 1.0)]
    assert measure_training_cost(recs).sample_ratio["ws_kd"] == pytest.approx(8.33, abs=0.01)
