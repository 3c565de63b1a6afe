import json

import pytest

from freshctr.cli import main
from freshctr.config import DEFAULT_CONFIG, parse_config, parse_duration
from freshctr.dataset_io import read_dataset
from freshctr.datagen import DAY, HOUR
from freshctr.pipeline import Regime

SMALL_CFG = """\
[world]
n_items_initial = 10
n_publishers = 3
n_user_segments = 3
impressions_per_hour = 100
seed = 3

[schedule]
teacher_window = 1d
days = 1

[train]
hidden = 8
"""


def test_parse_duration():
    assert parse_duration("14d") == 14 * DAY
    assert parse_duration("4h") == 4 * HOUR
    assert parse_duration("90") == 90
    assert parse_duration("1.5h") == 5400


def test_default_config_parses():
    cfg = parse_config(DEFAULT_CONFIG)
    assert cfg.schedule.teacher_window == 14 * DAY
    assert cfg.train.kd.alpha == 0.5
    assert cfg.train.hidden == (32, 16)
    assert cfg.regimes == tuple(Regime)


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown"):
        parse_config("[train]\nlearnig_rate = 0.1\n")
    cfg = parse_config("[kd]\nscale_distill_by_T2 = true\n[regimes]\nenabled = ws_kd\n")
    assert cfg.train.kd.scale_distill_by_T2 and cfg.regimes == (Regime.WS_KD,)


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "run.ini").write_text(SMALL_CFG)
    return tmp_path


def test_generate_train_annotate_evaluate(workdir, capsys):
    d = workdir
    cfg = str(d / "run.ini")
    main(["generate", "--config", cfg, "--end", "28h", "--out", str(d / "s.tsv"), "--truth", str(d / "t.json")])
    assert len(read_dataset(d / "s.tsv")) == 28 * 100
    main(["train-teacher", "--config", cfg, "--data", str(d / "s.tsv"), "--end", "24h", "--out", str(d / "T.ckpt")])
    main(["annotate", "--teacher", str(d / "T.ckpt"), "--data", str(d / "s.tsv"), "--out", str(d / "a.tsv")])
    assert read_dataset(d / "a.tsv").soft_targets is not None
    main(["train-student", "--config", cfg, "--regime", "ws_kd", "--teacher", str(d / "T.ckpt"),
          "--data", str(d / "s.tsv"), "--start", "20h", "--end", "24h", "--out", str(d / "S.ckpt")])
    capsys.readouterr()
    main(["evaluate", "--model", str(d / "S.ckpt"), "--data", str(d / "s.tsv"), "--truth", str(d / "t.json"),
          "--start", "24h", "--end", "28h", "--reference-time", "24h"])
    rec = json.loads(capsys.readouterr().out)
    assert rec["n_examples"] == 400 and rec["regime"] == "ws_kd"


def test_run_pipeline_and_compare(workdir, capsys):
    d = workdir
    main(["run-pipeline", "--config", str(d / "run.ini"), "--out", str(d / "out")])
    summary = capsys.readouterr().out
    assert "ws_kd" in summary
    for name in ("registry.jsonl", "metrics.jsonl", "summary.tsv", "costs.jsonl"):
        assert (d / "out" / name).exists()
    assert len(list((d / "out" / "checkpoints").glob("*.ckpt"))) == 1 + 4 * 6
    main(["compare", "--metrics", str(d / "out" / "metrics.jsonl"), "--reference", "ws_only",
          "--candidate", "ws_kd", "--metric", "log_loss", "--metric", "auc"])
    tsv = capsys.readouterr().out
    assert tsv.splitlines()[0].startswith("metric")
    assert len(tsv.splitlines()) == 3


def test_unknown_regime_rejected(workdir):
    with pytest.raises(SystemExit):
        main(["train-student", "--regime", "bogus", "--data", "x", "--out", "y"])


def test_default_config_command(capsys):
    main(["default-config"])
    assert capsys.readouterr().out == DEFAULT_CONFIG
