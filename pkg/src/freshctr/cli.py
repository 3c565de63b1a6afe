"""Command line entry point: ``freshctr <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import canonical_json, load_checkpoint, save_checkpoint
from .config import DEFAULT_CONFIG, RunConfig, load_config, parse_config, parse_duration
from .dataset_io import read_dataset, read_truth, write_dataset, write_truth
from .datagen import generate_stream
from .distill import annotate_file
from .evaluate import MetricsReport, compare_regimes, evaluate_model
from .pipeline import Regime, config_hash, run_pipeline, summary_table, train_student, train_teacher

log = logging.getLogger("freshctr")


def _config(path) -> RunConfig:
    return load_config(path) if path else parse_config(DEFAULT_CONFIG)


def cmd_default_config(args):
    sys.stdout.write(DEFAULT_CONFIG)


def cmd_generate(args):
    cfg = _config(args.config)
    data, truth = generate_stream(cfg.world, parse_duration(args.start), parse_duration(args.end))
    write_dataset(args.out, data)
    if args.truth:
        write_truth(args.truth, truth)
    log.info("wrote %d impressions to %s", len(data), args.out)


def _window(data, args):
    if args.start is None and args.end is None:
        return data
    lo = parse_duration(args.start) if args.start is not None else int(data.timestamps[0])
    hi = parse_duration(args.end) if args.end is not None else int(data.timestamps[-1]) + 1
    return data.window(lo, hi)


def cmd_train_teacher(args):
    cfg = _config(args.config)
    data = _window(read_dataset(args.data), args)
    model, state, tlog = train_teacher(data, cfg.train, model_id=Path(args.out).stem,
                                       cfg_hash=config_hash(cfg.train))
    save_checkpoint(model, state, args.out)
    log.info("teacher: %d samples, epoch losses %s", tlog.samples, tlog.epoch_losses)


def cmd_train_student(args):
    cfg = _config(args.config)
    regime = Regime(args.regime)
    teacher, teacher_state = load_checkpoint(args.teacher) if args.teacher else (None, None)
    data = _window(read_dataset(args.data), args)
    hist, fresh = (None, data) if regime.warm else (data, None)
    model, state, slog = train_student(regime, teacher, hist, fresh, cfg.train, teacher_state=teacher_state,
                                       model_id=Path(args.out).stem, cfg_hash=config_hash(cfg.train))
    save_checkpoint(model, state, args.out)
    log.info("%s student: %d samples, epoch losses %s", regime.value, slog.samples, slog.epoch_losses)


def cmd_annotate(args):
    teacher, _ = load_checkpoint(args.teacher)
    n = annotate_file(teacher, args.data, args.out, args.temperature)
    log.info("annotated %d impressions", n)


def cmd_run_pipeline(args):
    cfg = _config(args.config)
    days = args.days if args.days is not None else cfg.days
    res = run_pipeline(cfg.world, cfg.schedule, cfg.regimes, cfg.train, days, out_dir=args.out,
                       max_workers=args.workers)
    sys.stdout.write(summary_table(res))
    log.info("outputs in %s (%d deployments)", args.out, len(res.registry.entries))


def cmd_evaluate(args):
    model, _ = load_checkpoint(args.model)
    data = _window(read_dataset(args.data), args)
    truth = read_truth(args.truth) if args.truth else None
    t0 = int(data.timestamps[0]) if len(data) else 0
    ref = parse_duration(args.reference_time) if args.reference_time is not None else t0
    rep = evaluate_model(model, data, regime=model.meta.get("regime", args.label), cycle_time=ref,
                         window_start=t0, window_end=int(data.timestamps[-1]) + 1 if len(data) else 0,
                         truth=truth, age_threshold=parse_duration(args.age_threshold),
                         model_id=model.meta.get("model_id", ""))
    sys.stdout.write(canonical_json(rep.to_record()).decode() + "\n")


def cmd_compare(args):
    reports = []
    for path in args.metrics:
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                reports.append(MetricsReport.from_record(json.loads(line)))
    table = compare_regimes(reports, args.reference, args.candidate, args.metric or ["log_loss"])
    sys.stdout.write(table.to_tsv())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="freshctr", description="Warm-start + distillation CTR training simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        sp = sub.add_parser(name, help=help)
        sp.set_defaults(func=fn)
        return sp

    def windowed(sp):
        sp.add_argument("--start", help="window start (e.g. 14d); inclusive")
        sp.add_argument("--end", help="window end; exclusive")

    add("default-config", cmd_default_config, "print the default INI config")

    sp = add("generate", cmd_generate, "write a synthetic impression stream")
    sp.add_argument("--config")
    sp.add_argument("--start", default="0")
    sp.add_argument("--end", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--truth", help="also write the world-truth JSON sidecar")

    sp = add("train-teacher", cmd_train_teacher, "train a teacher from scratch on a dataset window")
    sp.add_argument("--config")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    windowed(sp)

    sp = add("train-student", cmd_train_student, "train one student under a regime")
    sp.add_argument("--config")
    sp.add_argument("--regime", required=True, choices=[r.value for r in Regime])
    sp.add_argument("--teacher")
    sp.add_argument("--data", required=True, help="fresh window for ws_* regimes, history otherwise")
    sp.add_argument("--out", required=True)
    windowed(sp)

    sp = add("annotate", cmd_annotate, "precompute teacher soft targets into a dataset file")
    sp.add_argument("--teacher", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--temperature", type=float, default=2.0)

    sp = add("run-pipeline", cmd_run_pipeline, "simulate the teacher/student deployment cadence")
    sp.add_argument("--config")
    sp.add_argument("--out", required=True)
    sp.add_argument("--days", type=int)
    sp.add_argument("--workers", type=int, default=1)

    sp = add("evaluate", cmd_evaluate, "score a checkpoint on a dataset window")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--truth")
    sp.add_argument("--age-threshold", default="24h")
    sp.add_argument("--reference-time")
    sp.add_argument("--label", default="model")
    windowed(sp)

    sp = add("compare", cmd_compare, "paired per-seed deltas between two regimes")
    sp.add_argument("--metrics", nargs="+", required=True, help="metrics.jsonl files")
    sp.add_argument("--reference", required=True)
    sp.add_argument("--candidate", required=True)
    sp.add_argument("--metric", action="append")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    args.func(args)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
