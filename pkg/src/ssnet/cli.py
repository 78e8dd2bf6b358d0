"""``ssnet`` command line: gen-data, train, eval, gradcheck, report.

Every command writes the resolved config to ``<out>/config.json``. Outputs
are deterministic for a given config; wall-clock timestamps only go to the
``<out>/run.log`` sidecar.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config
from .evaluate import (
    CSV_HEADER,
    POLICIES,
    ModelPolicy,
    aggregate_metrics,
    evaluate_policy,
    read_metrics_rows,
    write_events_csv,
    write_metrics_csv,
)
from .train import CheckpointError, TrainConfig, build_samples, load_checkpoint, save_checkpoint, train
from .world import DatasetError, generate_mix, load_dataset, save_dataset
from .zoo import build_model

EXIT_OK, EXIT_CONFIG, EXIT_USAGE, EXIT_CHECK = 0, 1, 2, 3
COMMANDS = ("gen-data", "train", "eval", "gradcheck", "report")
METHOD_NAMES = {"ssn": "SSN", "tiny-residual": "TinyResidual", "tiny-vit": "TinyViT"}

log = logging.getLogger("ssnet")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ssnet", description="SSN collision-avoidance experiments")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("inputs", nargs="*", help="metrics CSVs (report only)")
    p.add_argument("--config", metavar="PATH")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="K=V")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--jobs", type=int, default=1, metavar="N")
    return p


def _start(cfg: ExperimentConfig, command: str) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    handler = logging.FileHandler(out / "run.log", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.handlers = [handler]
    log.setLevel(logging.INFO)
    log.info("%s started", command)
    return out


def _train_scenes(cfg: ExperimentConfig, out: Path):
    if cfg.training.dataset:
        return load_dataset(cfg.training.dataset)
    if (out / "dataset.jsonl").exists():
        return load_dataset(out / "dataset.jsonl")
    return generate_mix(cfg.scenarios, cfg.seed)


def _eval_scenes(cfg: ExperimentConfig):
    if cfg.eval.dataset:
        return load_dataset(cfg.eval.dataset)
    return generate_mix(cfg.eval.scenarios, cfg.eval.seed)


def cmd_gen_data(cfg: ExperimentConfig, out: Path, args) -> int:
    train_scenes = generate_mix(cfg.scenarios, cfg.seed)
    save_dataset(train_scenes, out / "dataset.jsonl")
    save_dataset(_eval_scenes(cfg), out / "heldout.jsonl")
    log.info("wrote %d training scenes", len(train_scenes))
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, out: Path, args) -> int:
    model_cfg = cfg.model_dict()
    model = build_model(model_cfg)
    raster = cfg.raster.build()
    t = cfg.training
    samples = build_samples(_train_scenes(cfg, out), model.horizon, raster, t.sample_stride, t.sample_offset)
    tcfg = TrainConfig(t.epochs, t.batch_size, cfg.seed, t.learning_rate, t.optimizer, t.max_steps, t.position_weight, t.yaw_weight)
    started = time.perf_counter()
    result = train(model, samples, tcfg)
    log.info("trained %d steps on %d samples in %.1fs", result.steps, len(samples), time.perf_counter() - started)
    save_checkpoint(model, out / "model.ckpt", result.steps)
    with open(out / "loss_curve.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        for i, loss in enumerate(result.loss_curve, start=1):
            w.writerow([i, repr(loss)])
    return EXIT_OK


def cmd_eval(cfg: ExperimentConfig, out: Path, args) -> int:
    raster = cfg.raster.build()
    if cfg.eval.policy == "model":
        ckpt = cfg.eval.checkpoint or str(out / "model.ckpt")
        model = load_checkpoint(ckpt)
        policy = ModelPolicy(model)
        method = cfg.eval.method or METHOD_NAMES.get(model.config.kind, model.config.kind)
    else:
        policy = POLICIES[cfg.eval.policy](cfg.model_dict().get("horizon", 12))
        method = cfg.eval.method or cfg.eval.policy
    scenes = _eval_scenes(cfg)
    result = evaluate_policy(policy, scenes, raster, jobs=max(1, args.jobs))
    report = aggregate_metrics(result.events, result.frames_simulated, method)
    write_metrics_csv([report], out / "metrics.csv")
    write_events_csv(result.events, out / "events.csv")
    print(",".join(CSV_HEADER))
    print(",".join(report.row()))
    return EXIT_OK


def cmd_gradcheck(cfg: ExperimentConfig, out: Path, args) -> int:
    from .checks import run_gradient_suite

    lines: list[str] = []

    def echo(line):
        print(line)
        lines.append(line)

    ok, _ = run_gradient_suite(seeds=(cfg.seed,), echo=echo)
    (out / "gradcheck.txt").write_text("\n".join(l for l in lines if not l.startswith("gradient suite")) + "\n", encoding="utf-8")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_report(cfg: ExperimentConfig, out: Path, args) -> int:
    inputs = list(args.inputs) or list(cfg.report_inputs)
    if not inputs:
        raise ConfigError("report_inputs: no metrics CSVs given")
    rows = []
    for path in inputs:
        rows.extend(read_metrics_rows(path))
    with open(out / "table.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        w.writerows(rows)
    print(",".join(CSV_HEADER))
    for row in rows:
        print(",".join(row))
    return EXIT_OK


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "report": cmd_report,
}


def run(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    if args.inputs and args.command != "report":
        parser.print_usage(sys.stderr)
        print(f"ssnet: error: unexpected arguments {args.inputs}", file=sys.stderr)
        return EXIT_USAGE
    overrides = list(args.overrides)
    if args.out:
        overrides.append(f"out={json.dumps(args.out)}")
    try:
        cfg = load_config(args.config, overrides)
        out = _start(cfg, args.command)
        code = HANDLERS[args.command](cfg, out, args)
    except ConfigError as exc:
        print(f"ssnet: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"ssnet: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    log.info("%s finished with exit code %d", args.command, code)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
