"""`ddsp-amp` command line entry point.

Every command is non-interactive. On failure it prints a single
``error: ...`` line on stderr and exits with status 1 (2 for usage errors).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import audio_io, checkpoint, evaluator, plots, synth
from .amp import KNOBS
from .config import ConfigError, load_run_config
from .trainer import TrainConfig, TrainingError, load_dataset, save_dataset, train

SPLIT_NAMES = {"seen": "test-seen", "unseen": "test-unseen"}


class CliError(Exception):
    pass


def parse_knobs(text: str) -> np.ndarray:
    try:
        vals = np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise CliError(f"knobs must be comma-separated numbers, got {text!r}") from exc
    if vals.shape != (len(KNOBS),):
        raise CliError(f"expected {len(KNOBS)} knob values ({','.join(KNOBS)}), got {len(vals)}")
    if np.any(vals < 0) or np.any(vals > 1) or not np.all(np.isfinite(vals)):
        raise CliError(f"knob values must lie in [0, 1], got {text}")
    return vals


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def cmd_train(args) -> None:
    cfg = load_run_config(args.config)
    model = checkpoint.build_model(cfg.model, seed=cfg.seed)
    dataset = load_dataset(cfg.data)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    result = train(model, dataset, cfg.train, log_path=out / "train_log.jsonl")
    ckpt = out / "model.ckpt"
    checkpoint.save(ckpt, model, {"seed": cfg.seed, "best_epoch": result.best_epoch,
                                  "epochs_run": len(result.history)})
    plots.plot_training_history(result.history, out / "train_history.png")
    print(f"checkpoint = {ckpt}")
    print(f"best_epoch = {result.best_epoch}")
    print(f"best_val_loss = {min(r.val_loss for r in result.history):.6f}")


def cmd_eval(args) -> None:
    model, _ = checkpoint.load(args.checkpoint)
    dataset = load_dataset(args.data)
    report = evaluator.evaluate(model, dataset, SPLIT_NAMES[args.split], block_size=args.block_size)
    sys.stdout.write(report.to_text())
    if args.out:
        prefix = Path(args.out)
        _write(prefix.with_name(prefix.name + ".txt"), report.to_text())
        _write(prefix.with_name(prefix.name + ".csv"), report.to_csv())
        plots.plot_eval_report(report, prefix.with_name(prefix.name + ".png"))


def cmd_process(args) -> None:
    knobs = parse_knobs(args.knobs)
    model, _ = checkpoint.load(args.checkpoint)
    x = audio_io.read_wav(args.input)
    y = evaluator.stream(model, knobs, x, args.block_size)
    audio_io.write_wav(args.output, y)


def cmd_bench(args) -> None:
    model, header = checkpoint.load(args.checkpoint)
    ops = evaluator.count_ops(model)
    x = np.random.default_rng(0).uniform(-0.5, 0.5, int(args.seconds * audio_io.SAMPLE_RATE))
    knobs = np.full(len(KNOBS), 0.5)
    evaluator.stream(model, knobs, x[:4096], args.block_size)  # compile kernels outside the timing
    t0 = time.perf_counter()
    evaluator.stream(model, knobs, x, args.block_size)
    dt = time.perf_counter() - t0
    lines = [f"arch = {header['arch']}", f"params = {evaluator.count_params(model)}",
             f"ops_per_sample = {ops.total}", f"adds = {ops.adds}", f"muls = {ops.muls}",
             f"divs = {ops.divs}", f"nonlinearity_calls = {ops.nonlinearity_calls}",
             f"samples_per_second = {len(x) / dt:.0f}", f"realtime_factor = {len(x) / dt / audio_io.SAMPLE_RATE:.2f}"]
    print("\n".join(lines))


def cmd_inspect(args) -> None:
    model, _ = checkpoint.load(args.checkpoint)
    knobs = parse_knobs(args.knobs)
    if args.probe == "hysteresis":
        result = evaluator.probe_distortion_curve(model, args.stage or "transformer", args.freq, args.amp, knobs)
        draw = plots.plot_distortion_curve
        print(f"# loop_area = {result.area:.9g}", file=sys.stderr)
    else:
        result = evaluator.probe_frequency_response(model, args.stage or "tonestack", knobs)
        draw = plots.plot_frequency_response
    if args.out:
        prefix = Path(args.out)
        _write(prefix.with_name(prefix.name + ".csv"), result.to_csv())
        draw(result, prefix.with_name(prefix.name + ".png"))
    else:
        sys.stdout.write(result.to_csv())


def cmd_synth(args) -> None:
    ds = synth.synthetic_dataset(args.seconds, seed=args.seed, unseen_seconds=args.unseen_seconds)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds.pairs)} pairs to {args.out}")


def cmd_ladder(args) -> None:
    """Train and evaluate several presets on one dataset; writes a summary CSV and bar chart."""
    dataset = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name in args.models.split(","):
        model = checkpoint.build_model(name, seed=args.seed)
        cfg = TrainConfig(segment_length=model.segment_length, max_epochs=args.epochs,
                          batch_size=args.batch_size, seed=args.seed)
        t0 = time.perf_counter()
        result = train(model, dataset, cfg, log_path=out / f"{name}_log.jsonl")
        checkpoint.save(out / f"{name}.ckpt", model, {"seed": args.seed, "best_epoch": result.best_epoch})
        seen = evaluator.evaluate(model, dataset, "test-seen")
        unseen = evaluator.evaluate(model, dataset, "test-unseen")
        rows.append((name, model.arch, seen.mae, seen.mrstft, unseen.mae, unseen.mrstft,
                     seen.ops_per_sample, seen.params, time.perf_counter() - t0))
        print(f"{name}: seen mae {seen.mae:.4f} mrstft {seen.mrstft:.3f}  "
              f"unseen mae {unseen.mae:.4f} mrstft {unseen.mrstft:.3f}  ops {seen.ops_per_sample}", flush=True)
    header = "model,arch,seen_mae,seen_mrstft,unseen_mae,unseen_mrstft,ops_per_sample,params,train_seconds\n"
    body = "".join(f"{r[0]},{r[1]},{r[2]:.6f},{r[3]:.6f},{r[4]:.6f},{r[5]:.6f},{r[6]},{r[7]},{r[8]:.1f}\n"
                   for r in rows)
    _write(out / "ladder.csv", header + body)
    plots.plot_ladder(rows, out / "ladder.png")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ddsp-amp", description="Differentiable DSP guitar amplifier modeling.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="train a model from a run config")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on held-out audio")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", choices=sorted(SPLIT_NAMES), default="seen")
    s.add_argument("--out", help="write PREFIX.txt, PREFIX.csv and PREFIX.png")
    s.add_argument("--block-size", type=int, default=8192)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("process", help="render a WAV file through a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--knobs", required=True, help="gain,bass,mid,treble,master in [0, 1]")
    s.add_argument("--block-size", type=int, default=8192)
    s.set_defaults(func=cmd_process)

    s = sub.add_parser("bench", help="report ops/sample, parameter count and throughput")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--seconds", type=float, default=2.0)
    s.add_argument("--block-size", type=int, default=8192)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("inspect", help="probe a stage's distortion curve or filter response")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--probe", choices=("hysteresis", "response"), required=True)
    s.add_argument("--stage", choices=evaluator.PROBE_STAGES)
    s.add_argument("--freq", type=float, default=100.0)
    s.add_argument("--amp", type=float, default=0.5)
    s.add_argument("--knobs", default="0.5,0.5,0.5,0.5,0.5")
    s.add_argument("--out", help="write PREFIX.csv and PREFIX.png instead of CSV on stdout")
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("synth", help="write a synthetic dataset from the built-in reference amp")
    s.add_argument("--out", required=True)
    s.add_argument("--seconds", type=float, default=36.0, help="seconds per seen knob setting")
    s.add_argument("--unseen-seconds", type=float, default=12.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ladder", help="train and compare several presets (A-F)")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--models", default="A,B,C,D,E,F")
    s.add_argument("--epochs", type=int, default=100)
    s.add_argument("--batch-size", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_ladder)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except (CliError, ConfigError, checkpoint.CheckpointError, audio_io.AudioFormatError, TrainingError,
            FileNotFoundError, KeyError, ValueError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
