"""Command-line entry point: ``tsf <command> ...``.

Commands
--------
describe         configuration and parameter table
params           parameter count (``--json`` for the full report)
flops            inference MACs for ``--views`` crops
sweep            TFLOPs of JointST and DividedST along frames or crop size
gradcheck        finite-difference check; exit status 1 above 1e-4
train            SGD on a synthetic task, writes a checkpoint and a CSV log
eval             accuracy and confusion of a checkpoint on a fresh task set
rollout          attention-rollout heatmaps (CSV + PGM) for one clip file
compare-schemes  DividedST vs Space over several seeds

``TSF_THREADS`` caps BLAS worker threads (default 1).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from ..config import ModelConfig, Scheme, load_config
from ..cost import flop_count, param_count, sweep, sweep_csv
from ..embedding import read_clip
from ..errors import TimesformerError
from ..model import attention_rollout, load_checkpoint, save_checkpoint, write_heatmap_csv, write_pgm
from .data import make_task
from .gradients import model_grad_check
from .train import TrainSpec, evaluate, make_splits, train

log = logging.getLogger("timesformer")

GRADCHECK_LIMIT = 1e-4
DEFAULT_SEEDS = "0,1,2"


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _load_spec(source: str | None) -> TrainSpec:
    return TrainSpec.load(source) if source else TrainSpec()


def _print_json(data) -> None:
    print(json.dumps(data, indent=2, sort_keys=True, default=str))


# ---------------------------------------------------------------- commands

def cmd_describe(args) -> int:
    config = load_config(args.config)
    report = param_count(config)
    g = config.grid
    print("configuration")
    for key, value in config.to_dict().items():
        print(f"  {key:<24} {value}")
    print(f"  {'patches per frame (N)':<24} {g.n}")
    print(f"  {'tokens (N*F + 1)':<24} {g.tokens}")
    print(f"  {'comparisons per patch':<24} {report.comparisons_per_patch}")
    print("parameters")
    for name, count in report.params.items():
        print(f"  {name:<24} {count:>14,}")
    print(f"  {'total':<24} {report.params_total:>14,}  ({report.params_total / 1e6:.2f}M)")
    return 0


def cmd_params(args) -> int:
    report = param_count(load_config(args.config))
    if args.json:
        _print_json({"params_total": report.params_total, "params": report.params,
                     "comparisons_per_patch": report.comparisons_per_patch})
    else:
        print(f"{report.params_total} ({report.params_total / 1e6:.2f}M)")
    return 0


def cmd_flops(args) -> int:
    report = flop_count(load_config(args.config), args.views)
    if args.json:
        _print_json(report.to_dict())
    else:
        print(f"{report.flops_total} MACs = {report.tflops:.4f} TFLOPs ({args.views} views)")
    return 0


def cmd_sweep(args) -> int:
    rows = sweep(args.axis, args.values, load_config(args.config), args.views)
    text = sweep_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_gradcheck(args) -> int:
    err = model_grad_check(load_config(args.config), args.samples, args.seed)
    ok = err < GRADCHECK_LIMIT
    print(f"max relative error {err:.3e} ({'ok' if ok else 'FAILED'}, limit {GRADCHECK_LIMIT:g})")
    return 0 if ok else 1


def cmd_train(args) -> int:
    config = load_config(args.config)
    spec = _load_spec(args.spec)
    if args.seed is not None:
        spec = TrainSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    train_set, eval_set = make_splits(args.task, config, spec)
    if args.subset is not None:
        train_set = train_set.subset(args.subset)
    params, tlog = train(config, train_set, spec, eval_set)
    save_checkpoint(args.out, params)
    if args.log:
        Path(args.log).write_text(tlog.to_csv())
    print(f"eval accuracy {tlog.eval_acc[-1]:.4f}  final loss {tlog.train_loss[-1]:.6f}  "
          f"({tlog.wall_time:.1f}s)")
    return 0


def cmd_eval(args) -> int:
    params = load_checkpoint(args.checkpoint)
    c = params.config
    dataset = make_task(args.task, args.seed, args.size, (c.F, c.H, c.W))
    acc, confusion = evaluate(params, c, dataset)
    if args.json:
        _print_json({"accuracy": acc, "confusion": confusion.tolist()})
    else:
        print(f"accuracy {acc:.4f} on {len(dataset)} {args.task} clips (seed {args.seed})")
        print("confusion (rows: true, cols: predicted)")
        for row in confusion:
            print("  " + " ".join(f"{v:5d}" for v in row))
    return 0


def cmd_rollout(args) -> int:
    params = load_checkpoint(args.checkpoint)
    clip = read_clip(args.clip)
    heat = attention_rollout(clip, params)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_heatmap_csv(out / "heatmap.csv", heat)
    p = params.config.P
    for t, frame in enumerate(heat):
        write_pgm(out / f"heatmap_{t:03d}.pgm", np.kron(frame, np.ones((p, p))))
    print(f"wrote {len(heat)} frames to {out}")
    return 0


def cmd_compare_schemes(args) -> int:
    base = load_config(args.config)
    spec = _load_spec(args.spec)
    rows = []
    for seed in args.seeds:
        run_spec = TrainSpec.from_dict({**spec.to_dict(), "seed": seed})
        for scheme in args.schemes:
            config = base.replace(scheme=Scheme(scheme))
            train_set, eval_set = make_splits(args.task, config, run_spec)
            _, tlog = train(config, train_set, run_spec, eval_set)
            rows.append([args.task, config.scheme.value, seed, f"{tlog.eval_acc[-1]:.6g}",
                         f"{tlog.train_loss[-1]:.6g}", f"{tlog.wall_time:.2f}"])
            log.info("%s %s seed %d: eval %.4f", args.task, config.scheme.value, seed, tlog.eval_acc[-1])
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task", "scheme", "seed", "eval_acc", "final_loss", "seconds"])
        w.writerows(rows)
    for r in rows:
        print(",".join(str(v) for v in r))
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsf", description="TimeSformer attention schemes on numpy.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def config_arg(p, required=True):
        p.add_argument("--config", required=required, default=None if required else "tiny",
                       help="JSON file, inline JSON, or preset name (base, hr, long, tiny)")

    p = sub.add_parser("describe", help="configuration and parameter table")
    config_arg(p)
    p.set_defaults(fn=cmd_describe)

    p = sub.add_parser("params", help="parameter count")
    config_arg(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_params)

    p = sub.add_parser("flops", help="inference MACs")
    config_arg(p)
    p.add_argument("--views", type=int, default=1)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_flops)

    p = sub.add_parser("sweep", help="JointST vs DividedST TFLOPs along one axis")
    p.add_argument("--axis", choices=("frames", "crop"), required=True)
    p.add_argument("--values", type=_int_list, required=True)
    config_arg(p)
    p.add_argument("--views", type=int, default=1)
    p.add_argument("--out", help="CSV path (stdout if omitted)")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    config_arg(p)
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("train", help="train on a synthetic task")
    config_arg(p)
    p.add_argument("--task", choices=("spatial", "temporal"), required=True)
    p.add_argument("--spec", help="TrainSpec JSON file or inline JSON (defaults if omitted)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="per-epoch CSV log path")
    p.add_argument("--seed", type=int, help="override the spec's seed")
    p.add_argument("--subset", type=int, help="train on the first N examples only")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", choices=("spatial", "temporal"), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=TrainSpec().eval_size)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("rollout", help="attention-rollout heatmaps for one clip")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--clip", required=True, help="TSFC clip file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_rollout)

    p = sub.add_parser("compare-schemes", help="train DividedST and Space across seeds")
    p.add_argument("--task", choices=("spatial", "temporal"), required=True)
    p.add_argument("--out", required=True)
    config_arg(p, required=False)
    p.add_argument("--spec")
    p.add_argument("--seeds", type=_int_list, default=_int_list(DEFAULT_SEEDS))
    p.add_argument("--schemes", type=lambda s: s.split(","), default=[Scheme.DIVIDED.value, Scheme.SPACE.value])
    p.set_defaults(fn=cmd_compare_schemes)
    return parser


def thread_count() -> int:
    raw = os.environ.get("TSF_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise SystemExit(f"TSF_THREADS must be a positive integer, got {raw!r}")
    if n < 1:
        raise SystemExit(f"TSF_THREADS must be a positive integer, got {raw!r}")
    return n


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    with threadpool_limits(limits=thread_count()):
        try:
            return args.fn(args)
        except (TimesformerError, ValueError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2


if __name__ == "__main__":
    sys.exit(main())
