"""Command-line entry point: train, eval, gradcheck, bench, params, gen-data."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import checks, tasks
from .autodiff import ValidationError
from .checkpoint import ChecksumError, load_checkpoint, restore_model, save_checkpoint
from .config import RunConfig, apply_overrides, load_config, save_config
from .network import PRESETS, build_model
from .train import TrainingDiverged, bench_forward, evaluate, fit_latency_exponent, train_loop

CSV_HEADER = "step,task,bucket,train_loss,eval_length,per_symbol_acc,seq_acc,wallclock_s"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_CHECKSUM = 3


def _metrics_row(m, task):
    bucket = str(m.bucket) if m.bucket else ""
    loss = f"{m.train_loss:.6f}" if np.isfinite(m.train_loss) else ""
    length = str(m.eval_length) if m.eval_length else ""
    acc = f"{m.per_symbol_acc:.6f}" if np.isfinite(m.per_symbol_acc) else ""
    seq = f"{m.seq_acc:.6f}" if np.isfinite(m.seq_acc) else ""
    return f"{m.step},{task},{bucket},{loss},{length},{acc},{seq},{m.wallclock_s:.3f}"


def _pair_overrides(extras):
    if len(extras) % 2 != 0:
        raise ValidationError(f"dangling override near {extras[-1]!r}")
    pairs = []
    for key, value in zip(extras[::2], extras[1::2]):
        if not key.startswith("--"):
            raise ValidationError(f"expected --key value, got {key!r}")
        pairs.append((key[2:], value))
    return pairs


def cmd_train(args, extras):
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        apply_overrides(cfg, _pair_overrides(extras))
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    os.makedirs(cfg.outdir, exist_ok=True)
    save_config(cfg, os.path.join(cfg.outdir, "config.cfg"))
    model = build_model(cfg.model_config(), seed=cfg.seed)
    metrics_path = os.path.join(cfg.outdir, "metrics.csv")
    ckpt_path = os.path.join(cfg.outdir, "model.ckpt")
    stream = train_loop(
        model,
        cfg.task,
        cfg.steps,
        seed=cfg.seed,
        batch_size=cfg.batch_size,
        lr=cfg.lr,
        betas=(cfg.beta1, cfg.beta2),
        eps=cfg.eps,
        clip=cfg.clip,
        optimizer_variant=cfg.optimizer,
        buckets=cfg.buckets(),
        eval_every=cfg.eval_every,
        eval_lengths=cfg.eval_length_list(),
        eval_examples=cfg.eval_examples,
        early_stop_acc=cfg.early_stop_acc or None,
        early_stop_length=cfg.early_stop_length or None,
        alphabet=cfg.sort_alphabet,
        timing=cfg.timing,
    )
    try:
        with open(metrics_path, "w") as fh:
            fh.write(CSV_HEADER + "\n")
            for m in stream:
                fh.write(_metrics_row(m, cfg.task) + "\n")
                if m.eval_length:
                    print(
                        f"step {m.step}: eval len {m.eval_length} "
                        f"per-symbol {m.per_symbol_acc:.4f} seq {m.seq_acc:.4f}"
                    )
                    save_checkpoint(ckpt_path, model.named_parameters())
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_ERROR
    save_checkpoint(ckpt_path, model.named_parameters())
    print(f"wrote {metrics_path} and {ckpt_path}")
    return EXIT_OK


def cmd_eval(args, extras):
    config_path = args.config or os.path.join(os.path.dirname(args.checkpoint) or ".", "config.cfg")
    try:
        cfg = load_config(config_path)
        apply_overrides(cfg, _pair_overrides(extras))
        if args.task:
            cfg.task = args.task
    except (FileNotFoundError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    model = build_model(cfg.model_config(), seed=cfg.seed)
    try:
        restore_model(model, load_checkpoint(args.checkpoint))
    except ChecksumError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKSUM
    except (FileNotFoundError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    lengths = [int(x) for x in args.lengths.split(",") if x.strip()]
    csv_path = args.csv or os.path.join(os.path.dirname(args.checkpoint) or ".", "eval.csv")
    new_file = not os.path.exists(csv_path)
    print(f"{'length':>8} {'per_symbol':>12} {'seq':>8}")
    with open(csv_path, "a") as fh:
        if new_file:
            fh.write(CSV_HEADER + "\n")
        for length in lengths:
            acc, seq = evaluate(
                model, cfg.task, length,
                n_examples=args.examples, seed=cfg.seed, alphabet=cfg.sort_alphabet,
            )
            print(f"{length:>8} {acc:>12.4f} {seq:>8.4f}")
            fh.write(f",{cfg.task},,,{length},{acc:.6f},{seq:.6f},0.000\n")
    return EXIT_OK


def cmd_gradcheck(args, extras):
    del extras
    names = list(checks.OP_SUITES) if args.scope == "all" else [args.scope]
    unknown = [n for n in names if n not in checks.OP_SUITES]
    if unknown:
        print(f"error: unknown op {unknown[0]!r}; choose from {sorted(checks.OP_SUITES)}", file=sys.stderr)
        return EXIT_USAGE
    worst_name, worst = None, -1.0
    for name in names:
        err = checks.run_suite(name, points=args.points, seed=args.seed)
        status = "ok" if err < args.tol else "FAIL"
        print(f"{name:>14}: max rel err {err:.3e}  [{status}]")
        if err > worst:
            worst_name, worst = name, err
    print(f"worst offender: {worst_name} ({worst:.3e}, tolerance {args.tol:.1e})")
    return EXIT_OK if worst < args.tol else EXIT_ERROR


def cmd_bench(args, extras):
    del extras
    from .network import ModelConfig

    lengths = [int(x) for x in args.lengths.split(",") if x.strip()]
    if args.max_length:
        lengths = [n for n in lengths if n <= args.max_length]
        if args.max_length not in lengths:
            lengths.append(args.max_length)
    cfg = ModelConfig(
        m=args.m, blocks=args.blocks, n_max=max(lengths), vocab=4, classes=4
    )
    model = build_model(cfg, seed=args.seed)
    results = bench_forward(model, lengths, repeats=args.repeats)
    print("length,mean_seconds,repeats")
    for n, times in results:
        if times:
            print(f"{n},{np.mean(times):.6f},{len(times)}")
        else:
            print(f"{n},unsupported,0")
    try:
        slope, half = fit_latency_exponent(results)
        print(f"fitted log-log exponent: {slope:.3f} +/- {half:.3f} (95% CI)")
    except ValidationError:
        pass
    return EXIT_OK


def cmd_params(args, extras):
    del extras
    if args.preset not in PRESETS:
        print(f"error: unknown preset {args.preset!r}; choose from {sorted(PRESETS)}", file=sys.stderr)
        return EXIT_USAGE
    cfg = PRESETS[args.preset]()
    model = build_model(cfg, seed=0)
    breakdown = model.count_breakdown()
    total = model.parameter_count()
    print(f"preset: {args.preset}")
    for key in sorted(breakdown):
        print(f"  {key:>14}: {breakdown[key]:>12,}")
    print(f"  {'total':>14}: {total:>12,}")
    return EXIT_OK


def cmd_gen_data(args, extras):
    del extras
    if args.task not in tasks.TASKS:
        print(f"error: unknown task {args.task!r}", file=sys.stderr)
        return EXIT_USAGE
    rng = tasks.stream_rng(args.seed, "fixtures")
    examples = [
        tasks.gen_example(args.task, args.max_len, rng, args.alphabet)
        for _ in range(args.count)
    ]
    tasks.dump_examples(examples, args.out)
    print(f"wrote {args.count} {args.task} examples to {args.out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rse",
        description="Residual shuffle-exchange sequence models: train, evaluate, verify.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model; extra --key value pairs override config")
    p.add_argument("--config", help="key=value config file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint over a list of lengths")
    p.add_argument("checkpoint")
    p.add_argument("--task", default="")
    p.add_argument("--lengths", default="128,256,512")
    p.add_argument("--examples", type=int, default=128)
    p.add_argument("--config", help="config file (default: config.cfg next to the checkpoint)")
    p.add_argument("--csv", help="CSV to append accuracy rows to")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference checks of the differentiable ops")
    p.add_argument("scope", nargs="?", default="all")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--points", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="forward-pass latency across lengths plus fitted exponent")
    p.add_argument("--lengths", default="1024,2048,4096,8192,16384,32768,65536")
    p.add_argument("--max-length", type=int, default=0)
    p.add_argument("--m", type=int, default=48)
    p.add_argument("--blocks", type=int, default=1)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("params", help="parameter-count breakdown of a model-shape preset")
    p.add_argument("preset", choices=None)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("gen-data", help="dump task fixtures (one example per line)")
    p.add_argument("--task", default="addition")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--max-len", type=int, default=64)
    p.add_argument("--alphabet", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="fixtures.txt")
    p.set_defaults(func=cmd_gen_data)

    return parser


def main(argv=None):
    parser = build_parser()
    args, extras = parser.parse_known_args(argv)
    try:
        return args.func(args, extras)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
