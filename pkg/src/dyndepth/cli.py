"""Command line interface.

Subcommands:

* ``gen-data``   synthesize a labelled TSV dataset (optionally pre-split)
* ``train``      two-phase training on a TSV file, writes a checkpoint
* ``sweep``      tau x seed training grid plus baselines and trade-off CSV
* ``eval``       evaluate a checkpoint under one exit method
* ``curve``      aggregate trade-off points, report AUC per method
* ``histogram``  per-block execution counts for a checkpoint
* ``audit``      randomized adversarial audit of the exit bound

Every subcommand writes machine-readable CSV (where applicable) and a
short human summary to standard output.  Exit status is 0 on success, 1
on any runtime error (with a message on stderr), 2 on bad usage.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from .baselines import entropy_threshold_grid, patience_grid
from .checkpoint import CheckpointError, load_checkpoint, load_state_dict, save_checkpoint
from .config import (
    DEFAULT_TAU_GRID,
    ConfigError,
    ModelConfig,
    TrainConfig,
    load_config_file,
)
from .data import DataError, SchemaError, SynthSpec, Vocab, gen_synthetic, load_tsv, split_dataset, write_tsv
from .halting import DactModel, run_bound_audit_suite
from .harness import (
    curve_summaries,
    evaluate,
    fmt,
    layer_histogram,
    mean_ponder,
    read_tradeoff_csv,
    write_curve_csv,
    write_histogram_csv,
    write_tradeoff_csv,
    write_csv,
    write_trace_csv,
)
from .training import TrainingDiverged, phase1_snapshot, sweep_tau, train_baseline_heads, train_phase1, train_phase2


def _parse_seeds(text: str):
    try:
        return [int(s) for s in text.split(",") if s.strip() != ""]
    except ValueError:
        raise ValueError(f"bad --seeds value {text!r}, expected comma-separated integers") from None


def _parse_taus(text: str):
    try:
        return [float(s) for s in text.split(",") if s.strip() != ""]
    except ValueError:
        raise ValueError(f"bad --taus value {text!r}, expected comma-separated reals") from None


def _configs(args) -> tuple:
    if getattr(args, "config", None):
        model_cfg, train_cfg = load_config_file(args.config)
    else:
        model_cfg, train_cfg = ModelConfig(), TrainConfig()
    if getattr(args, "tau", None) is not None:
        train_cfg = replace(train_cfg, tau=args.tau)
    if getattr(args, "seed", None) is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
    return model_cfg, train_cfg


def _fit_config_to_data(model_cfg: ModelConfig, examples, vocab) -> ModelConfig:
    num_classes = max(ex.label for ex in examples) + 1
    return replace(model_cfg, vocab_size=vocab.size, num_classes=max(num_classes, 2))


def _load_model_and_vocab(args):
    if not os.path.exists(args.checkpoint):
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    vocab_path = args.vocab or args.checkpoint + ".vocab"
    if not os.path.exists(vocab_path):
        raise FileNotFoundError(f"vocabulary file not found: {vocab_path}")
    return load_checkpoint(args.checkpoint), Vocab.load(vocab_path)


def _knob_for(args) -> float:
    if args.method == "entropy":
        return args.threshold
    if args.method == "patience":
        return float(args.patience)
    if args.method == "dact":
        return args.tau if args.tau is not None else 0.0
    return 0.0


# -- subcommands ------------------------------------------------------------------


def _cmd_gen_data(args) -> int:
    spec = SynthSpec(num_classes=args.classes, easy_frac=args.easy_frac)
    examples = gen_synthetic(args.seed, args.n, spec)
    if args.val_out:
        train, val = split_dataset(examples, args.val_fraction)
        write_tsv(args.out, train)
        write_tsv(args.val_out, val)
        print(f"wrote {len(train)} train examples to {args.out}")
        print(f"wrote {len(val)} validation examples to {args.val_out}")
    else:
        write_tsv(args.out, examples)
        print(f"wrote {len(examples)} examples to {args.out}")
    easy = sum(1 for ex in examples if ex.difficulty == "easy")
    print(f"difficulty mix: {easy} easy / {len(examples) - easy} hard; classes: {args.classes}")
    return 0


def _cmd_train(args) -> int:
    examples = load_tsv(args.data)
    model_cfg, train_cfg = _configs(args)
    vocab = Vocab.build(examples)
    model_cfg = _fit_config_to_data(model_cfg, examples, vocab)
    model = DactModel(model_cfg, seed=train_cfg.seed)

    history1 = train_phase1(model, examples, vocab, train_cfg)
    if history1:
        print(f"phase 1: {len(history1)} epochs, final loss {fmt(history1[-1].loss)}")
    if args.baseline_heads:
        history2 = train_baseline_heads(model, examples, vocab, train_cfg)
        if history2:
            print(f"baseline heads: {len(history2)} epochs, final loss {fmt(history2[-1].loss)}")
    else:
        history2 = train_phase2(model, examples, vocab, train_cfg)
        if history2:
            last = history2[-1]
            print(
                f"phase 2 (tau={fmt(train_cfg.tau)}): {len(history2)} epochs, final loss "
                f"{fmt(last.loss)} (task {fmt(last.task_loss)}, ponder {fmt(last.ponder_penalty)})"
            )

    save_checkpoint(args.out, model)
    vocab_path = args.vocab or args.out + ".vocab"
    vocab.save(vocab_path)
    print(f"saved checkpoint to {args.out} (vocab: {vocab_path})")
    return 0


def _cmd_sweep(args) -> int:
    examples = load_tsv(args.data)
    val = load_tsv(args.val_data) if args.val_data else None
    model_cfg, train_cfg = _configs(args)
    vocab = Vocab.build(examples)
    model_cfg = _fit_config_to_data(model_cfg, examples, vocab)
    taus = list(DEFAULT_TAU_GRID) if args.grid == "default" else _parse_taus(args.taus)
    if not taus:
        raise ValueError("sweep needs at least one tau (use --grid default or --taus)")
    seeds = _parse_seeds(args.seeds)

    os.makedirs(args.out_dir, exist_ok=True)
    vocab.save(os.path.join(args.out_dir, "vocab.txt"))

    snapshots = {}
    for seed in seeds:
        snapshots[seed] = phase1_snapshot(model_cfg, train_cfg, examples, vocab, seed)
        print(f"phase 1 done for seed {seed}")

    def progress(cell):
        status = "ok" if cell.ok else f"diverged: {cell.error}"
        print(f"tau={fmt(cell.tau)} seed={cell.seed}: {status}")

    cells = sweep_tau(model_cfg, train_cfg, examples, vocab, taus, seeds,
                      progress=progress, snapshots=snapshots)
    for cell in cells:
        if cell.ok:
            path = os.path.join(args.out_dir, f"dact_tau{cell.tau:g}_seed{cell.seed}.ckpt")
            save_checkpoint(path, cell.model)

    baselines = {}
    for seed in seeds:
        model = DactModel(model_cfg, seed=seed)
        load_state_dict(model, snapshots[seed])
        cfg = replace(train_cfg, seed=seed)
        train_baseline_heads(model, examples, vocab, cfg)
        baselines[seed] = model
        save_checkpoint(os.path.join(args.out_dir, f"baseline_seed{seed}.ckpt"), model)
        print(f"baseline heads done for seed {seed}")

    if val is not None:
        points = []
        ponder_rows = []
        for cell in cells:
            if not cell.ok:
                continue
            points.append(evaluate(cell.model, val, vocab, "dact", knob=cell.tau, seed=cell.seed))
            ponder_rows.append((cell.tau, cell.seed, mean_ponder(cell.model, val, vocab)))
        for seed, model in baselines.items():
            for threshold in entropy_threshold_grid(model_cfg.num_classes):
                points.append(evaluate(model, val, vocab, "entropy", knob=threshold, seed=seed))
            for patience in patience_grid(model_cfg.num_blocks):
                points.append(evaluate(model, val, vocab, "patience", knob=float(patience), seed=seed))
            points.append(evaluate(model, val, vocab, "static", knob=0.0, seed=seed))
        tradeoff_path = os.path.join(args.out_dir, "tradeoff.csv")
        write_tradeoff_csv(tradeoff_path, points)
        write_csv(os.path.join(args.out_dir, "ponder.csv"), ("tau", "seed", "mean_ponder"),
                    sorted(ponder_rows))
        print(f"wrote {len(points)} trade-off points to {tradeoff_path}")
        for cell in cells:
            if cell.ok:
                pt = next(p for p in points if p.method == "dact" and p.knob == cell.tau and p.seed == cell.seed)
                print(f"  dact tau={fmt(cell.tau)} seed={cell.seed}: "
                      f"efficiency {fmt(pt.efficiency)}, accuracy {fmt(pt.performance)}")
    return 0


def _cmd_eval(args) -> int:
    model, vocab = _load_model_and_vocab(args)
    examples = load_tsv(args.data)
    if args.trace and args.method != "dact":
        raise ValueError("--trace records halting state and requires --method dact")
    rows = [] if args.trace else None
    point = evaluate(model, examples, vocab, args.method, knob=_knob_for(args),
                     seed=args.seed if args.seed is not None else 0,
                     metric=args.metric, trace=rows)
    if args.out:
        write_tradeoff_csv(args.out, [point])
        print(f"wrote trade-off point to {args.out}")
    if args.trace:
        write_trace_csv(args.trace, rows, model.config.num_classes)
        print(f"wrote {len(rows)} trace rows to {args.trace}")
    print(f"method={point.method} knob={fmt(point.knob)} seed={point.seed}: "
          f"efficiency {fmt(point.efficiency)}, {args.metric} {fmt(point.performance)}")
    return 0


def _cmd_curve(args) -> int:
    points = read_tradeoff_csv(args.points)
    curve, summaries = curve_summaries(points)
    write_curve_csv(args.out, curve)
    print(f"wrote {len(curve)} curve points to {args.out}")
    for s in summaries:
        span = f"efficiency range [{fmt(s.efficiency_lo)}, {fmt(s.efficiency_hi)}]"
        if s.auc is None:
            print(f"{s.method}: AUC undefined (single point), {span}")
        else:
            print(f"{s.method}: AUC {fmt(s.auc)} over {span}")
    return 0


def _cmd_histogram(args) -> int:
    model, vocab = _load_model_and_vocab(args)
    examples = load_tsv(args.data)
    counts = layer_histogram(model, examples, vocab, args.method, _knob_for(args))
    write_histogram_csv(args.out, counts)
    print(f"wrote histogram to {args.out}")
    print("block usage: " + ", ".join(f"{b}:{c}" for b, c in enumerate(counts, start=1)))
    return 0


def _cmd_audit(args) -> int:
    checked, failures = run_bound_audit_suite(trials=args.trials, seed=args.seed,
                                              num_classes=args.classes, max_steps=args.max_steps)
    print(f"audited {checked} bound-holding states ({args.classes} classes, "
          f"up to {args.max_steps} remaining blocks): {failures} failures")
    return 1 if failures else 0


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dyndepth",
                                     description="adaptive-depth transformer classifier tools")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthesize a labelled TSV dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=1200, help="number of examples")
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--easy-frac", type=float, default=0.7)
    p.add_argument("--out", required=True)
    p.add_argument("--val-out", default=None, help="also write a disjoint validation split")
    p.add_argument("--val-fraction", type=float, default=0.25)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="two-phase training, writes a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--baseline-heads", action="store_true",
                   help="fit frozen-backbone per-block heads instead of phase 2")
    p.add_argument("--out", default="model.ckpt")
    p.add_argument("--vocab", default=None, help="vocab output path (default: <out>.vocab)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sweep", help="tau x seed grid with baselines and trade-off CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--val-data", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--grid", choices=["default"], default=None,
                   help="'default' selects the standard five-value tau grid")
    p.add_argument("--taus", default="", help="comma-separated tau values (alternative to --grid)")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("eval", help="evaluate a checkpoint under one exit method")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", default=None, help="vocab path (default: <checkpoint>.vocab)")
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=["dact", "entropy", "patience", "static"], default="dact")
    p.add_argument("--tau", type=float, default=None, help="knob label for dact points")
    p.add_argument("--threshold", type=float, default=0.2)
    p.add_argument("--patience", type=int, default=2)
    p.add_argument("--seed", type=int, default=None, help="seed label for the CSV row")
    p.add_argument("--metric", choices=["accuracy", "f1", "mcc"], default="accuracy")
    p.add_argument("--out", default=None, help="write the point as a one-row trade-off CSV")
    p.add_argument("--trace", default=None, help="write per-block halting trace CSV (dact only)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("curve", help="aggregate trade-off points, report AUC per method")
    p.add_argument("--points", required=True, help="tradeoff.csv produced by sweep/eval")
    p.add_argument("--out", default="curve.csv")
    p.set_defaults(func=_cmd_curve)

    p = sub.add_parser("histogram", help="per-block execution counts")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=["dact", "entropy", "patience", "static"], default="dact")
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--threshold", type=float, default=0.2)
    p.add_argument("--patience", type=int, default=2)
    p.add_argument("--out", default="histogram.csv")
    p.set_defaults(func=_cmd_histogram)

    p = sub.add_parser("audit", help="randomized adversarial audit of the exit bound")
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--max-steps", type=int, default=6)
    p.set_defaults(func=_cmd_audit)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DataError, SchemaError, ConfigError, CheckpointError, TrainingDiverged,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
