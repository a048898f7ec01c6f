"""Command-line entry point: synth | train | compress | eval | sweep.

Every subcommand accepts ``--config FILE``, a flat ``key = value`` file whose
keys mirror the long flag names; values in the file override the flags.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

import argparse
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import model as M
from .bench import (SweepConfig, emit_csv, emit_plot_data, format_row, parse_config_text,
                    run_sweep, sweep_config_from)
from .dataset import Dataset, generate_synthetic, load_embeddings, split_identities, split_query_gallery
from .errors import ConfigurationError
from .retrieval import evaluate_config
from .store import QuantizedStore, dequantize, quantize_uniform, read_store, write_store
from .training import TrainConfig, iterative_prune_train, load_model, save_model, train


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _common(p, out_help="output path"):
    p.add_argument("--config", help="key=value file; entries override flags")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help=out_help)


def build_parser():
    parser = _Parser(prog="reidcompress", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic multi-view identity dataset")
    _common(p, "EMB1 file for features and identity labels (required)")
    p.add_argument("--ids", type=int, default=200)
    p.add_argument("--views", type=int, default=10)
    p.add_argument("--feature-dim", type=int, default=48)
    p.add_argument("--intrinsic-dim", type=int, default=8)
    p.add_argument("--noise", type=float, default=0.05)

    p = sub.add_parser("train", help="train an encoder on a dataset store")
    _common(p, "checkpoint path (.npz, required)")
    p.add_argument("--data", help="EMB1 dataset written by synth (required)")
    p.add_argument("--mode", choices=["full", "slice", "lowrank", "prune"], default="full")
    p.add_argument("--dim", type=int, help="compressed size for slice/lowrank/prune")
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--margin", type=float, default=0.3)
    p.add_argument("--qat", action="store_true", help="int8 quantization-aware training")
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--embed-dim", type=int, default=96)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--prune-rounds", type=int, default=5)
    p.add_argument("--retrain-fraction", type=float, default=0.2)
    p.add_argument("--train-fraction", type=float, default=0.5,
                   help="share of identities used for training; the rest is held out")
    p.add_argument("--log", help="per-epoch loss CSV")

    p = sub.add_parser("compress", help="convert an embedding store, optionally to int8")
    _common(p, "output EMB1 file (required)")
    p.add_argument("--in", dest="input", help="input EMB1 file (required)")
    p.add_argument("--model", help="embed raw features with this checkpoint first")
    p.add_argument("--quantize", action="store_true")

    p = sub.add_parser("eval", help="score a checkpoint on the held-out identities")
    _common(p, "CSV path (default: stdout)")
    p.add_argument("--model", help="checkpoint from train (required)")
    p.add_argument("--data", help="EMB1 dataset the model was trained on (required)")
    p.add_argument("--mode", choices=["full", "slice", "lowrank", "prune"])
    p.add_argument("--dim", type=int)
    p.add_argument("--quantize", action="store_true")
    p.add_argument("--queries-per-identity", type=int, default=2)
    p.add_argument("--json", action="store_true", help="print a JSON object instead of CSV")

    p = sub.add_parser("sweep", help="run the method x dim x quantization sweep")
    _common(p, "alias for --out-csv")
    p.add_argument("--out-csv")
    p.add_argument("--out-plot")
    defaults = SweepConfig()
    for f in fields(SweepConfig):
        if f.name == "seed":
            continue
        flag = "--" + f.name.replace("_", "-")
        val = getattr(defaults, f.name)
        if isinstance(val, bool):
            p.add_argument(flag, action="store_true", default=None)
        elif isinstance(val, tuple):
            p.add_argument(flag, default=None, help=f"comma list (default {','.join(map(str, val))})")
        else:
            p.add_argument(flag, type=type(val), default=None, help=f"default {val}")
    return parser


def _apply_config(parser, args):
    if not getattr(args, "config", None):
        return
    try:
        entries = parse_config_text(Path(args.config).read_text())
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {args.config}: {exc}") from exc
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    aliases = {"in": "input"}
    for key, value in entries.items():
        dest = aliases.get(key, key)
        if dest not in actions or dest in ("help", "config"):
            raise UsageError(f"unknown config key {key!r} for {args.command}")
        act = actions[dest]
        if isinstance(act, argparse._StoreTrueAction):
            value = value.lower() in ("1", "true", "yes", "on")
        elif act.type is not None:
            try:
                value = act.type(value)
            except ValueError as exc:
                raise UsageError(f"config key {key!r}: {exc}") from exc
        if act.choices is not None and value not in act.choices:
            raise UsageError(f"config key {key!r}: {value!r} not in {sorted(act.choices)}")
        setattr(args, dest, value)


def _require(args, *names):
    for name in names:
        if getattr(args, name, None) in (None, ""):
            flag = "--in" if name == "input" else "--" + name.replace("_", "-")
            raise UsageError(f"{args.command}: {flag} is required")


def _load_dataset(path):
    feats, labels = load_embeddings(path)
    if len(labels) != len(feats):
        raise ConfigurationError(f"{path} has no label block")
    return Dataset.from_arrays(feats, labels)


def _mode_from(kind, dim, selection=None):
    if kind == "full":
        return M.CompressionMode.full()
    if dim is None:
        raise UsageError(f"--dim is required for mode {kind}")
    if kind == "slice":
        return M.CompressionMode.slice(dim)
    if kind == "lowrank":
        return M.CompressionMode.lowrank(dim)
    if selection is None:
        raise ConfigurationError("prune mode needs a pruned checkpoint")
    if len(selection) != dim:
        raise ConfigurationError(f"checkpoint keeps {len(selection)} dims, not {dim}")
    return M.CompressionMode.pruned(selection)


def cmd_synth(args):
    _require(args, "out")
    ds = generate_synthetic(args.ids, args.views, args.feature_dim, args.intrinsic_dim,
                            args.noise, args.seed)
    n = write_store(args.out, ds.features, ds.labels)
    print(f"wrote {len(ds)} samples ({ds.num_identities} ids) to {args.out} [{n} bytes]")


def cmd_train(args):
    _require(args, "data", "out")
    ds = _load_dataset(args.data)
    train_ds, _ = split_identities(ds, args.train_fraction, args.seed)
    kind = args.mode
    mode = M.CompressionMode.full() if kind == "prune" else _mode_from(kind, args.dim)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
                      triplet_margin=args.margin, seed=args.seed, mode=mode, qat=args.qat,
                      retrain_fraction=args.retrain_fraction, prune_rounds=args.prune_rounds,
                      hidden=args.hidden, embed_dim=args.embed_dim)
    if kind == "prune":
        if args.dim is None:
            raise UsageError("--dim is required for mode prune")
        tm = iterative_prune_train(train_ds, cfg, args.dim, log_path=args.log)
    else:
        tm = train(train_ds, cfg, log_path=args.log)
    save_model(tm, args.out, seed=args.seed, train_fraction=args.train_fraction)
    last = tm.history[-1].total if tm.history else float("nan")
    print(f"trained {tm.mode.label()} for {tm.epochs_run} epochs, final loss {last:.4f} -> {args.out}")


def cmd_compress(args):
    _require(args, "input", "out")
    data, labels = read_store(args.input)
    if isinstance(data, QuantizedStore):
        data = dequantize(data)
    if args.model:
        tm, _ = load_model(args.model)
        data = tm.embed(data)
    if args.quantize:
        kw = {}
        if args.model and tm.qat_scale is not None:
            kw["scale"] = tm.qat_scale
        out = quantize_uniform(data, labels, **kw) if len(data) else QuantizedStore(
            np.zeros((0, data.shape[1]), np.int8), 1.0)
    else:
        out = data
    n = write_store(args.out, out, labels)
    print(f"wrote {len(data)} x {data.shape[1]} {'int8' if args.quantize else 'float32'} -> {args.out} [{n} bytes]")


def cmd_eval(args):
    _require(args, "model", "data")
    tm, meta = load_model(args.model)
    ds = _load_dataset(args.data)
    _, test_ds = split_identities(ds, meta.get("train_fraction", 0.5), meta.get("seed", args.seed))
    split = split_query_gallery(test_ds, args.queries_per_identity, args.seed)
    mode = tm.mode
    if args.mode is not None:
        sel = tm.mode.selection
        dim = args.dim if args.dim is not None else tm.mode.k
        mode = _mode_from(args.mode, dim, sel)
    elif args.dim is not None and args.dim != mode.retrieval_dim(tm.embed_dim):
        raise ConfigurationError(f"model stores {mode.retrieval_dim(tm.embed_dim)} dims, not {args.dim}")
    rep = evaluate_config(tm, split, test_ds, mode, quantize_storage=args.quantize)
    text = rep.to_json() + "\n" if args.json else rep.csv_header() + "\n" + rep.csv_row() + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_sweep(args):
    out_csv = args.out_csv or args.out
    _require(argparse.Namespace(command="sweep", out_csv=out_csv), "out_csv")
    settings = {"seed": args.seed}
    for f in fields(SweepConfig):
        val = getattr(args, f.name, None)
        if f.name != "seed" and val is not None:
            settings[f.name] = val
    cfg = sweep_config_from(settings)
    rows = run_sweep(cfg, progress=lambda r: print(format_row(r, True), file=sys.stderr))
    emit_csv(rows, out_csv, timing=cfg.timing)
    if args.out_plot:
        emit_plot_data(rows, args.out_plot)
    print(f"{len(rows)} rows -> {out_csv}")


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "compress": cmd_compress,
            "eval": cmd_eval, "sweep": cmd_sweep}


def cli_main(argv=None):
    parser = build_parser()
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # --help
            return int(exc.code or 0)
        if args.command is None:
            raise UsageError(parser.format_usage())
        _apply_config(parser, args)
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return 2
    except (ConfigurationError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(cli_main())
