"""Command line: boolfield gen|train|harden|eval|evolve|bench."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from .config import RunConfig, load_config
from .errors import ConfigError, PBMParseError, TrainingDiverged, UsageError
from .modelfile import load_model, save_model
from .network import HARD, SOFT, harden_network
from .packed import benchmark, pack, packed_evolve, packed_upscale, unpack
from .pbm import read_pbm, write_frames
from .tasks import generate, load_dataset, save_dataset
from .training import evaluate, train, write_metric_log

log = logging.getLogger("boolfield")


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    return cfg


def cmd_gen(args):
    cfg = _run_config(args)
    if args.samples is not None:
        cfg.task.samples = args.samples
    ds = generate(cfg.task_spec())
    path = save_dataset(ds, args.out)
    print(f"wrote {len(ds)} pairs to {path}")


def cmd_train(args):
    cfg = _run_config(args)
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
    if args.lr is not None:
        cfg.train.learning_rate = args.lr
    ds = load_dataset(args.data)
    if tuple(ds.inputs.shape[1:]) != cfg.network.grid:
        log.info("using the dataset grid %s instead of %s", ds.inputs.shape[1:], cfg.network.grid)
        cfg.network.grid = tuple(ds.inputs.shape[1:])
    net = cfg.build_network()
    net, history = train(net, ds, cfg.train_config())
    save_model(net, args.model_out)
    metrics = args.metrics or str(Path(args.model_out).with_suffix(".metrics.csv"))
    write_metric_log(history, metrics)
    last = history[-1]
    print(f"epochs={len(history)} loss={last['loss']:.6g} soft_acc={last['soft_acc']:.6g} "
          f"hard_acc={last['hard_acc']:.6g}")


def cmd_harden(args):
    net = harden_network(load_model(args.model))
    save_model(net, args.out)
    if args.netlist_dir:
        d = Path(args.netlist_dir)
        d.mkdir(parents=True, exist_ok=True)
        for i, lp in enumerate(net.layers):
            (d / f"layer{i}_kernel.net").write_text(lp.kernel.to_netlist())
            (d / f"layer{i}_query.net").write_text(lp.q_head.circuit.to_netlist())
            (d / f"layer{i}_key.net").write_text(lp.k_head.circuit.to_netlist())
        if net.upscale_circuit is not None:
            (d / "upscale.net").write_text(net.upscale_circuit.to_netlist())
    print(f"wrote hardened model to {args.out}")


def cmd_eval(args):
    net = load_model(args.model)
    if args.mode == "packed" and not net.is_hard:
        raise UsageError("--mode packed needs a hardened model (run 'boolfield harden' first)")
    metrics = evaluate(net, load_dataset(args.data), args.mode)
    print(json.dumps({"mode": args.mode, **metrics}, sort_keys=True))


def cmd_evolve(args):
    if args.steps < 1:
        raise UsageError("--steps must be >= 1")
    net = harden_network(load_model(args.model))
    field = read_pbm(args.seed_image)
    pf = packed_upscale(pack(field), net)
    frames = [field]
    for _ in range(args.steps):
        pf = packed_evolve(pf, net, 1)
        frames.append(unpack(pf)[..., 0])
    paths = write_frames(frames, args.out)
    print(f"wrote {len(paths)} frames to {args.out}")


def _size(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 256x256, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError("size must be positive")
    return h, w


def cmd_bench(args):
    net = load_model(args.model)
    if not net.is_hard:
        raise UsageError("bench needs a hardened model (run 'boolfield harden' first)")
    report = benchmark(net, size=args.size, steps=args.steps, runs=args.runs,
                       seed=args.seed or 0)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(report), lineterminator="\n")
    writer.writeheader()
    writer.writerow(report)
    sys.stdout.write(buf.getvalue())


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="overrides the configured seed")
    common.add_argument("--threads", type=int, help="worker threads (results do not change)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="boolfield", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen", parents=[common], help="generate a dataset")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--samples", type=int)
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("train", parents=[common], help="train a relaxed model")
    s.add_argument("--data", required=True, help="dataset directory or manifest")
    s.add_argument("--model-out", required=True)
    s.add_argument("--metrics", help="metric log path (default: next to the model)")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("harden", parents=[common], help="discretize a model")
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--netlist-dir", help="also export every circuit as a netlist")
    s.set_defaults(func=cmd_harden)

    s = sub.add_parser("eval", parents=[common], help="evaluate a model on a dataset")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--mode", choices=(SOFT, HARD, "packed"), default=HARD)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("evolve", parents=[common], help="iterate a model from a PBM seed")
    s.add_argument("--model", required=True)
    s.add_argument("--seed-image", required=True)
    s.add_argument("--steps", type=int, required=True)
    s.add_argument("--out", required=True, help="frame directory")
    s.set_defaults(func=cmd_evolve)

    s = sub.add_parser("bench", parents=[common], help="scalar vs packed throughput")
    s.add_argument("--model", required=True)
    s.add_argument("--size", type=_size, default=(256, 256))
    s.add_argument("--steps", type=int, default=100)
    s.add_argument("--runs", type=int, default=5)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        print("boolfield: error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        args.func(args)
    except (UsageError, ConfigError, PBMParseError, TrainingDiverged, OSError) as exc:
        msg = " ".join(str(exc).split())
        print(f"boolfield: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
