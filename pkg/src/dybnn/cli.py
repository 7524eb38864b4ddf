"""Command-line entry point: train, eval, cost, bench, inspect.

Exit codes: 0 success, 1 usage/config error, 2 data or file error, 3 numeric fault.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .binarizers import BinaryConv2d, BinaryLinear, DySign, RSign
from .bitkernel import binary_gemm, float_gemm_oracle, pack_signs
from .checkpoint import load_checkpoint, restore_model
from .config import RunConfig, build_graph, dump_yaml, graph_from_config, load_run_config, run_config_from_dict
from .costmodel import CONVENTIONS, count_ops
from .data import BatchStream, load_cifar10, synth_dataset
from .errors import (
    ArgumentError, ConfigError, ContractViolation, CorruptionError, DimensionError, IngestionError, NumericFault,
    UnsupportedError, VersionError,
)
from .nn import threshold_probe
from .train import evaluate, run_training

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parser():
    p = _Parser(prog="dybnn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, model=True):
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        if model:
            sp.add_argument("--preset")
            sp.add_argument("--binarizer", choices=["sign", "rsign", "dysign"])
            sp.add_argument("--activation", choices=["rprelu", "dyprelu"])
            sp.add_argument("--mode", choices=["channel", "token"])
            sp.add_argument("--gamma", type=int)

    tr = sub.add_parser("train", help="train a model and write metrics and checkpoints")
    common(tr)
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--dataset", choices=["synthetic", "cifar10"])
    tr.add_argument("--data-root")

    ev = sub.add_parser("eval", help="evaluate a checkpoint on the configured test set")
    common(ev, model=False)
    ev.add_argument("checkpoint")
    ev.add_argument("--dataset", choices=["synthetic", "cifar10"])
    ev.add_argument("--data-root")

    co = sub.add_parser("cost", help="BOPs / FLOPs / OPs report")
    common(co)
    co.add_argument("--convention", choices=CONVENTIONS, default="published")

    be = sub.add_parser("bench", help="packed vs float GEMM timing (exactness checked first)")
    be.add_argument("--sizes", default="64,128,256,512", help="comma-separated square sizes")
    be.add_argument("--repeats", type=int, default=3)
    be.add_argument("--seed", type=int, default=0)

    ins = sub.add_parser("inspect", help="summarise a checkpoint")
    ins.add_argument("checkpoint")
    ins.add_argument("--probe", type=int, default=32, help="probe batch size for threshold statistics")
    ins.add_argument("--seed", type=int, default=0)
    return p


def resolve_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        cfg.train.seed = args.seed
    if getattr(args, "out", None):
        cfg.out = args.out
    m = cfg.model
    for key in ("preset", "binarizer", "activation", "mode", "gamma"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(m, key, value)
    if getattr(args, "epochs", None) is not None:
        cfg.train.epochs = args.epochs
    if getattr(args, "dataset", None):
        cfg.data.dataset = args.dataset
    if getattr(args, "data_root", None):
        cfg.data.root = args.data_root
    cfg.train.validate()
    return cfg


def load_data(cfg: RunConfig):
    if cfg.data.dataset == "cifar10":
        d = load_cifar10(cfg.data.root, cfg.data.stats)
        return d.train, d.test
    d = synth_dataset(cfg.data.synth, cfg.seed)
    return d.train, d.test


def _check_input(graph, train):
    want = tuple(graph.input_shape)
    got = tuple(train.images.shape[1:])
    if want != got or train.num_classes != graph.num_classes:
        raise ConfigError(
            f"model expects {want} inputs and {graph.num_classes} classes; data has {got} and {train.num_classes}",
            field="data",
        )


def cmd_train(args, out=sys.stdout):
    cfg = resolve_config(args)
    graph, _ = build_graph(cfg.model, cfg.seed)
    train, test = load_data(cfg)
    _check_input(graph, train)
    os.makedirs(cfg.out, exist_ok=True)
    doc = {"run": cfg.to_dict(), "model": graph.config}
    dump_yaml(doc, os.path.join(cfg.out, "config.yaml"))
    history = run_training(graph, train, test, cfg.train, cfg.out, doc)
    summary = {
        "parameters": graph.model.num_parameters(),
        "final": {k: v for k, v in history[-1].items() if k != "seconds"} if history else {},
    }
    with open(os.path.join(cfg.out, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    print(json.dumps(summary, sort_keys=True), file=out)
    return EXIT_OK


def _model_from_checkpoint(path, seed=0):
    ck = load_checkpoint(path)
    graph = graph_from_config(ck.config["model"], seed)
    restore_model(graph.model, ck)
    return graph, ck


def cmd_eval(args, out=sys.stdout):
    graph, ck = _model_from_checkpoint(args.checkpoint)
    cfg = resolve_config(args) if args.config else RunConfig()
    if not args.config and "run" in ck.config:
        cfg = run_config_from_dict(ck.config["run"])
    if args.dataset:
        cfg.data.dataset = args.dataset
    if args.data_root:
        cfg.data.root = args.data_root
    _, test = load_data(cfg)
    _check_input(graph, test)
    res = evaluate(graph.model, BatchStream(test, 256, shuffle=False))
    print(json.dumps({"checkpoint": args.checkpoint, "step": ck.step, **res}, sort_keys=True), file=out)
    return EXIT_OK


def cmd_cost(args, out=sys.stdout):
    cfg = resolve_config(args)
    graph, preset = build_graph(cfg.model, cfg.seed, materialize=False)
    changed = bool(cfg.model.resolved_overrides(preset.family))
    report = count_ops(graph, convention=args.convention, reference=None if changed else preset.reference)
    print(report.format_table(), file=out)
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, f"cost-{preset.name}.json")
    with open(path, "w") as f:
        json.dump({"preset": preset.name, "model": graph.config, **report.to_dict()}, f, indent=2)
    print(f"written: {path}", file=out)
    return EXIT_OK


def bench_gemm(sizes, repeats, seed=0):
    """Rows of {n, packed_ms, float_ms, speedup}; raises before timing if results differ."""
    if repeats < 1:
        raise ArgumentError("repeats must be >= 1")
    if not sizes or any(n < 1 for n in sizes):
        raise ArgumentError("sizes must be positive")
    rng = np.random.default_rng(seed)
    rows = []
    for n in sizes:
        a = rng.standard_normal((n, n)).astype(np.float32)
        b = rng.standard_normal((n, n)).astype(np.float32)
        pa, pb = pack_signs(a), pack_signs(b)
        sa, sb = np.where(a > 0, 1.0, -1.0).astype(np.float32), np.where(b > 0, 1.0, -1.0).astype(np.float32)
        if not np.array_equal(binary_gemm(pa, pb), float_gemm_oracle(a, b).astype(np.int64)):
            raise NumericFault("packed GEMM disagrees with the float oracle", layer=f"gemm{n}")

        def clock(fn):
            best = float("inf")
            for _ in range(repeats):
                t = time.perf_counter()
                fn()
                best = min(best, time.perf_counter() - t)
            return best * 1e3

        packed_ms = clock(lambda: binary_gemm(pack_signs(a), pb))
        float_ms = clock(lambda: sa @ sb.T)
        rows.append({"n": n, "packed_ms": packed_ms, "float_ms": float_ms, "speedup": float_ms / packed_ms})
    return rows


def cmd_bench(args, out=sys.stdout):
    try:
        sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    except ValueError as e:
        raise UsageError(f"--sizes: {e}") from e
    rows = bench_gemm(sizes, args.repeats, args.seed)
    print(f"{'n':>6} {'packed ms':>10} {'float ms':>10} {'speedup':>8}", file=out)
    for r in rows:
        print(f"{r['n']:>6} {r['packed_ms']:>10.3f} {r['float_ms']:>10.3f} {r['speedup']:>8.2f}", file=out)
    print("exactness verified for every size before timing", file=out)
    return EXIT_OK


def threshold_stats(graph, probe=32, seed=0):
    """{binarizer name: {min, mean, max, var}} of thresholds applied to a random probe batch."""
    x = np.random.default_rng(seed).standard_normal((probe, *graph.input_shape))
    model = graph.model
    was = model.training
    model.eval()
    with ag.no_grad(), threshold_probe() as seen:
        model(Tensor(x.astype(ag.get_default_dtype())))
    model.train(was)
    stats = {}
    for name, chunks in seen.items():
        t = np.concatenate([np.asarray(c).reshape(-1) for c in chunks])
        stats[name] = {"min": float(t.min()), "mean": float(t.mean()), "max": float(t.max()), "var": float(t.var())}
    return stats


def cmd_inspect(args, out=sys.stdout):
    graph, ck = _model_from_checkpoint(args.checkpoint)
    model = graph.model
    print(f"checkpoint: {args.checkpoint}  step {ck.step}", file=out)
    print("model config:", file=out)
    for k, v in graph.config.items():
        print(f"  {k}: {v}", file=out)
    binary = sum(p.size for n, p in model.named_parameters() if _is_binary_weight(model, n))
    total = model.num_parameters()
    hyper = sum(p.size for n, p in model.named_parameters() if ".hyper" in n)
    print(f"parameters: {total:,} total, {binary:,} binarized weights, {hyper:,} hyperfunction", file=out)
    kinds = {}
    for m in model.modules():
        if isinstance(m, (DySign, RSign)):
            kinds[m.name] = m.kind
    print("threshold statistics (probe batch):", file=out)
    for name, s in threshold_stats(graph, args.probe, args.seed).items():
        print(
            f"  {name:<32} {kinds.get(name, '?'):<7} min {s['min']:+.4f} mean {s['mean']:+.4f}"
            f" max {s['max']:+.4f} var {s['var']:.3e}",
            file=out,
        )
    return EXIT_OK


def _is_binary_weight(model, pname):
    mods = dict(_named_modules(model))
    owner, _, leaf = pname.rpartition(".")
    return leaf == "weight" and isinstance(mods.get(owner), (BinaryConv2d, BinaryLinear))


def _named_modules(model, prefix=""):
    yield prefix.rstrip("."), model
    for key, child in model.children():
        yield from _named_modules(child, f"{prefix}{key}.")


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "cost": cmd_cost, "bench": cmd_bench, "inspect": cmd_inspect}


def main(argv=None, out=None):
    out = out or sys.stdout
    try:
        args = _parser().parse_args(argv)
        return COMMANDS[args.command](args, out)
    except (UsageError, ConfigError, ArgumentError, UnsupportedError, DimensionError) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (IngestionError, CorruptionError, VersionError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericFault, ContractViolation) as e:
        print(f"numeric fault: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
