"""Command-line surface.

Subcommands: simulate | train | infer | sparsity | verify.
Exit codes: 0 success, 2 validation error, 3 runtime error.  Failures print
a machine-readable JSON error object to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from ..nn.graph import GraphError, save_checkpoint, load_checkpoint
from ..perf import PlanError, simulate_network
from . import fixtures, report, training
from .network import ParseError, load_network
from .runconfig import ConfigError, load_config

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


def _emit_error(kind, exc):
    obj = {"error": {"type": kind, "message": str(exc)}}
    for attr in ("index", "field"):
        if hasattr(exc, attr):
            obj["error"][attr] = getattr(exc, attr)
    print(json.dumps(obj), file=sys.stderr)


def _write(out_dir, name, text):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w") as f:
        f.write(text)
    return path


def _load_inputs(args):
    nd = load_network(args.network)
    cfg = load_config(args.config)
    if args.seed is not None:
        nd.seed = args.seed
    if args.mode:
        cfg.mode = args.mode
    return nd, cfg


def cmd_simulate(args) -> int:
    nd, cfg = _load_inputs(args)
    measured = None
    sat = 0
    if cfg.density_source == "measured":
        state = None
        if nd.checkpoint:
            state = load_checkpoint(nd.checkpoint, nd.graph)
        stats = training.measure_densities(nd, cfg, nd.seed, state=state)
        sat = training.total_saturations(stats)
        measured = stats
    rep = simulate_network(nd.graph, cfg.accelerator, cfg.memory, mode=cfg.mode,
                           density_source=cfg.density_source,
                           assumed_density=cfg.density_value,
                           measured=measured, saturations=sat)
    tag = f"{nd.name}.{cfg.mode}"
    paths = []
    if args.format in ("json", "both"):
        paths.append(_write(args.out, f"{tag}.report.json", report.report_json(rep)))
    if args.format in ("csv", "both"):
        paths.append(_write(args.out, f"{tag}.report.csv", report.report_csv(rep)))
    print(f"{nd.name}: {rep.total_cycles} cycles, {rep.latency_s * 1e3:.3f} ms, "
          f"{rep.average_power_w:.3f} W -> {', '.join(paths)}")
    return EXIT_OK


def _simulate_pair(payload) -> int:
    network, config, mode, seed, out, fmt = payload
    args = argparse.Namespace(network=network, config=config, mode=mode,
                              seed=seed, out=out, format=fmt)
    return cmd_simulate(args)


def cmd_simulate_many(args) -> int:
    pairs = [(n, c) for n in args.network for c in (args.config or [None])]
    jobs = []
    for n, c in pairs:
        sub = os.path.join(args.out, f"{os.path.splitext(os.path.basename(n))[0]}"
                           + (f"__{os.path.splitext(os.path.basename(c))[0]}" if c else ""))
        jobs.append((n, c, args.mode, args.seed, sub, args.format))
    if args.jobs <= 1 or len(jobs) == 1:
        codes = [_simulate_pair(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            codes = list(pool.map(_simulate_pair, jobs))
    return max(codes) if codes else EXIT_OK


def cmd_train(args) -> int:
    nd, cfg = _load_inputs(args)
    result = training.run_training(nd, cfg, nd.seed)
    rows = "step,loss\n" + "\n".join(f"{i},{v}" for i, v in enumerate(result["loss_curve"]))
    curve_path = _write(args.out, f"{nd.name}.loss.csv", rows)
    ckpt_dir = os.path.join(args.out, f"{nd.name}.checkpoint")
    save_checkpoint(ckpt_dir, nd.graph, result["state"])
    summary = {
        "network": nd.name, "seed": nd.seed, "steps": result["steps"],
        "final_loss": result["loss_curve"][-1] if result["loss_curve"] else None,
        "train_accuracy": result["train_accuracy"],
        "eval_accuracy": result["eval_accuracy"],
        "saturations": result["state"].saturations,
        "checkpoint": ckpt_dir,
    }
    _write(args.out, f"{nd.name}.train.json", json.dumps(summary, indent=2))
    print(f"{nd.name}: {result['steps']} steps, final loss "
          f"{summary['final_loss']:.4f}, eval accuracy {summary['eval_accuracy']:.3f} "
          f"-> {curve_path}")
    return EXIT_OK


def cmd_infer(args) -> int:
    nd, cfg = _load_inputs(args)
    state = load_checkpoint(nd.checkpoint, nd.graph) if nd.checkpoint else None
    result = training.run_inference(nd, cfg, nd.seed, state=state)
    summary = {"network": nd.name, "seed": nd.seed,
               "samples": result["samples"], "accuracy": result["eval_accuracy"]}
    path = _write(args.out, f"{nd.name}.infer.json", json.dumps(summary, indent=2))
    print(f"{nd.name}: accuracy {result['eval_accuracy']:.3f} on "
          f"{result['samples']} samples -> {path}")
    return EXIT_OK


def cmd_sparsity(args) -> int:
    nd, cfg = _load_inputs(args)
    state = load_checkpoint(nd.checkpoint, nd.graph) if nd.checkpoint else None
    stats = training.measure_densities(nd, cfg, nd.seed, state=state)
    names = [spec.name or f"{i}:{spec.kind}"
             for i, spec in enumerate(nd.graph.layers) if i in nd.graph.compute_layers]
    path = _write(args.out, f"{nd.name}.sparsity.csv", report.density_csv(names, stats))
    print(f"{nd.name}: densities for {len(stats)} layers -> {path}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_verify

    return run_verify()


def cmd_fixture(args) -> int:
    text = fixtures.fixture_json(args.name, batch=args.batch)
    if args.out:
        path = _write(args.out, f"{args.name}.json", text)
        print(path)
    else:
        print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparsemac",
        description="Sparsity-aware reduced-precision CNN engine and accelerator model",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, many_networks=False):
        if many_networks:
            p.add_argument("--network", action="append", required=True,
                           help="network JSON (repeatable)")
            p.add_argument("--config", action="append", help="run config JSON (repeatable)")
        else:
            p.add_argument("--network", required=True, help="network JSON path")
            p.add_argument("--config", help="run config JSON path")
        p.add_argument("--mode", choices=["train", "infer"], help="override config mode")
        p.add_argument("--seed", type=int, help="override network seed")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--format", choices=["json", "csv", "both"], default="both")
        p.add_argument("--jobs", type=int, default=1, help="parallel (network, config) pairs")

    common(sub.add_parser("simulate", help="performance/energy report"), many_networks=True)
    common(sub.add_parser("train", help="functional training on the synthetic task"))
    common(sub.add_parser("infer", help="functional evaluation"))
    common(sub.add_parser("sparsity", help="per-layer measured densities"))
    sub.add_parser("verify", help="run the built-in oracle suites")
    fx = sub.add_parser("fixture", help="emit a bundled network fixture")
    fx.add_argument("name", choices=list(fixtures.FIXTURE_NAMES))
    fx.add_argument("--batch", type=int, default=32)
    fx.add_argument("--out")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {
        "simulate": cmd_simulate_many,
        "train": cmd_train,
        "infer": cmd_infer,
        "sparsity": cmd_sparsity,
        "verify": cmd_verify,
        "fixture": cmd_fixture,
    }[args.command]
    try:
        return handler(args)
    except (ParseError, GraphError, ConfigError, FileNotFoundError) as e:
        _emit_error(type(e).__name__, e)
        return EXIT_VALIDATION
    except (PlanError, ValueError, OSError) as e:
        _emit_error(type(e).__name__, e)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
