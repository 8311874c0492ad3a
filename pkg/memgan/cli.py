"""
Command-line interface.

    memgan thresholds --k 4 --sigma 1
    memgan build-gen --config cfg.json --out gen/
    memgan compile --gen gen/ --delta 0.05 --out net.json --report report.json
    memgan eval-objective --gen gen/ --disc d.json --n 20000
    memgan train-disc --gen gen/ --config cfg.json --out d.json --trace trace.csv
    memgan experiment collapse --config cfg.json --out report.json
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import __version__
from .adversary import (
    Discriminator,
    bigan_objective,
    fake_pair_sampler,
    network_pair_sampler,
    real_pair_sampler,
)
from .compiler import compile_generator
from .config import ExperimentConfig, load_config
from .distributions import open_image_source
from .generator import build_generator, load_generator, save_generator
from .harness import EXPERIMENTS, measuring_function, train_for_config
from .partition import compute_thresholds
from .relu_network import ReluNetwork
from .reporting import FORMATS, JSON_FORMAT, build_report, dumps, write_report, write_trace
from .seeding import derive_rng

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memgan",
        description="Memorizing generators that fool encoder-decoder GAN objectives",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--seed", type=int, default=None, help="Master seed (overrides the config)")
    parser.add_argument("--threads", type=int, default=None, help="Worker threads (overrides the config)")
    parser.add_argument("--format", choices=FORMATS, default=JSON_FORMAT, help="Report format")
    parser.add_argument("--verbose", "-v", action="store_true", help="Log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("thresholds", help="Half-normal quantile thresholds")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--d-tilde", type=int, default=1)

    p = sub.add_parser("build-gen", help="Build and save a memorizing generator")
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--k", type=int, default=None, help="Defaults to the first k of the config grid")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("compile", help="Compile a saved generator into a sparse ReLU network")
    p.add_argument("--gen", type=Path, required=True)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--report", type=Path, default=None)

    p = sub.add_parser("eval-objective", help="Estimate the objective for a saved discriminator")
    p.add_argument("--gen", type=Path, required=True)
    p.add_argument("--disc", type=Path, required=True)
    p.add_argument("--n", type=int, default=20_000)
    p.add_argument("--net", type=Path, default=None, help="Use a compiled network as the generator")
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--out", type=Path, default=None)

    p = sub.add_parser("train-disc", help="Train a discriminator against a saved generator")
    p.add_argument("--gen", type=Path, required=True)
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--trace", type=Path, default=None)

    p = sub.add_parser("experiment", help="Run an experiment and write its report")
    p.add_argument("name", choices=sorted(EXPERIMENTS))
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--out", type=Path, required=True)
    return parser


def _config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _emit(report: dict, out: Optional[Path], fmt: str) -> None:
    if out is None:
        print(dumps(report))
        return
    for path in write_report(report, out, fmt):
        logger.info("Wrote %s", path)


def cmd_thresholds(args: argparse.Namespace) -> int:
    part = compute_thresholds(args.k, args.sigma, args.d_tilde)
    print(dumps(build_report({"k": part.k, "sigma": part.sigma, "m": part.m, "thresholds": list(part.thresholds)})))
    return 0


def cmd_build_gen(args: argparse.Namespace) -> int:
    cfg = _config(args)
    k = args.k if args.k is not None else cfg.k_grid[0]
    part = compute_thresholds(k, cfg.spec.sigma, cfg.spec.d_tilde, cfg.max_support)
    source = open_image_source(cfg.image_model, cfg.spec)
    gen = build_generator(derive_rng(cfg.master_seed, "build-gen", k), part, source, cfg.spec)
    save_generator(gen, args.out)
    logger.info("Saved generator with m=%d to %s", gen.m, args.out)
    return 0


def cmd_compile(args: argparse.Namespace) -> int:
    gen = load_generator(args.gen)
    net, report = compile_generator(gen, args.delta)
    net.save(args.out)
    body = build_report(report.to_dict())
    if args.report is not None:
        _emit(body, args.report, JSON_FORMAT)
    else:
        print(dumps({key: value for key, value in body.items() if key != "layers"}))
    return 0


def cmd_eval_objective(args: argparse.Namespace) -> int:
    cfg = _config(args)
    gen = load_generator(args.gen)
    D = Discriminator.load(args.disc)
    source = open_image_source(cfg.image_model, gen.spec)
    fake = network_pair_sampler(ReluNetwork.load(args.net), gen.spec) if args.net else fake_pair_sampler(gen)
    estimate = bigan_objective(
        D,
        real_pair_sampler(source, gen.spec),
        fake,
        args.n,
        args.n,
        derive_rng(cfg.master_seed, "eval-objective"),
        measuring_function(cfg),
    )
    _emit(build_report(estimate.to_dict()), args.out, JSON_FORMAT)
    return 0


def cmd_train_disc(args: argparse.Namespace) -> int:
    cfg = _config(args)
    gen = load_generator(args.gen)
    source = open_image_source(cfg.image_model, gen.spec)
    result = train_for_config(
        cfg,
        derive_rng(cfg.master_seed, "train-disc"),
        real_pair_sampler(source, gen.spec),
        fake_pair_sampler(gen),
        gen.spec,
        threads=cfg.threads,
        show_progress=args.verbose,
    )
    result.discriminator.save(args.out)
    if args.trace is not None:
        write_trace(result.trace, args.trace)
    summary = {
        "capacity_p": result.discriminator.capacity_p,
        "restart": result.restart,
        "sign": result.sign,
        "estimate": result.estimate.to_dict(),
        "restart_gaps": result.restart_gaps,
    }
    print(dumps(build_report(summary)))
    return 0


def cmd_experiment(args: argparse.Namespace) -> int:
    cfg = _config(args)
    body = EXPERIMENTS[args.name](cfg, show_progress=args.verbose)
    _emit(build_report(body, cfg.to_dict()), args.out, args.format)
    return 0


COMMANDS = {
    "thresholds": cmd_thresholds,
    "build-gen": cmd_build_gen,
    "compile": cmd_compile,
    "eval-objective": cmd_eval_objective,
    "train-disc": cmd_train_disc,
    "experiment": cmd_experiment,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError, ArithmeticError, RuntimeError) as e:
        logger.error("%s failed: %s", args.command, e)
        print(f"Error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
