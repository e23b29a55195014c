"""Command line front end: experiment sweeps and one-shot solves.

Subcommands:
  mcq simulate --config cfg.json [--output out.csv] [--summary out.json]
  mcq complete --input observed.json --output result.json [solver knobs]
  mcq lse2d    --input observed.json --output result.json [solver knobs]
"""

from __future__ import annotations

import argparse
import json
import sys

from .grsbl import GrSblConfig, run_mc_grsbl
from .harness import ExperimentConfig, rows_to_csv, run_experiment, summarize
from .lse2d import run_lse2d
from .quantizer import ObservedMatrix, build_uniform_quantizer


def _add_solver_args(parser):
    parser.add_argument("--input", required=True,
                        help="observed-matrix JSON file")
    parser.add_argument("--output", required=True, help="result JSON file")
    parser.add_argument("--bits", type=int, default=None,
                        help="expected quantizer bit depth (consistency check)")
    parser.add_argument("--k", type=int, default=None,
                        help="factor width (default: min(m, n) // 2 capped at 16)")
    parser.add_argument("--iters", type=int, default=50,
                        help="outer iterations (default 50)")
    parser.add_argument("--damping", type=float, default=0.7)
    parser.add_argument("--sigma2", type=float, default=None,
                        help="initial noise variance")
    parser.add_argument("--learn-noise", choices=("auto", "on", "off"),
                        default="auto")
    parser.add_argument("--seed", type=int, default=0)


def _load_observed(args):
    with open(args.input) as fh:
        obs = ObservedMatrix.from_json(fh.read())
    if args.bits is not None and args.bits != obs.bit_depth:
        raise SystemExit(
            f"--bits {args.bits} disagrees with the file's bit depth "
            f"{obs.bit_depth}")
    spec = build_uniform_quantizer(obs.bit_depth, obs.sigma_z)
    k = args.k if args.k is not None else min(max(min(obs.m, obs.n) // 2, 1), 16)
    learn = {"auto": None, "on": True, "off": False}[args.learn_noise]
    cfg = GrSblConfig(k=k, t_outer=args.iters, learn_noise=learn,
                      sigma2_init=args.sigma2, damping=args.damping,
                      seed=args.seed)
    return obs, spec, cfg


def _cmd_simulate(args):
    with open(args.config) as fh:
        cfg = ExperimentConfig.from_json(fh.read())
    rows = run_experiment(cfg, workers=args.workers, timing=not args.no_timing)
    if args.output:
        with open(args.output, "w") as fh:
            rows_to_csv(rows, fh)
    else:
        sys.stdout.write(rows_to_csv(rows))
    if args.summary:
        with open(args.summary, "w") as fh:
            json.dump(summarize(rows), fh, indent=2)
    return 0


def _cmd_complete(args):
    obs, spec, cfg = _load_observed(args)
    result = run_mc_grsbl(obs, spec, cfg)
    with open(args.output, "w") as fh:
        fh.write(result.to_json())
    print(f"rank {result.rank}, sigma2 {result.sigma2:.6g} "
          f"-> {args.output}")
    return 0


def _cmd_lse2d(args):
    obs, spec, cfg = _load_observed(args)
    result = run_lse2d(obs, spec, cfg)
    payload = json.loads(result.to_json())
    payload["Z_hat"] = {"re": result.z_hat.real.tolist(),
                        "im": result.z_hat.imag.tolist()}
    with open(args.output, "w") as fh:
        json.dump(payload, fh)
    print(f"model order {result.scene.r} -> {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcq",
        description="matrix completion from quantized samples")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a Monte-Carlo experiment sweep")
    sim.add_argument("--config", required=True, help="experiment config JSON")
    sim.add_argument("--output", default=None,
                     help="CSV output path (default: stdout)")
    sim.add_argument("--summary", default=None,
                     help="optional JSON summary of per-cell medians")
    sim.add_argument("--workers", type=int, default=1)
    sim.add_argument("--no-timing", action="store_true",
                     help="zero the wall_ms column for reproducible output")
    sim.set_defaults(func=_cmd_simulate)

    comp = sub.add_parser("complete", help="one-shot matrix completion")
    _add_solver_args(comp)
    comp.set_defaults(func=_cmd_complete)

    lse = sub.add_parser("lse2d", help="one-shot 2D line spectral estimation")
    _add_solver_args(lse)
    lse.set_defaults(func=_cmd_lse2d)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
