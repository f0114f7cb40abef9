"""Command-line entry point: ``darlab <lln|conc|phi|couple|gencheck|ode> [flags]``."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import experiments as ex

_KINDS = {
    "lln": ex.ExperimentKind.LLN,
    "conc": ex.ExperimentKind.CONCENTRATION,
    "phi": ex.ExperimentKind.PHI_DRIFT,
    "couple": ex.ExperimentKind.COUPLING,
    "gencheck": ex.ExperimentKind.GENERATOR_CHECK,
    "ode": ex.ExperimentKind.ODE,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="darlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _KINDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value file with ExperimentSpec fields")
        p.add_argument("--n", help="node count or comma-separated grid, e.g. 50,100,200")
        p.add_argument("--lambda", dest="lam", type=float)
        p.add_argument("--cap", type=int, help="link capacity C")
        p.add_argument("--d", type=int)
        p.add_argument("--t0", type=float)
        p.add_argument("--policy", choices=["bdar", "fdar", "nodirect"])
        p.add_argument("--mode", choices=["ctmc", "jump"])
        p.add_argument("--seed", type=int)
        p.add_argument("--replicas", type=int)
        p.add_argument("--c0", type=float, help="random allocation density (implies --initial random)")
        p.add_argument("--initial", choices=["empty", "random", "file"])
        p.add_argument("--initial-path")
        p.add_argument("--steps", type=int)
        p.add_argument("--tuples", type=int)
        p.add_argument("--distance", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--out", help="output directory for CSV files and the manifest")
    return parser


def spec_from_args(args) -> ex.ExperimentSpec:
    base = ex.load_kv(args.config) if args.config else {}
    over = {
        "kind": _KINDS[args.command].value,
        "n_grid": args.n,
        "lam": args.lam,
        "C": args.cap,
        "d": args.d,
        "t0": args.t0,
        "policy": args.policy,
        "mode": args.mode,
        "seed": args.seed,
        "replicas": args.replicas,
        "c0": args.c0,
        "initial": args.initial or ("random" if args.c0 is not None else None),
        "initial_path": args.initial_path,
        "steps": args.steps,
        "tuples": args.tuples,
        "distance": args.distance,
        "workers": args.workers,
        "output_dir": args.out,
    }
    return ex.spec_from_mapping(base, **over)


def _summarise(spec: ex.ExperimentSpec, result) -> list:
    lines = [f"spec_hash = {spec.spec_hash()}"]
    kind = spec.kind
    if kind is ex.ExperimentKind.LLN:
        for n in spec.n_grid:
            if len(result.errors[n]):
                lines.append(f"n = {n}: median e(n) = {result.median(n):.5f}, max = {result.max(n):.5f}, "
                             f"e(n) sqrt(n)/log n = {result.scaled(n):.4f}")
            else:
                lines.append(f"n = {n}: ODE only, xi(t0) = {np.round(result.ode[n].xi[-1], 6).tolist()}")
    elif kind is ex.ExperimentKind.CONCENTRATION:
        for n in spec.n_grid:
            lines.append(f"n = {n}: max sd/sqrt(n) = {result.scaled_sd(n).max():.5f}, "
                         f"max maxdev/(sqrt(n) log n) = {result.scaled_max_dev(n).max():.5f}")
    elif kind is ex.ExperimentKind.PHI_DRIFT:
        lines.append(f"phi_bar = {result.phi_bar:.5f}, bound = {result.bound:.3e}, "
                     f"max mean |dphi1| = {result.mean_abs_increment.max():.3e}, "
                     f"violations = {len(result.violations())}")
    elif kind is ex.ExperimentKind.COUPLING:
        lines.append(f"mean l1: start {result.mean_l1[0]:.3f}, end {result.mean_l1[-1]:.3f}; "
                     f"max growth factor {np.nanmax(result.growth_factor):.5f} vs bound {result.bound:.5f}; "
                     f"violations = {len(result.violations())}")
    elif kind is ex.ExperimentKind.GENERATOR_CHECK:
        lines.append(f"states = {result.states}, max relative error = {result.max_rel_error:.3e}")
    elif kind is ex.ExperimentKind.ODE:
        lines.append(f"xi(t0) = {np.round(result.trajectory.xi[-1], 6).tolist()}")
        if result.fixed_point is not None:
            lines.append(f"fixed point = {np.round(result.fixed_point, 6).tolist()}")
        for k, v in result.constants.as_dict().items():
            lines.append(f"{k} = {v}")
    return lines


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = spec_from_args(args)
        result = ex.run_experiment(spec)
    except (ValueError, OSError) as exc:
        print(f"darlab: error: {exc}", file=sys.stderr)
        return 2
    print("\n".join(_summarise(spec, result)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
