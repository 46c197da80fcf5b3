"""Command line interface.

Subcommands:

    simulate   draw a synthetic survey and write traps/captures/sexes/truth
    fit        run the MCMC on capture files, write samples/summary/figures
    density    turn saved (s, z) snapshots into a density raster + figure
    backsim    interval-coverage study at fitted point estimates
    probe      identifiability diagnostics for a dataset (and samples)

Every run echoes its resolved configuration to stdout.  A flat
`key = value` config file can preload any flag; explicit flags win.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import dataio, plots
from .linkage import augment
from .oracle import identifiability_probe
from .sampler import GibbsSampler, McmcConfig, PosteriorSamples, summarize
from .simulate import ScenarioSpec, back_simulate, simulate_dataset, standard_grid


def _add_chain_args(p: argparse.ArgumentParser):
    p.add_argument("--model", choices=("identified", "reduced"),
                   default="identified", help="likelihood variant to fit")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iterations", type=int, default=30000)
    p.add_argument("--burn-in", type=int, default=10000)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("-M", "--augmented-size", type=int, default=400,
                   dest="m", help="number of pseudo-individuals")
    p.add_argument("-R", "--sigma-upper", type=float, default=None, dest="r",
                   help="upper prior bound for the movement scales "
                        "(default: quarter of the state-space diagonal)")
    p.add_argument("--buffer", type=float, default=1.0,
                   help="state-space buffer around the trap bounding box")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bisecr",
        description="Spatial capture-recapture with paired detectors and "
                    "latent identity linkage.",
    )
    parser.add_argument("--config", default=None,
                        help="flat key = value file preloading any flag")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic survey")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, default=100, help="true population size")
    p.add_argument("--n-male", type=int, default=40)
    p.add_argument("--p0", type=float, default=0.05)
    p.add_argument("--phi", type=float, default=0.4)
    p.add_argument("--sigma-m", type=float, default=0.3)
    p.add_argument("--sigma-f", type=float, default=0.15)
    p.add_argument("--occasions", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mask-sex-frac", type=float, default=0.0,
                   help="fraction of rows with hidden sex labels")
    p.add_argument("--reduced", action="store_true",
                   help="simulate the single-layer detection process")

    p = sub.add_parser("fit", help="run the MCMC on capture files")
    p.add_argument("--traps", required=True)
    p.add_argument("--captures", required=True)
    p.add_argument("--sexes", default=None)
    p.add_argument("--occasions", type=int, required=True)
    p.add_argument("--out", required=True)
    _add_chain_args(p)
    p.add_argument("--snapshot-thin", type=int, default=10,
                   help="keep (s, z) every this many kept iterations; 0 = off")
    p.add_argument("--no-plots", action="store_true")
    p.add_argument("--progress-every", type=int, default=0,
                   help="emit a progress line every N iterations")

    p = sub.add_parser("density", help="density raster from fit snapshots")
    p.add_argument("--snapshots", required=True, help="snapshots.npz from fit")
    p.add_argument("--out", required=True)
    p.add_argument("--cell-size", type=float, default=None,
                   help="pixel size (default: posterior mean sigma_f / 4)")
    p.add_argument("--per-area", action="store_true",
                   help="report density per unit area instead of per pixel")
    p.add_argument("--no-plots", action="store_true")

    p = sub.add_parser("backsim", help="coverage study at point estimates")
    p.add_argument("--estimates", required=True,
                   help="summary.txt from a fit; means are used as truth")
    p.add_argument("--traps", required=True)
    p.add_argument("--occasions", type=int, required=True)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=None)
    _add_chain_args(p)
    p.add_argument("--no-plots", action="store_true")

    p = sub.add_parser("probe", help="identifiability diagnostics")
    p.add_argument("--traps", required=True)
    p.add_argument("--captures", required=True)
    p.add_argument("--sexes", default=None)
    p.add_argument("--occasions", type=int, required=True)
    p.add_argument("--samples", default=None,
                   help="samples.csv from a fit, for posterior correlations")
    p.add_argument("--out", required=True)
    return parser


def _echo_config(args: argparse.Namespace):
    print("resolved configuration:")
    for key in sorted(vars(args)):
        if key in ("config",):
            continue
        print(f"  {key} = {getattr(args, key)}")


def _apply_config_file(parser, argv):
    """Preload flag defaults from --config before the real parse."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config", default=None)
    known, _ = probe.parse_known_args(argv)
    if known.config is None:
        return parser.parse_args(argv)
    # the command decides which keys are meaningful
    ns, _ = parser.parse_known_args(argv)
    command_parser = None
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            command_parser = action.choices[ns.command]
    allowed = {a.dest for a in command_parser._actions if a.dest != "help"}
    raw = dataio.read_config(known.config, allowed)
    typed = {}
    for action in command_parser._actions:
        if action.dest in raw:
            value = raw[action.dest]
            if action.type is not None:
                value = action.type(value)
            elif isinstance(action.const, bool) or isinstance(action.default, bool):
                value = value.lower() in ("1", "true", "yes", "on")
            typed[action.dest] = value
    command_parser.set_defaults(**typed)
    return parser.parse_args(argv)


def _make_config(args, M: int, space, snapshot_thin: int = 0) -> McmcConfig:
    r = args.r
    if r is None:
        r = 0.25 * float(np.hypot(space.xmax - space.xmin, space.ymax - space.ymin))
    return McmcConfig(iterations=args.iterations, burn_in=args.burn_in,
                      thin=args.thin, seed=args.seed, R=r, M=M,
                      snapshot_thin=snapshot_thin)


def _cmd_simulate(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    traps, space = standard_grid()
    spec = ScenarioSpec(
        n_true=args.n, n_male_true=args.n_male, p0=args.p0, phi=args.phi,
        sigma_m=args.sigma_m, sigma_f=args.sigma_f, space=space, traps=traps,
        J=args.occasions, seed=args.seed, sex_mask_frac=args.mask_sex_frac,
        reduced=args.reduced,
    )
    data, truth = simulate_dataset(spec)
    dataio.write_traps(traps, os.path.join(args.out, "traps.csv"))
    dataio.write_captures(data, os.path.join(args.out, "captures.csv"),
                          sex_path=os.path.join(args.out, "sexes.csv"),
                          traps=traps)
    dataio.write_truth(truth, os.path.join(args.out, "truth.csv"))
    print(f"wrote {data.n_rows} rows ({data.n_full} full, "
          f"{data.n_left_only} left-only, {data.n_right_only} right-only) "
          f"to {args.out}")
    return 0


def _cmd_fit(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    traps = dataio.read_traps(args.traps)
    data = dataio.read_captures(args.captures, traps, args.occasions,
                                sex_path=args.sexes)
    space = traps.bounding_space(args.buffer)
    config = _make_config(args, args.m, space, snapshot_thin=args.snapshot_thin)
    aug, L0 = augment(data, args.m)
    sampler = GibbsSampler(aug, traps, space, config, model=args.model, L0=L0)
    samples = sampler.run(progress=sys.stdout if args.progress_every else None,
                          progress_every=args.progress_every)
    dataio.write_samples(samples, os.path.join(args.out, "samples.csv"))
    rows = summarize(samples)
    dataio.write_summary(rows, os.path.join(args.out, "summary.txt"))
    if args.snapshot_thin:
        dataio.save_snapshots(os.path.join(args.out, "snapshots.npz"),
                              samples, space, traps)
    if not args.no_plots:
        plots.save_trace_figure(samples, os.path.join(args.out, "trace.png"))
    print(dataio.format_summary(rows), end="")
    return 0


def _cmd_density(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    snap = dataio.load_snapshots(args.snapshots)
    cell = args.cell_size
    if cell is None:
        cell = snap["sigma_f_mean"] / 4.0
    raster = dataio.density_raster(snap["s"], snap["z"], snap["space"], cell,
                                   per_area=args.per_area)
    dataio.write_raster(raster, os.path.join(args.out, "density.csv"))
    if not args.no_plots:
        plots.save_density_figure(raster, snap["traps"],
                                  os.path.join(args.out, "density.png"))
    print(f"raster {raster.nx} x {raster.ny} cells of {raster.cell}; "
          f"total mass {raster.total:.3f}")
    return 0


def _cmd_backsim(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    traps = dataio.read_traps(args.traps)
    space = traps.bounding_space(args.buffer)
    summary = dataio.read_summary(args.estimates)
    estimates = {name: row.mean for name, row in summary.items()}
    config = _make_config(args, args.m, space)
    report = back_simulate(estimates, args.reps, traps, space, args.occasions,
                           config, model=args.model, seed=args.seed,
                           n_jobs=args.jobs)
    dataio.write_coverage(report, os.path.join(args.out, "coverage.csv"),
                          replicate_path=os.path.join(args.out, "replicates.csv"))
    if not args.no_plots:
        plots.save_coverage_figure(report, os.path.join(args.out, "coverage.png"))
    for name, cov in report.coverage.items():
        print(f"coverage[{name}] = {cov:.3f} ({report.n_ok}/{report.n_reps} fits ok)")
    return 0


def _cmd_probe(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    traps = dataio.read_traps(args.traps)
    data = dataio.read_captures(args.captures, traps, args.occasions,
                                sex_path=args.sexes)
    samples = None
    if args.samples:
        cols = dataio.read_samples(args.samples)
        model = "identified" if "phi" in cols else "reduced"
        samples = PosteriorSamples(
            model=model, psi=cols["psi"], theta=cols["theta"],
            sigma_m=cols["sigma_m"], sigma_f=cols["sigma_f"],
            N=cols["N"], N_male=cols["N_male"],
            phi=cols.get("phi"), p0=cols.get("p0"), lambda0=cols.get("lambda0"),
        )
    report = identifiability_probe(data=data, traps=traps, samples=samples)
    dataio.write_probe(report, os.path.join(args.out, "probe.txt"))
    for line in report.lines():
        print(line)
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "density": _cmd_density,
    "backsim": _cmd_backsim,
    "probe": _cmd_probe,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = _apply_config_file(parser, argv)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _echo_config(args)
    try:
        return _COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc.filename}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
