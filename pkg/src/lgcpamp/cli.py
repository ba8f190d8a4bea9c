"""Command-line entry point.

Subcommands: simulate, fit-amp, fit-ess, fit-mmala, latent, diagnose. All
take a JSON config (--config) and an output directory (--out); --seed
overrides the config seed. Exit codes: 0 success, 2 configuration error,
3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .baselines import run_ess_joint, run_mmala
from .chain import Chain
from .diagnostics import (
    _derived_column,
    density_export,
    efficiency_report,
    summarize,
)
from .domain import build_partition
from .errors import ConfigError, IoError, LgcpError, RecoverableNumericalError
from .io import (
    RunConfig,
    load_config,
    read_pattern_csv,
    write_field_csv,
    write_latent_draws,
    write_pattern_csv,
)
from .latent import run_latent_stage
from .pseudomarginal import run_amp
from .simulate import LgcpModel, simulate_lgcp

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


def _outdir(path: str) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {path}: {exc}") from None
    return path


def _load(args) -> RunConfig:
    base = os.path.dirname(os.path.abspath(args.config))
    return load_config(args.config, seed_override=args.seed, base_dir=base)


def _partition(cfg: RunConfig):
    return build_partition(cfg.domain, cfg.coarse_dims, cfg.fine_dims)


def _cmd_simulate(args) -> int:
    cfg = _load(args)
    out = _outdir(args.out)
    beta, kernel = cfg.true_model()
    model = LgcpModel(beta, kernel, cfg.covariates)
    pattern, field = simulate_lgcp(
        model, cfg.domain, sim_grid=cfg.sim_grid, seed=cfg.seed
    )
    write_pattern_csv(os.path.join(out, "pattern.csv"), pattern)
    write_field_csv(os.path.join(out, "latent_field.csv"), field.points, field.z)
    print(f"simulated {pattern.n} points across {model.L} component(s)")
    return EXIT_OK


def _write_chain(chain: Chain, out: str) -> None:
    chain.to_csv(os.path.join(out, "chain.csv"))
    chain.save_meta(os.path.join(out, "run.json"))


def _cmd_fit_amp(args) -> int:
    cfg = _load(args)
    out = _outdir(args.out)
    pattern = read_pattern_csv(args.pattern, L=cfg.L)
    chain = run_amp(
        pattern,
        _partition(cfg),
        cfg.space,
        covariates=cfg.covariates,
        i0=cfg.i0,
        I=cfg.I,
        n_imp=cfg.n_imp,
        seed=cfg.seed,
    )
    _write_chain(chain, out)
    print(
        f"retained {len(chain)} draws, acceptance rate "
        f"{chain.meta['acceptance_rate']:.3f}"
    )
    return EXIT_OK


def _cmd_fit_joint(args, runner) -> int:
    cfg = _load(args)
    out = _outdir(args.out)
    if cfg.L != 1:
        raise ConfigError("joint baseline samplers are univariate (L = 1)")
    pattern = read_pattern_csv(args.pattern, L=1)
    chain = runner(
        pattern,
        _partition(cfg),
        covariates=cfg.covariates,
        prior=cfg.prior,
        i0=cfg.i0,
        I=cfg.I,
        seed=cfg.seed,
    )
    _write_chain(chain, out)
    print(
        f"retained {len(chain)} draws, acceptance rate "
        f"{chain.meta['acceptance_rate_beta_zeta']:.3f}"
    )
    return EXIT_OK


def _cmd_latent(args) -> int:
    cfg = _load(args)
    out = _outdir(args.out)
    pattern = read_pattern_csv(args.pattern, L=cfg.L)
    chain = Chain.from_csv(args.chain)
    if chain.columns != cfg.space.natural_names:
        raise ConfigError("chain columns do not match the configured model")
    partition = _partition(cfg)
    pooled, _ = run_latent_stage(
        chain,
        cfg.space,
        pattern,
        partition,
        covariates=cfg.covariates,
        thin_theta=args.thin_theta,
        n_samples=args.n_samples,
        seed=cfg.seed,
        n_workers=args.workers,
    )
    mean = pooled.mean(axis=0)
    lo = np.quantile(pooled, 0.025, axis=0)
    hi = np.quantile(pooled, 0.975, axis=0)
    path = os.path.join(out, "latent_summary.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "component", "mean", "q2.5", "q97.5"])
        for comp in range(mean.shape[0]):
            for k, (x, y) in enumerate(partition.fine_points):
                writer.writerow(
                    [
                        repr(x),
                        repr(y),
                        comp + 1,
                        repr(mean[comp, k]),
                        repr(lo[comp, k]),
                        repr(hi[comp, k]),
                    ]
                )
    if args.draws_out:
        write_latent_draws(os.path.join(out, args.draws_out), pooled)
    print(f"pooled {pooled.shape[0]} latent draws on {pooled.shape[2]} cells")
    return EXIT_OK


def _cmd_diagnose(args) -> int:
    out = _outdir(args.out)
    chain = Chain.from_csv(args.chain)
    if os.path.exists(os.path.join(os.path.dirname(args.chain), "run.json")):
        with open(os.path.join(os.path.dirname(args.chain), "run.json")) as fh:
            chain.meta.update(json.load(fh))
    extra = tuple(args.derived or ())
    stats = summarize(chain, extra)
    with open(os.path.join(out, "summary.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "mean", "stdev", "q2.5", "q97.5", "if"])
        for name, row in stats.items():
            writer.writerow(
                [
                    name,
                    repr(row["mean"]),
                    repr(row["stdev"]),
                    repr(row["q2.5"]),
                    repr(row["q97.5"]),
                    repr(row["if"]),
                ]
            )
    for name in list(chain.columns) + list(extra):
        x = (
            chain.column(name)
            if name in chain.columns
            else _derived_column(chain, name)
        )
        if np.ptp(x) == 0.0:
            continue
        grid, dens = density_export(x)
        safe = "".join(c if c.isalnum() else "_" for c in name)
        with open(
            os.path.join(out, f"density_{safe}.csv"), "w", newline=""
        ) as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "density"])
            for g, d in zip(grid, dens):
                writer.writerow([repr(g), repr(d)])
    report = efficiency_report(chain, extra)
    with open(os.path.join(out, "efficiency.json"), "w") as fh:
        json.dump(report, fh, indent=2, default=float)
    print(f"summarized {len(chain.columns) + len(extra)} quantities")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lgcpamp",
        description="Simulate and fit log Gaussian Cox process models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_, needs_pattern=False, needs_chain=False):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=None)
        if needs_pattern:
            p.add_argument("--pattern", required=True)
        if needs_chain:
            p.add_argument("--chain", required=True)
        return p

    add("simulate", "draw a synthetic point pattern")
    add("fit-amp", "two-stage approximate marginal posterior fit",
        needs_pattern=True)
    add("fit-ess", "joint fit, elliptical slice field updates",
        needs_pattern=True)
    add("fit-mmala", "joint fit, Langevin field updates", needs_pattern=True)
    p = add("latent", "conditional latent-field sampling for a fitted chain",
            needs_pattern=True, needs_chain=True)
    p.add_argument("--thin-theta", type=int, default=10)
    p.add_argument("--n-samples", type=int, default=200)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--draws-out", default=None,
                   help="also write pooled draws to this file in --out")
    p = sub.add_parser("diagnose", help="summaries, densities, efficiency")
    p.add_argument("--chain", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--derived", action="append", default=None,
                   help="derived quantity, e.g. sigma2*phi (repeatable)")
    p.add_argument("--seed", type=int, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "simulate": _cmd_simulate,
        "fit-amp": _cmd_fit_amp,
        "fit-ess": lambda a: _cmd_fit_joint(a, run_ess_joint),
        "fit-mmala": lambda a: _cmd_fit_joint(a, run_mmala),
        "latent": _cmd_latent,
        "diagnose": _cmd_diagnose,
    }
    try:
        return handlers[args.command](args)
    except IoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RecoverableNumericalError, LgcpError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
