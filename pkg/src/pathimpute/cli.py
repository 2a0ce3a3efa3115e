"""Command-line interface.

Subcommands: ``simulate`` (synthetic datasets), ``fit`` (single-dataset
process-imputation analysis of user telemetry), ``study`` (the replicated
simulation studies), and ``select-tuning`` (DIC grid search for the basis
prior variance). All commands are deterministic given their flags and seed;
every file is written atomically. Exit codes: 0 success, 2 usage error,
3 validation error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys

import numpy as np

from . import aid as aid_mod
from .core import (
    PriorSpec,
    basis_matrix,
    build_grid,
    merge_grid,
    read_telemetry_csv,
    uniform_bspline_spec,
)
from .errors import NumericalError, ValidationError
from .evaluate import band_from_chain, dic, scalar_interval
from .experiments import StudyConfig, resume_study, run_study, study1_config, study2_config
from .impute_mcmc import PathStats, ProcessModelConfig, run_process_imputation, save_chain
from .potential import AttractorPotential
from .simulate import ObsParams, Sde1Params, Sde2Params, observe, save_dataset, simulate_sde1, simulate_sde2
from .util import derive_rng, write_csv_atomic, write_json_atomic

DEFAULT_SEED = 20160301

SIMULATE_DEFAULTS = {
    "model": "sde2",
    "start": 0.0,
    "end": 30.0,
    "grid_points": 400,
    "n_obs": 200,
    "obs_times": None,
    "sigma_s_sq": 1e-2,
    "seed": DEFAULT_SEED,
    "center": [0.0, 0.0],
    # sde2
    "sigma_v": 1.0,
    "beta_offset": 0.3,
    "beta_amplitude": 1.0,
    "beta_period": 15.0,
    "beta_trend": 0.02,
    "init_position": [3.0, 0.0],
    "init_velocity": [0.0, 0.0],
    # sde1
    "beta": 0.5,
    "sigma0_sq": 1e2,
}

FIT_DEFAULTS = {
    "aid": "ou",
    "K": 128,
    "center": [0.0, 0.0],
    "grid_points": 500,
    "basis_interior": 8,
    "basis_degree": 3,
    "sigma_alpha_sq": 10 ** (-1.75),
    "a_s": 1e-3,
    "b_s": 1e-4,
    "a_v": 1e-3,
    "b_v": 1e-4,
    "iterations": 10000,
    "burn_in": None,
    "proposal_scale": 0.2,
    "seed": DEFAULT_SEED,
    "save_imputations": False,
}


def _load_config(path, defaults: dict) -> dict:
    cfg = dict(defaults)
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
        unknown = set(user) - set(defaults)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(user)
    return cfg


def _master_seed(args_seed) -> int:
    if args_seed is not None:
        return int(args_seed)
    env = os.environ.get("MI_SEED")
    return int(env) if env else DEFAULT_SEED


def _print_config(cfg: dict) -> int:
    print(json.dumps(cfg, indent=2, sort_keys=True))
    return 0


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config, SIMULATE_DEFAULTS)
    if args.model:
        cfg["model"] = args.model
    if args.seed is not None:
        cfg["seed"] = int(args.seed)
    if args.print_config:
        return _print_config(cfg)
    if args.out is None:
        raise ValidationError("--out is required")
    if cfg["model"] not in ("sde1", "sde2"):
        raise ValidationError("model must be 'sde1' or 'sde2'")
    base = build_grid(cfg["start"], cfg["end"], cfg["grid_points"])
    if cfg["obs_times"] is not None:
        obs_times = np.asarray(cfg["obs_times"], dtype=float)
    else:
        obs_times = np.linspace(cfg["start"], cfg["end"], int(cfg["n_obs"]))
    grid, _ = merge_grid(base, obs_times)
    seed = cfg["seed"]
    if cfg["model"] == "sde2":
        beta = (
            cfg["beta_offset"]
            + cfg["beta_amplitude"] * np.sin(2.0 * np.pi * grid.times / cfg["beta_period"])
            + cfg["beta_trend"] * grid.times
        )
        pot = AttractorPotential(np.asarray(cfg["center"]), beta)
        truth = simulate_sde2(
            Sde2Params(
                cfg["sigma_v"], pot, tuple(cfg["init_position"]), tuple(cfg["init_velocity"])
            ),
            grid,
            derive_rng(seed, "simulate", "sde2"),
        )
    else:
        truth = simulate_sde1(
            Sde1Params(cfg["beta"], tuple(cfg["center"]), cfg["sigma0_sq"]),
            grid,
            derive_rng(seed, "simulate", "sde1"),
        )
    data = observe(truth, obs_times, ObsParams(cfg["sigma_s_sq"]), derive_rng(seed, "simulate", "obs"))
    save_dataset(args.out, truth, data, cfg)
    print(f"wrote truth.csv, telemetry.csv, params.json to {args.out}")
    return 0


def _fit_pipeline(data, cfg: dict):
    """Shared fit stage: grid, basis, AID fit, K draws."""
    t0, t1 = float(data.obs_times[0]), float(data.obs_times[-1])
    base = build_grid(t0, t1, int(cfg["grid_points"]))
    grid, _ = merge_grid(base, data.obs_times)
    basis = uniform_bspline_spec(
        t0, t1, int(cfg["basis_interior"]), int(cfg["basis_degree"]), float(cfg["sigma_alpha_sq"])
    )
    seed = cfg["seed"]
    if cfg["aid"] == "ou":
        params = aid_mod.fit_ou_aid(data, seed=derive_rng(seed, "fit", "ou"))
        imp = aid_mod.draw_ou_paths(params, data, grid, int(cfg["K"]), derive_rng(seed, "draw"))
    elif cfg["aid"] == "gp":
        params = aid_mod.fit_gp_aid(data)
        imp = aid_mod.draw_gp_paths(params, data, grid, int(cfg["K"]), derive_rng(seed, "draw"))
    else:
        raise ValidationError("aid must be 'ou' or 'gp'")
    return grid, basis, params, imp


def _model_config(cfg: dict, basis) -> ProcessModelConfig:
    return ProcessModelConfig(
        center=tuple(cfg["center"]),
        basis=basis,
        priors=PriorSpec(cfg["a_s"], cfg["b_s"], cfg["a_v"], cfg["b_v"]),
        proposal_scale=float(cfg["proposal_scale"]),
        burn_in=cfg["burn_in"],
    )


def _posterior_summaries(chain) -> dict:
    out = {}
    for name in ("sigma_v_sq", "sigma_s_sq"):
        samples = chain.parameter(name)
        lo, hi = scalar_interval(chain, name)
        out[name] = {"median": float(np.median(samples)), "q025": lo, "q975": hi}
        root = name[:-3]  # sigma_v, sigma_s
        out[root] = {
            "median": float(np.median(np.sqrt(samples))),
            "q025": math.sqrt(max(lo, 0.0)),
            "q975": math.sqrt(hi),
        }
    return out


def cmd_fit(args) -> int:
    cfg = _load_config(args.config, FIT_DEFAULTS)
    if args.seed is not None:
        cfg["seed"] = int(args.seed)
    if args.print_config:
        return _print_config(cfg)
    if args.data is None or args.out is None:
        raise ValidationError("--data and --out are required")
    data = read_telemetry_csv(args.data)
    if data.n < 4:
        raise ValidationError("need at least 4 observations")
    grid, basis, params, imp = _fit_pipeline(data, cfg)
    mcfg = _model_config(cfg, basis)
    chain = run_process_imputation(
        imp, data, mcfg, int(cfg["iterations"]), derive_rng(cfg["seed"], "chain")
    )
    os.makedirs(args.out, exist_ok=True)
    W = basis_matrix(basis, grid)
    band = band_from_chain(chain, W, 0.95, grid.times)
    save_chain(os.path.join(args.out, "chain"), chain)
    write_csv_atomic(
        os.path.join(args.out, "band.csv"),
        ["time", "lower", "upper"],
        list(zip(band.times, band.lower, band.upper)),
    )
    summary = _posterior_summaries(chain)
    summary["aid"] = imp.source
    summary["K"] = imp.K
    summary["iterations"] = chain.iterations
    summary["burn_in"] = chain.burn_in
    summary["acceptance_rates"] = chain.acceptance_rates
    write_json_atomic(os.path.join(args.out, "summary.json"), summary)
    write_json_atomic(os.path.join(args.out, "config.json"), cfg)
    if cfg["save_imputations"]:
        aid_mod.save_imputation_set(os.path.join(args.out, "imputations"), imp)
    print(f"wrote chain, band.csv, summary.json to {args.out}")
    return 0


def default_tuning_grid() -> list[float]:
    """The 29-value grid 10^(i/4), i = -16..12."""
    return [10 ** (i / 4.0) for i in range(-16, 13)]


def cmd_select_tuning(args) -> int:
    cfg = _load_config(args.config, FIT_DEFAULTS)
    if args.seed is not None:
        cfg["seed"] = int(args.seed)
    if args.iterations is not None:
        cfg["iterations"] = int(args.iterations)
    if args.grid is not None:
        grid_values = [float(v) for v in args.grid.split(",")]
        if not grid_values:
            raise ValidationError("empty tuning grid")
    else:
        grid_values = default_tuning_grid()
    if args.print_config:
        cfg = dict(cfg)
        cfg["tuning_grid"] = grid_values
        return _print_config(cfg)
    if args.data is None or args.out is None:
        raise ValidationError("--data and --out are required")
    data = read_telemetry_csv(args.data)
    grid, basis, params, imp = _fit_pipeline(data, cfg)
    W = basis_matrix(basis, grid)
    center = tuple(cfg["center"])
    stats = [PathStats(d, W, center, data) for d in imp.draws]
    rows = []
    best = None
    for value in grid_values:
        b = dataclasses.replace(basis, prior_variance=float(value))
        mcfg = _model_config(cfg, b)
        chain = run_process_imputation(
            imp, data, mcfg, int(cfg["iterations"]), derive_rng(cfg["seed"], "chain", value)
        )
        res = dic(
            chain,
            lambda a, sv: float(np.mean([st.loglik(a, sv) for st in stats])),
        )
        rows.append((value, res.dic, res.dbar, res.d_at_mean, res.p_d))
        if best is None or res.dic < best[1]:
            best = (value, res.dic)
    os.makedirs(args.out, exist_ok=True)
    write_csv_atomic(
        os.path.join(args.out, "tuning.csv"),
        ["sigma_alpha_sq", "dic", "dbar", "d_at_mean", "p_d"],
        rows,
    )
    write_json_atomic(
        os.path.join(args.out, "selected.json"),
        {"sigma_alpha_sq": best[0], "dic": best[1], "grid": grid_values},
    )
    print(f"selected sigma_alpha_sq = {best[0]:.6g} (DIC {best[1]:.4f})")
    return 0


def cmd_study(args) -> int:
    if args.id not in (1, 2):
        raise ValidationError("study id must be 1 or 2")
    overrides = {}
    if args.config is not None:
        try:
            with open(args.config) as fh:
                overrides = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {args.config}: {exc}") from exc
    overrides["scale"] = float(args.scale)
    if args.replicates is not None:
        overrides["replicates"] = int(args.replicates)
    overrides["master_seed"] = _master_seed(args.seed)
    maker = study1_config if args.id == 1 else study2_config
    try:
        config = maker(**overrides)
    except TypeError as exc:
        raise ValidationError(f"bad study config: {exc}") from exc
    if args.print_config:
        return _print_config(config.to_dict())
    if args.out is None:
        raise ValidationError("--out is required")
    workers = args.threads if args.threads else (os.cpu_count() or 1)
    if args.resume:
        report = resume_study(config, args.out, workers=workers)
    else:
        report = run_study(config, args.out, workers=workers)
    print(
        f"study {args.id}: {report['n_tasks']} tasks, {report['n_failed']} failed; "
        f"tables in {args.out}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pathimpute",
        description="Process imputation for continuous-time movement models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a synthetic dataset")
    p.add_argument("--model", choices=["sde1", "sde2"], help="latent model")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--print-config", action="store_true", help="print resolved config and exit")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit the movement model to telemetry via process imputation")
    p.add_argument("--data", help="telemetry CSV (time,x,y)")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--print-config", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("study", help="run a replicated simulation study")
    p.add_argument("--id", type=int, required=True, help="study id (1 or 2)")
    p.add_argument("--scale", type=float, default=1.0, help="desk-scale factor for grids/chains")
    p.add_argument("--out", help="output directory")
    p.add_argument("--replicates", type=int)
    p.add_argument("--config", help="JSON file of StudyConfig overrides")
    p.add_argument("--seed", type=int, help="master seed (MI_SEED env is the fallback)")
    p.add_argument("--threads", type=int, help="worker processes (default: cpu count)")
    p.add_argument("--resume", action="store_true", help="resume from checkpoint manifest")
    p.add_argument("--print-config", action="store_true")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("select-tuning", help="DIC grid search for sigma_alpha_sq")
    p.add_argument("--data", help="telemetry CSV (time,x,y)")
    p.add_argument("--config", help="JSON config file (fit config)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--grid", help="comma-separated sigma_alpha_sq values (default: 10^(i/4), i=-16..12)")
    p.add_argument("--iterations", type=int, help="override chain length per grid value")
    p.add_argument("--seed", type=int)
    p.add_argument("--print-config", action="store_true")
    p.set_defaults(func=cmd_select_tuning)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
