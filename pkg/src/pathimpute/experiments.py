"""Replicated simulation-study drivers.

Study 1 simulates the second-order potential-force model with a
time-varying attraction strength and evaluates process imputation against
the true-path baseline. Study 2 simulates the first-order constant-strength
model and compares process imputation against the exact sampler. Every
random quantity is seeded by hashing the master seed with study, regime,
replicate and stage labels, so studies are deterministic and resumable,
and replicates can run in parallel.
"""

from __future__ import annotations

import concurrent.futures
import json
import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import aid as aid_mod
from .aid.imputation import ImputationSet
from .core import PriorSpec, Telemetry, basis_matrix, build_grid, merge_grid, uniform_bspline_spec
from .errors import ValidationError
from .evaluate import band_from_chain, coverage_detection, scalar_coverage, scalar_interval
from .exact_mcmc import ExactModelConfig, run_exact, run_imputation_sde1
from .impute_mcmc import ProcessModelConfig, run_process_imputation
from .potential import AttractorPotential
from .simulate import ObsParams, Sde1Params, Sde2Params, observe, save_dataset, simulate_sde1, simulate_sde2
from .util import derive_rng, write_csv_atomic, write_json_atomic

__all__ = [
    "RegimeSpec",
    "StudyConfig",
    "study1_config",
    "study2_config",
    "study1_beta_truth",
    "run_study",
    "resume_study",
    "SUMMARY_COLUMNS",
]

SUMMARY_COLUMNS = [
    "regime",
    "AID",
    "K",
    "replicate",
    "coverage_beta",
    "detection_beta",
    "covered_sigma_v_sq",
    "covered_sigma_s_sq",
    "covered_beta_scalar",
    "runtime_s",
]

#: measurement-error variances (km^2) for the large/small regimes
ERROR_LEVELS = {"large": 1e-2, "small": 1e-4}
#: observation counts for the sparse/dense regimes
OBS_COUNTS = {"sparse": 100, "dense": 500}


@dataclass(frozen=True)
class RegimeSpec:
    label: str
    sigma_s_sq: float
    n_obs: int

    def __post_init__(self):
        if self.sigma_s_sq <= 0 or self.n_obs < 4:
            raise ValidationError("regime needs sigma_s_sq > 0 and n_obs >= 4")


def default_regimes() -> tuple[RegimeSpec, ...]:
    out = []
    for elabel, ss in ERROR_LEVELS.items():
        for olabel, n in OBS_COUNTS.items():
            out.append(RegimeSpec(f"{elabel}-{olabel}", ss, n))
    return tuple(out)


@dataclass(frozen=True)
class StudyConfig:
    """Fully resolved study definition; JSON-serializable for provenance.

    ``scale`` shrinks grid sizes and chain lengths for desk-scale runs
    without touching the statistical design (regimes, replicate count, K).
    """

    study: int
    regimes: tuple[RegimeSpec, ...]
    replicates: int = 24
    k_values: tuple[int, ...] = (8, 32, 128)
    aids: tuple[str, ...] = ("ou",)
    include_posterior_mean: bool = True
    include_truth_baseline: bool = False
    include_exact: bool = False
    scale: float = 1.0
    grid_points: int = 500
    iterations: int = 4000
    exact_iterations: int = 4000
    duration: float = 50.0
    center: tuple[float, float] = (0.0, 0.0)
    # study-1 truth process
    sigma_v: float = 1.0
    beta_offset: float = 0.3
    beta_amplitude: float = 1.0
    beta_period: float = 15.0
    beta_trend: float = 0.02
    init_position: tuple[float, float] = (3.0, 0.0)
    init_velocity: tuple[float, float] = (0.0, 0.0)
    # study-2 truth process
    beta_true: float = 0.5
    sigma0_sq: float = 1e2
    # inference settings
    basis_interior: int = 8
    basis_degree: int = 3
    sigma_alpha_sq: float = 25.0
    a_s: float = 1e-3
    b_s: float = 1e-4
    a_v: float = 1e-3
    b_v: float = 1e-4
    proposal_scale: float = 0.2
    # observation layout: iid-uniform times identify the measurement-error
    # nugget far better than a regular lattice (short gaps pin it down)
    obs_layout: str = "uniform"
    save_datasets: bool = True
    master_seed: int = 20160301

    def __post_init__(self):
        if self.study not in (1, 2):
            raise ValidationError("study must be 1 or 2")
        if self.replicates < 1:
            raise ValidationError("replicates must be >= 1")
        if self.scale <= 0:
            raise ValidationError("scale must be positive")
        if any(k < 1 for k in self.k_values):
            raise ValidationError("K values must be >= 1")
        if self.obs_layout not in ("uniform", "regular"):
            raise ValidationError("obs_layout must be 'uniform' or 'regular'")
        regimes = tuple(
            r if isinstance(r, RegimeSpec) else RegimeSpec(**r) for r in self.regimes
        )
        object.__setattr__(self, "regimes", regimes)
        object.__setattr__(self, "k_values", tuple(int(k) for k in self.k_values))
        object.__setattr__(self, "aids", tuple(self.aids))

    @property
    def eff_grid_points(self) -> int:
        return max(20, round(self.grid_points * self.scale))

    @property
    def eff_iterations(self) -> int:
        return max(200, round(self.iterations * self.scale))

    @property
    def eff_exact_iterations(self) -> int:
        return max(200, round(self.exact_iterations * self.scale))

    def priors(self) -> PriorSpec:
        return PriorSpec(a_s=self.a_s, b_s=self.b_s, a_v=self.a_v, b_v=self.b_v)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["regimes"] = [asdict(r) for r in self.regimes]
        return d

    @staticmethod
    def from_dict(d: dict) -> "StudyConfig":
        d = dict(d)
        d["regimes"] = tuple(RegimeSpec(**r) for r in d["regimes"])
        for key in ("k_values", "aids", "center", "init_position", "init_velocity"):
            if key in d and isinstance(d[key], list):
                d[key] = tuple(d[key])
        return StudyConfig(**d)


def study1_config(**overrides) -> StudyConfig:
    base = dict(
        study=1,
        regimes=default_regimes(),
        replicates=24,
        aids=("ou", "gp"),
        include_truth_baseline=True,
        include_exact=False,
        duration=30.0,
        grid_points=400,
    )
    base.update(overrides)
    return StudyConfig(**base)


def study2_config(**overrides) -> StudyConfig:
    base = dict(
        study=2,
        regimes=default_regimes(),
        replicates=24,
        aids=("ou",),
        include_truth_baseline=False,
        include_exact=True,
        duration=50.0,
        beta_true=0.45,
        grid_points=500,
        iterations=8000,
        exact_iterations=8000,
    )
    base.update(overrides)
    return StudyConfig(**base)


def study1_beta_truth(t, config: StudyConfig) -> np.ndarray:
    """Smooth sinusoid-plus-trend attraction strength used as Study-1 truth."""
    t = np.asarray(t, dtype=float)
    return (
        config.beta_offset
        + config.beta_amplitude * np.sin(2.0 * np.pi * t / config.beta_period)
        + config.beta_trend * t
    )


def _obs_times(config: StudyConfig, regime: RegimeSpec, rng) -> np.ndarray:
    """Observation times: the first and last instants are always observed;
    interior times are iid uniform (default) or a regular lattice."""
    T = config.duration
    n = regime.n_obs
    if config.obs_layout == "regular":
        return np.linspace(0.0, T, n)
    inner = np.sort(rng.uniform(0.0, T, n - 2))
    times = np.concatenate([[0.0], inner, [T]])
    # guard the (measure-zero) chance of coincident draws
    bad = np.flatnonzero(np.diff(times) <= 0)
    for i in bad:
        times[i + 1] = times[i] + 1e-9
    return times


def _method_list(config: StudyConfig) -> list[tuple[str, str, int]]:
    """(method_key, AID column, K column) in deterministic output order."""
    methods = []
    for aid in config.aids:
        for k in sorted(config.k_values):
            methods.append((f"{aid}:K={k}", aid, k))
        if config.include_posterior_mean:
            methods.append((f"{aid}:mean", f"{aid}_mean", 1))
    if config.include_truth_baseline:
        methods.append(("truth", "truth", 1))
    if config.include_exact:
        methods.append(("exact", "exact", 0))
    return methods


def _fit_aid(aid: str, data: Telemetry, seed):
    if aid == "ou":
        return aid_mod.fit_ou_aid(data, seed=seed)
    if aid == "gp":
        return aid_mod.fit_gp_aid(data)
    raise ValidationError(f"unknown AID {aid!r}")


def _draw_aid(aid: str, params, data, grid, K, seed) -> ImputationSet:
    if aid == "ou":
        return aid_mod.draw_ou_paths(params, data, grid, K, seed)
    return aid_mod.draw_gp_paths(params, data, grid, K, seed)


def _mean_only_set(imp: ImputationSet, aid: str) -> ImputationSet:
    source = dict(imp.source)
    source["aid"] = f"{aid}_mean"
    return ImputationSet(
        grid=imp.grid, draws=(imp.mean_path,), source=source, K=1, mean_path=imp.mean_path
    )


def _study1_replicate(config: StudyConfig, regime: RegimeSpec, rep: int, out_dir: str | None):
    ms = config.master_seed
    T = config.duration
    base = build_grid(0.0, T, config.eff_grid_points)
    obs_times = _obs_times(config, regime, derive_rng(ms, "study1", regime.label, rep, "obs-times"))
    grid, _ = merge_grid(base, obs_times)
    beta_grid = study1_beta_truth(grid.times, config)
    pot = AttractorPotential(np.asarray(config.center), beta_grid)
    truth = simulate_sde2(
        Sde2Params(config.sigma_v, pot, config.init_position, config.init_velocity),
        grid,
        derive_rng(ms, "study1", regime.label, rep, "sim"),
    )
    data = observe(
        truth, obs_times, ObsParams(regime.sigma_s_sq), derive_rng(ms, "study1", regime.label, rep, "obs")
    )
    if out_dir and config.save_datasets:
        save_dataset(
            out_dir,
            truth,
            data,
            {
                "study": 1,
                "regime": regime.label,
                "replicate": rep,
                "sigma_v": config.sigma_v,
                "sigma_s_sq": regime.sigma_s_sq,
                "beta": "offset+amplitude*sin(2*pi*t/period)+trend*t",
                "beta_offset": config.beta_offset,
                "beta_amplitude": config.beta_amplitude,
                "beta_period": config.beta_period,
                "beta_trend": config.beta_trend,
            },
        )
    basis = uniform_bspline_spec(
        0.0, T, config.basis_interior, config.basis_degree, config.sigma_alpha_sq
    )
    W = basis_matrix(basis, grid)
    mcfg = ProcessModelConfig(
        center=config.center,
        basis=basis,
        priors=config.priors(),
        proposal_scale=config.proposal_scale,
        init_sigma_s_sq=regime.sigma_s_sq,
    )

    def evaluate_chain(chain):
        band = band_from_chain(chain, W, 0.95, grid.times)
        cov, det = coverage_detection(band, beta_grid)
        return {
            "coverage_beta": cov,
            "detection_beta": det,
            "covered_sigma_v_sq": int(
                scalar_coverage(chain, "sigma_v_sq", config.sigma_v**2)
            ),
            "covered_sigma_s_sq": int(
                scalar_coverage(chain, "sigma_s_sq", regime.sigma_s_sq)
            ),
            "covered_beta_scalar": None,
        }

    methods = {}
    for aid in config.aids:
        t0 = time.perf_counter()
        params = _fit_aid(aid, data, derive_rng(ms, "study1", regime.label, rep, f"fit-{aid}"))
        fit_time = time.perf_counter() - t0
        for K in sorted(config.k_values):
            t0 = time.perf_counter()
            imp = _draw_aid(
                aid, params, data, grid, K,
                derive_rng(ms, "study1", regime.label, rep, f"draw-{aid}-{K}"),
            )
            chain = run_process_imputation(
                imp, data, mcfg, config.eff_iterations,
                derive_rng(ms, "study1", regime.label, rep, f"chain-{aid}-{K}"),
            )
            rec = evaluate_chain(chain)
            rec["runtime_s"] = fit_time + time.perf_counter() - t0
            methods[f"{aid}:K={K}"] = rec
        if config.include_posterior_mean:
            t0 = time.perf_counter()
            imp = _draw_aid(
                aid, params, data, grid, 1,
                derive_rng(ms, "study1", regime.label, rep, f"draw-{aid}-mean"),
            )
            chain = run_process_imputation(
                _mean_only_set(imp, aid), data, mcfg, config.eff_iterations,
                derive_rng(ms, "study1", regime.label, rep, f"chain-{aid}-mean"),
            )
            rec = evaluate_chain(chain)
            rec["runtime_s"] = fit_time + time.perf_counter() - t0
            methods[f"{aid}:mean"] = rec
    if config.include_truth_baseline:
        t0 = time.perf_counter()
        imp = ImputationSet(grid=grid, draws=(truth,), source={"aid": "truth"}, K=1)
        chain = run_process_imputation(
            imp, data, mcfg, config.eff_iterations,
            derive_rng(ms, "study1", regime.label, rep, "chain-truth"),
        )
        rec = evaluate_chain(chain)
        rec["runtime_s"] = time.perf_counter() - t0
        methods["truth"] = rec
    return methods


def _study2_replicate(config: StudyConfig, regime: RegimeSpec, rep: int, out_dir: str | None):
    ms = config.master_seed
    T = config.duration
    base = build_grid(0.0, T, config.eff_grid_points)
    obs_times = _obs_times(config, regime, derive_rng(ms, "study2", regime.label, rep, "obs-times"))
    grid, _ = merge_grid(base, obs_times)
    truth = simulate_sde1(
        Sde1Params(config.beta_true, config.center, config.sigma0_sq),
        grid,
        derive_rng(ms, "study2", regime.label, rep, "sim"),
    )
    data = observe(
        truth, obs_times, ObsParams(regime.sigma_s_sq), derive_rng(ms, "study2", regime.label, rep, "obs")
    )
    if out_dir and config.save_datasets:
        save_dataset(
            out_dir,
            truth,
            data,
            {
                "study": 2,
                "regime": regime.label,
                "replicate": rep,
                "beta": config.beta_true,
                "sigma0_sq": config.sigma0_sq,
                "sigma_s_sq": regime.sigma_s_sq,
            },
        )
    ecfg = ExactModelConfig(
        center=config.center,
        sigma0_sq=config.sigma0_sq,
        priors=config.priors(),
        grid_points=config.eff_grid_points,
        iterations=config.eff_exact_iterations,
        init_sigma_s_sq=regime.sigma_s_sq,
    )

    def evaluate_chain(chain):
        lo, hi = scalar_interval(chain, "beta")
        covered = bool(lo <= config.beta_true <= hi)
        return {
            "coverage_beta": None,
            "detection_beta": int(covered and (lo > 0.0 or hi < 0.0)),
            "covered_sigma_v_sq": None,
            "covered_sigma_s_sq": int(
                scalar_coverage(chain, "sigma_s_sq", regime.sigma_s_sq)
            ),
            "covered_beta_scalar": int(covered),
        }

    methods = {}
    for aid in config.aids:
        t0 = time.perf_counter()
        params = _fit_aid(aid, data, derive_rng(ms, "study2", regime.label, rep, f"fit-{aid}"))
        fit_time = time.perf_counter() - t0
        for K in sorted(config.k_values):
            t0 = time.perf_counter()
            imp = _draw_aid(
                aid, params, data, grid, K,
                derive_rng(ms, "study2", regime.label, rep, f"draw-{aid}-{K}"),
            )
            chain = run_imputation_sde1(
                imp, data, ecfg, config.eff_iterations,
                derive_rng(ms, "study2", regime.label, rep, f"chain-{aid}-{K}"),
            )
            rec = evaluate_chain(chain)
            rec["runtime_s"] = fit_time + time.perf_counter() - t0
            methods[f"{aid}:K={K}"] = rec
        if config.include_posterior_mean:
            t0 = time.perf_counter()
            imp = _draw_aid(
                aid, params, data, grid, 1,
                derive_rng(ms, "study2", regime.label, rep, f"draw-{aid}-mean"),
            )
            chain = run_imputation_sde1(
                _mean_only_set(imp, aid), data, ecfg, config.eff_iterations,
                derive_rng(ms, "study2", regime.label, rep, f"chain-{aid}-mean"),
            )
            rec = evaluate_chain(chain)
            rec["runtime_s"] = fit_time + time.perf_counter() - t0
            methods[f"{aid}:mean"] = rec
    if config.include_exact:
        t0 = time.perf_counter()
        chain = run_exact(data, ecfg, derive_rng(ms, "study2", regime.label, rep, "exact"), grid=grid)
        rec = evaluate_chain(chain)
        rec["runtime_s"] = time.perf_counter() - t0
        methods["exact"] = rec
    return methods


def _task_key(regime_label: str, rep: int) -> str:
    return f"{regime_label}|{rep}"


def _replicate_dir(out_dir: str, regime_label: str, rep: int) -> str:
    return os.path.join(out_dir, f"regime_{regime_label}", f"rep_{rep:03d}")


def _run_task(config_dict: dict, regime_idx: int, rep: int, out_dir: str | None) -> dict:
    """One (regime, replicate) unit of work; returns the replicate report."""
    config = StudyConfig.from_dict(config_dict)
    regime = config.regimes[regime_idx]
    rep_dir = _replicate_dir(out_dir, regime.label, rep) if out_dir else None
    t0 = time.perf_counter()
    try:
        runner = _study1_replicate if config.study == 1 else _study2_replicate
        methods = runner(config, regime, rep, rep_dir)
        report = {
            "status": "ok",
            "regime": regime.label,
            "replicate": rep,
            "methods": methods,
            "runtime_s": time.perf_counter() - t0,
        }
    except Exception as exc:  # replicate failures are recorded, not fatal
        report = {
            "status": "failed",
            "regime": regime.label,
            "replicate": rep,
            "error": f"{type(exc).__name__}: {exc}",
            "runtime_s": time.perf_counter() - t0,
        }
    if rep_dir is not None:
        os.makedirs(rep_dir, exist_ok=True)
        write_json_atomic(os.path.join(rep_dir, "report.json"), report)
    return report


def _aggregate(config: StudyConfig, reports: dict, out_dir: str | None) -> dict:
    methods = _method_list(config)
    metric_names = [
        "coverage_beta",
        "detection_beta",
        "covered_sigma_v_sq",
        "covered_sigma_s_sq",
        "covered_beta_scalar",
    ]
    rows = []
    timing_rows = []
    aggregate = {}
    failures = []
    for regime in config.regimes:
        agg_regime = aggregate.setdefault(regime.label, {})
        for key, aid_col, k_col in methods:
            values = {mname: [] for mname in metric_names}
            for rep in range(config.replicates):
                rpt = reports.get(_task_key(regime.label, rep))
                if rpt is None or rpt["status"] != "ok":
                    continue
                rec = rpt["methods"].get(key)
                if rec is None:
                    continue
                rows.append(
                    (
                        regime.label,
                        aid_col,
                        k_col,
                        rep,
                        rec["coverage_beta"],
                        rec["detection_beta"],
                        rec["covered_sigma_v_sq"],
                        rec["covered_sigma_s_sq"],
                        rec["covered_beta_scalar"],
                        None,  # runtime_s: deterministic table; see timings.csv
                    )
                )
                timing_rows.append((regime.label, aid_col, k_col, rep, rec.get("runtime_s")))
                for mname in metric_names:
                    if rec[mname] is not None:
                        values[mname].append(float(rec[mname]))
            agg_regime[key] = {
                mname: (float(np.mean(v)) if v else None) for mname, v in values.items()
            }
            agg_regime[key]["n"] = len(values[metric_names[0]]) or len(
                values["covered_beta_scalar"]
            )
        for rep in range(config.replicates):
            rpt = reports.get(_task_key(regime.label, rep))
            if rpt is not None and rpt["status"] == "failed":
                failures.append({"regime": regime.label, "replicate": rep, "error": rpt["error"]})

    agg_rows = []
    for regime in config.regimes:
        for key, aid_col, k_col in methods:
            for mname in metric_names:
                vals = []
                for rep in range(config.replicates):
                    rpt = reports.get(_task_key(regime.label, rep))
                    if rpt is None or rpt["status"] != "ok":
                        continue
                    rec = rpt["methods"].get(key)
                    if rec is not None and rec[mname] is not None:
                        vals.append(float(rec[mname]))
                if not vals:
                    continue
                v = np.asarray(vals)
                agg_rows.append(
                    (
                        regime.label,
                        aid_col,
                        k_col,
                        mname,
                        float(np.mean(v)),
                        float(np.quantile(v, 0.125)),
                        float(np.median(v)),
                        float(np.quantile(v, 0.875)),
                        v.size,
                    )
                )

    if out_dir is not None:
        write_csv_atomic(os.path.join(out_dir, "summary.csv"), SUMMARY_COLUMNS, rows)
        write_csv_atomic(
            os.path.join(out_dir, "aggregates.csv"),
            ["regime", "AID", "K", "metric", "mean", "q125", "median", "q875", "n"],
            agg_rows,
        )
        write_csv_atomic(
            os.path.join(out_dir, "timings.csv"),
            ["regime", "AID", "K", "replicate", "runtime_s"],
            timing_rows,
        )
    return {
        "study": config.study,
        "n_tasks": len(config.regimes) * config.replicates,
        "n_failed": len(failures),
        "failures": failures,
        "aggregate": aggregate,
    }


def _load_manifest(path: str) -> dict:
    try:
        with open(path) as fh:
            manifest = json.load(fh)
        if not isinstance(manifest, dict) or "completed" not in manifest:
            raise ValueError("missing 'completed'")
        return manifest
    except (OSError, ValueError) as exc:
        raise ValidationError(f"corrupted or missing checkpoint manifest: {exc}") from exc


def run_study(
    config: StudyConfig,
    out_dir: str | None,
    workers: int = 1,
    resume: bool = False,
) -> dict:
    """Execute every (regime, replicate) task, aggregate, and write tables.

    With ``resume=True`` previously completed replicates (per the checkpoint
    manifest) are reloaded instead of re-run; the final tables are identical
    to an uninterrupted run because all seeds derive from task labels.
    """
    config_dict = config.to_dict()
    manifest = {"completed": {}}
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        manifest_path = os.path.join(out_dir, "manifest.json")
        config_path = os.path.join(out_dir, "config.json")
        if resume:
            manifest = _load_manifest(manifest_path)
            try:
                with open(config_path) as fh:
                    stored = json.load(fh)
            except (OSError, ValueError) as exc:
                raise ValidationError(f"cannot resume: unreadable config.json: {exc}") from exc
            # compare through a JSON round-trip so tuple/list spelling is moot
            if stored != json.loads(json.dumps(config_dict)):
                raise ValidationError("cannot resume: config differs from checkpoint")
        else:
            write_json_atomic(config_path, config_dict)
            write_json_atomic(manifest_path, manifest)
    elif resume:
        raise ValidationError("resume requires an output directory")

    reports = {}
    pending = []
    for regime_idx, regime in enumerate(config.regimes):
        for rep in range(config.replicates):
            key = _task_key(regime.label, rep)
            if resume and key in manifest["completed"]:
                rep_dir = _replicate_dir(out_dir, regime.label, rep)
                try:
                    with open(os.path.join(rep_dir, "report.json")) as fh:
                        reports[key] = json.load(fh)
                except (OSError, ValueError) as exc:
                    raise ValidationError(
                        f"cannot resume: unreadable report for {key}: {exc}"
                    ) from exc
            else:
                pending.append((regime_idx, rep, key))

    def record(key, report):
        reports[key] = report
        manifest["completed"][key] = report["status"]
        if out_dir is not None:
            write_json_atomic(manifest_path, manifest)

    if workers <= 1 or not pending:
        for regime_idx, rep, key in pending:
            record(key, _run_task(config_dict, regime_idx, rep, out_dir))
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {
                pool.submit(_run_task, config_dict, regime_idx, rep, out_dir): key
                for regime_idx, rep, key in pending
            }
            for fut in concurrent.futures.as_completed(futures):
                record(futures[fut], fut.result())

    report = _aggregate(config, reports, out_dir)
    if out_dir is not None:
        write_json_atomic(os.path.join(out_dir, "study_report.json"), report)
    return report


def resume_study(config: StudyConfig, out_dir: str, workers: int = 1) -> dict:
    """Resume a checkpointed study; completed replicates are not re-run."""
    return run_study(config, out_dir, workers=workers, resume=True)
