#!/usr/bin/env python3
"""
Experiment orchestration for massem.

Builds models and kernels from an ExperimentConfig, runs single chains with
their artifacts (trace.csv, timing.csv, summary.json, config-echo.json),
the two replication sweeps and the verification suite behind `massem check`.
"""

import csv
import json
import logging
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from config import ConfigurationError, ExperimentConfig
from sampling.diagnostics import (acceptance_rate, energy_scaling_check,
                                  finite_diff_grad_check, mass_convergence_check,
                                  mean_epoch_ms, np_energy_drift, posterior_mean_error,
                                  reversibility_check, rmse)
from sampling.dynamics import HmcConfig, NpConfig, PhaseState, resample_momentum, sgnphmc_epoch
from sampling.errors import SamplerDivergence, SamplingError
from sampling.mcem import SamplerKind, initial_state, mcem_loop
from sampling.models import (MIXTURE_LR_WEIGHTS, BayesLogisticModel, GaussianNormalGammaModel,
                             GaussianTarget, LinearPotentialTarget, MinibatchSampler, TargetModel,
                             generate_gaussian_data, generate_mixture_lr_data, load_csv_dataset)
from sampling.spd_linalg import SpdMatrix
from sampling.trace import Trace

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_DIVERGENCE = 2
EXIT_CHECK_FAILED = 3

MIN_REPLICATE_SEEDS = 3
TABLE2_EPS_GRID = (1e-2, 1e-4, 1e-6)

# Settings of the synthetic Gaussian comparison
TABLE1_SETTINGS = {
    "experiment": {"epochs": 10000, "burn_in": 5000},
    "model": {"kind": "gaussian-nw", "n": 5000},
    "dynamics": {"n_leapfrog": 10, "batch_size": 100, "C": 10.0, "B_hat": 0.0, "A": 1.0,
                 "A_noise": 0.01, "B_noise": 0.01},
    "mcem": {"s_count": 100},
}
TABLE1_EPS = {"hmc": 1e-2, "stochastic": 1e-3}

# Settings of the synthetic logistic regression comparison
TABLE2_SETTINGS = {
    "experiment": {"epochs": 20000, "burn_in": 10000},
    "model": {"kind": "bayes-lr-synthetic", "n": 2000, "prior_variance": 10.0},
    "dynamics": {"n_leapfrog": 10, "batch_size": 100, "C": 10.0, "B_hat": 0.0, "A": 1.0,
                 "A_noise": 0.01, "B_noise": 0.01},
    "mcem": {"s_count": 300},
}
TABLE2_NP_S_COUNT = 200

# Runtime comparison: fixed S_count, 10 leapfrog steps
TABLE3_SETTINGS = {
    "experiment": {"epochs": 2000, "burn_in": 1000},
    "model": {"prior_variance": 10.0},
    "dynamics": {"eps": 1e-4, "n_leapfrog": 10, "batch_size": 100, "C": 10.0, "B_hat": 0.0,
                 "A": 1.0, "A_noise": 0.01, "B_noise": 0.01},
    "mcem": {"s_count": 300, "S_I": 1_000_000, "min_increment": 0},
}


def chain_rng(seed: int, chain: int = 0) -> np.random.Generator:
    """
    Random stream of one chain: PCG64(seed) jumped 1 + chain times.

    The unjumped stream is reserved for data generation, so data and
    chains never share draws.
    """
    return np.random.Generator(np.random.PCG64(seed).jumped(1 + chain))


def build_model(cfg: ExperimentConfig) -> TargetModel:
    m = cfg.model
    if m["kind"] == "gaussian-nw":
        data = generate_gaussian_data(int(m["n"]), cfg.seed)
        return GaussianNormalGammaModel(data, mu0=float(m["mu0"]), lambda0=float(m["lambda0"]),
                                        a0=float(m["a0"]), b0=float(m["b0"]))
    if m["kind"] == "bayes-lr-synthetic":
        data = generate_mixture_lr_data(int(m["n"]), cfg.seed, m["label_rule"])
        return BayesLogisticModel(data, prior_variance=float(m["prior_variance"]),
                                  truth=MIXTURE_LR_WEIGHTS)
    data = load_csv_dataset(m["path"], int(m["label_column"]), bool(m["standardize"]))
    return BayesLogisticModel(data, prior_variance=float(m["prior_variance"]))


def build_batcher(cfg: ExperimentConfig, model: TargetModel) -> MinibatchSampler:
    batch_size = cfg.dynamics["batch_size"] if cfg.sampler.stochastic else None
    return MinibatchSampler(model.n, batch_size)


def run_chain(cfg: ExperimentConfig, model: Optional[TargetModel] = None) -> Trace:
    """Sample one chain from theta = 0 and return its trace."""
    model = model or build_model(cfg)
    rng = chain_rng(cfg.seed)
    kernel_cfg = cfg.kernel_config()
    state = initial_state(cfg.sampler, np.zeros(model.dim), SpdMatrix.identity(model.dim),
                          kernel_cfg, rng)
    return mcem_loop(cfg.sampler, model, state, kernel_cfg, cfg.mcem_config(), cfg.epochs,
                     rng, build_batcher(cfg, model))


def summarize(cfg: ExperimentConfig, model: TargetModel, trace: Trace) -> Dict[str, Any]:
    """
    Summary with a fixed key set: one rmse_<name> entry per reported
    parameter (null without ground truth or samples), acceptance rate (null
    for kernels without MH), timing, final mass and S_count, and failure.
    """
    names = model.reported_names()
    summary: Dict[str, Any] = {
        "sampler": cfg.sampler.value,
        "model": cfg.model["kind"],
        "seed": cfg.seed,
        "epochs_run": len(trace),
        "burn_in": cfg.burn_in,
        "rmse_mode": cfg.rmse_mode,
    }
    errors: List[Optional[float]] = [None] * len(names)
    means: List[Optional[float]] = [None] * len(names)
    kept = [r.theta for r in trace.records if r.epoch >= cfg.burn_in]
    if kept:
        reported = np.vstack([model.reported(theta) for theta in kept])
        means = reported.mean(axis=0).tolist()
        if model.truth is not None:
            metric = rmse if cfg.rmse_mode == "per-sample" else posterior_mean_error
            errors = metric(reported, model.truth).tolist()
    for name, value in zip(names, errors):
        summary[f"rmse_{name}"] = value
    summary["posterior_mean"] = dict(zip(names, means))
    summary["acceptance_rate"] = acceptance_rate(trace)
    summary["mean_epoch_ms"] = mean_epoch_ms(trace) if trace.records else None
    summary["final_m_inv"] = trace.final_m_inv.entries.tolist() if trace.final_m_inv else None
    summary["final_s_count"] = trace.final_s_count
    summary["final_Q"] = trace.final_Q
    summary["m_steps"] = trace.m_steps
    summary["failed"] = trace.failed
    summary["failure_epoch"] = trace.failure[0] if trace.failure else None
    summary["failure_message"] = trace.failure[1] if trace.failure else None
    return summary


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def write_trace_csv(path: Path, trace: Trace, timing: bool = False):
    """
    epoch,theta_0..theta_{D-1},energy,s_count,accepted,epoch_ms

    epoch_ms is 0 unless ``timing`` is set, so the file depends only on
    config and seed. An unbounded S_count is written as an empty cell.
    """
    dim = trace.records[0].theta.shape[0] if trace.records else len(trace.param_names)
    header = ["epoch"] + [f"theta_{i}" for i in range(dim)] + \
        ["energy", "s_count", "accepted", "epoch_ms"]
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for r in trace.records:
            accepted = "" if r.accepted is None else int(r.accepted)
            s_count = "" if r.s_count is None else r.s_count
            writer.writerow([r.epoch] + [_fmt(v) for v in r.theta] +
                            [_fmt(r.energy), s_count, accepted,
                             _fmt(r.epoch_ms if timing else 0.0)])


def write_timing_csv(path: Path, trace: Trace):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["epoch", "epoch_ms"])
        for r in trace.records:
            writer.writerow([r.epoch, f"{r.epoch_ms:.6f}"])


def write_json(path: Path, payload: Any):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=False)
        f.write("\n")


def write_error(output_dir: Optional[Path], error: BaseException, exit_code: int) -> Dict[str, Any]:
    """Write error.json into output_dir (when given) and return its payload."""
    payload = {"error": type(error).__name__, "message": str(error), "exit_code": exit_code}
    if isinstance(error, SamplingError) and error.epoch is not None:
        payload["epoch"] = error.epoch
    if output_dir is not None:
        try:
            output_dir.mkdir(parents=True, exist_ok=True)
            write_json(output_dir / "error.json", payload)
        except OSError as e:
            logger.warning(f"Could not write error.json to {output_dir}: {e}")
    return payload


@dataclass
class RunResult:
    exit_code: int
    summary: Dict[str, Any]
    output_dir: Path


def run(cfg: ExperimentConfig, model: Optional[TargetModel] = None) -> RunResult:
    """
    Run one chain and write its artifacts to cfg.output_dir.

    A diverged chain still writes the partial trace and summary, plus
    error.json, and returns exit code 2.
    """
    output_dir = cfg.output_dir
    output_dir.mkdir(parents=True, exist_ok=True)
    write_json(output_dir / "config-echo.json", cfg.to_dict())

    model = model or build_model(cfg)
    logger.info(f"Run {cfg.sampler.value} on {cfg.model['kind']} (n={model.n}, D={model.dim}, "
                f"seed={cfg.seed}) -> {output_dir}")
    trace = run_chain(cfg, model)

    write_trace_csv(output_dir / "trace.csv", trace, cfg.trace_timing)
    write_timing_csv(output_dir / "timing.csv", trace)
    summary = summarize(cfg, model, trace)
    write_json(output_dir / "summary.json", summary)

    if trace.failed:
        epoch, message = trace.failure
        write_error(output_dir, SamplerDivergence(message, epoch=epoch), EXIT_DIVERGENCE)
        return RunResult(EXIT_DIVERGENCE, summary, output_dir)
    logger.info(f"Finished {cfg.sampler.value}: " + ", ".join(
        f"{k}={v:.4g}" for k, v in summary.items() if k.startswith("rmse_") and v is not None
    ))
    return RunResult(EXIT_OK, summary, output_dir)


def _validate_seeds(seeds: Sequence[int]) -> List[int]:
    seeds = [int(s) for s in seeds]
    if len(seeds) < MIN_REPLICATE_SEEDS:
        raise ConfigurationError(
            f"Replication needs at least {MIN_REPLICATE_SEEDS} seeds, got {len(seeds)}"
        )
    if len(set(seeds)) != len(seeds):
        raise ConfigurationError("Replication seeds must be distinct")
    return seeds


def _check_window(settings: Dict[str, Dict[str, Any]], epochs: Optional[int],
                  burn_in: Optional[int]):
    epochs = settings["experiment"]["epochs"] if epochs is None else epochs
    burn_in = settings["experiment"]["burn_in"] if burn_in is None else burn_in
    if burn_in < 0 or epochs <= burn_in:
        raise ConfigurationError(f"epochs ({epochs}) must exceed burn_in ({burn_in})")


SWEEP_KEYS = {"experiment": ("sampler", "seed", "output_dir", "epochs", "burn_in"),
              "model": ("kind",)}


def _check_overrides(overrides: Optional[Dict[str, Dict[str, Any]]],
                     extra: Sequence[str] = ()) -> Dict[str, Dict[str, Any]]:
    """
    Explicit overrides for every run of a sweep. Keys the sweep itself sets
    per run (sampler, seed, output directory, model kind, and ``extra``
    dotted keys) are rejected.
    """
    overrides = overrides or {}
    reserved = {f"{section}.{key}" for section, keys in SWEEP_KEYS.items() for key in keys}
    reserved.update(extra)
    clashes = sorted(f"{section}.{key}" for section, values in overrides.items()
                     for key in values if f"{section}.{key}" in reserved)
    if clashes:
        raise ConfigurationError(
            f"Replication sweeps set {', '.join(clashes)} themselves; these cannot be overridden"
        )
    return overrides


def _validate_jobs(job_list: List[Dict[str, Any]]):
    """Reject an invalid sweep before the first chain runs."""
    for job in job_list:
        ExperimentConfig.from_dict(job)


def _select_samplers(samplers: Optional[Iterable[str]]) -> List[SamplerKind]:
    if not samplers:
        return list(SamplerKind)
    try:
        return [SamplerKind.parse(s) for s in samplers]
    except ValueError as e:
        raise ConfigurationError(str(e))


def _run_row(raw: Dict[str, Any]) -> Dict[str, Any]:
    """One replicate run; failures become a row instead of an exception."""
    exp = raw["experiment"]
    row = {"sampler": exp["sampler"], "seed": exp["seed"], "eps": raw["dynamics"]["eps"]}
    try:
        result = run(ExperimentConfig.from_dict(raw))
    except (SamplingError, ConfigurationError, ValueError, OSError) as e:
        logger.warning(f"{exp['sampler']} seed {exp['seed']} failed: {e}")
        row.update(status="failed", error=f"{type(e).__name__}: {e}")
        return row
    summary = result.summary
    row.update({k: v for k, v in summary.items() if k.startswith("rmse_")})
    row["ms_per_epoch"] = summary["mean_epoch_ms"]
    if result.exit_code != EXIT_OK:
        row.update(status="failed", error=summary["failure_message"])
    else:
        row["status"] = "ok"
    return row


def _execute(jobs: List[Dict[str, Any]], n_workers: int) -> List[Dict[str, Any]]:
    if n_workers <= 1:
        return [_run_row(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(_run_row, jobs))


def _merge(*layers: Dict[str, Dict[str, Any]]) -> Dict[str, Dict[str, Any]]:
    merged: Dict[str, Dict[str, Any]] = {}
    for layer in layers:
        for section, values in layer.items():
            merged.setdefault(section, {}).update(values)
    return merged


def _median(values: List[Optional[float]]) -> Optional[float]:
    values = [v for v in values if v is not None and math.isfinite(v)]
    return statistics.median(values) if values else None


def _aggregate(rows: List[Dict[str, Any]], metrics: Sequence[str]) -> Dict[str, Dict[str, Any]]:
    table: Dict[str, Dict[str, Any]] = {}
    for sampler in dict.fromkeys(r["sampler"] for r in rows):
        ok = [r for r in rows if r["sampler"] == sampler and r["status"] == "ok"]
        entry = {m: _median([r.get(m) for r in ok]) for m in metrics}
        entry["ms_per_epoch"] = _median([r.get("ms_per_epoch") for r in ok])
        entry["runs_ok"] = len(ok)
        entry["runs_failed"] = sum(1 for r in rows if r["sampler"] == sampler) - len(ok)
        table[sampler] = entry
    return table


def _ordering(rows: List[Dict[str, Any]], table: Dict[str, Dict[str, Any]], better: str,
              worse: str, metric: str, strict: bool) -> Optional[Dict[str, Any]]:
    """Does ``better`` beat ``worse`` on the median and in at least 4 of 5 seeds?"""
    if better not in table or worse not in table:
        return None
    compare = (lambda a, b: a < b) if strict else (lambda a, b: a <= b)
    by_seed = {}
    for r in rows:
        if r["status"] == "ok" and r.get(metric) is not None:
            by_seed.setdefault(r["seed"], {})[r["sampler"]] = r[metric]
    paired = [v for v in by_seed.values() if better in v and worse in v]
    holding = sum(1 for v in paired if compare(v[better], v[worse]))
    a, b = table[better][metric], table[worse][metric]
    median_holds = a is not None and b is not None and compare(a, b)
    return {
        "metric": metric,
        "median_holds": median_holds,
        "seeds_holding": holding,
        "seeds_compared": len(paired),
        "holds": bool(median_holds and paired and holding >= 0.8 * len(paired)),
    }


def _table1_job(kind: SamplerKind, seed: int, out_dir: Path, base: Dict[str, Dict[str, Any]],
                epochs: Optional[int], burn_in: Optional[int],
                overrides: Optional[Dict[str, Dict[str, Any]]] = None) -> Dict[str, Any]:
    eps = TABLE1_EPS["stochastic" if kind.stochastic else "hmc"]
    dynamics = {"eps": eps}
    experiment = {"sampler": kind.value, "seed": seed,
                  "output_dir": str(out_dir / kind.value / f"seed-{seed}")}
    if epochs is not None:
        experiment["epochs"] = epochs
    if burn_in is not None:
        experiment["burn_in"] = burn_in
    return _merge(base, TABLE1_SETTINGS, {"experiment": experiment, "dynamics": dynamics},
                  overrides or {})


def replicate_table1(seeds: Sequence[int], out_dir: Path, samplers: Optional[Iterable[str]] = None,
                     jobs: int = 1, epochs: Optional[int] = None, burn_in: Optional[int] = None,
                     base: Optional[Dict[str, Dict[str, Any]]] = None,
                     overrides: Optional[Dict[str, Dict[str, Any]]] = None) -> Dict[str, Any]:
    """
    Gaussian mean/precision comparison over seeds; writes report.json.

    ``base`` fills keys the table leaves open; ``overrides`` win over the
    table settings, step sizes included.

    Per sampler: median rmse_mu, rmse_tau and ms per epoch. Orderings:
    HMC-EM < HMC and SGNHT-EM <= SGNHT on rmse_mu.
    """
    seeds = _validate_seeds(seeds)
    kinds = _select_samplers(samplers)
    _check_window(TABLE1_SETTINGS, epochs, burn_in)
    overrides = _check_overrides(overrides)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = base or {}

    job_list = [_table1_job(kind, seed, out_dir, base, epochs, burn_in, overrides)
                for kind in kinds for seed in seeds]
    _validate_jobs(job_list)
    logger.info(f"Table 1 replication: {len(kinds)} samplers x {len(seeds)} seeds")
    rows = _execute(job_list, jobs)

    table = _aggregate(rows, ("rmse_mu", "rmse_tau"))
    report = {
        "experiment": "gaussian-nw",
        "seeds": seeds,
        "samplers": table,
        "orderings": {
            "hmc-em_lt_hmc": _ordering(rows, table, "hmc-em", "hmc", "rmse_mu", strict=True),
            "sgnht-em_le_sgnht": _ordering(rows, table, "sgnht-em", "sgnht", "rmse_mu", strict=False),
        },
        "runs": rows,
    }
    write_json(out_dir / "report.json", report)
    return report


def _table2_job(kind: SamplerKind, seed: int, eps: float, out_dir: Path,
                base: Dict[str, Dict[str, Any]], epochs: Optional[int],
                burn_in: Optional[int],
                overrides: Optional[Dict[str, Dict[str, Any]]] = None) -> Dict[str, Any]:
    experiment = {"sampler": kind.value, "seed": seed,
                  "output_dir": str(out_dir / kind.value / f"eps-{eps:g}" / f"seed-{seed}")}
    if epochs is not None:
        experiment["epochs"] = epochs
    if burn_in is not None:
        experiment["burn_in"] = burn_in
    layer: Dict[str, Dict[str, Any]] = {"experiment": experiment, "dynamics": {"eps": eps}}
    if kind.base is SamplerKind.SG_NPHMC:
        layer["mcem"] = {"s_count": TABLE2_NP_S_COUNT}
    return _merge(base, TABLE2_SETTINGS, layer, overrides or {})


def replicate_table2(seeds: Sequence[int], out_dir: Path, samplers: Optional[Iterable[str]] = None,
                     jobs: int = 1, epochs: Optional[int] = None, burn_in: Optional[int] = None,
                     base: Optional[Dict[str, Dict[str, Any]]] = None,
                     eps_grid: Sequence[float] = TABLE2_EPS_GRID,
                     overrides: Optional[Dict[str, Dict[str, Any]]] = None) -> Dict[str, Any]:
    """
    Synthetic logistic regression comparison; writes report.json.

    ``base`` and ``overrides`` work as in replicate_table1, except that the
    step size comes from ``eps_grid`` only.

    Every sampler is run at every step size of the grid; the reported row
    is the step size with the lowest median rmse_w0 + rmse_w1, and by_eps
    holds the medians at every step size. The ordering SGNHT-EM <= SGNHT on
    rmse_w1 is evaluated separately at each step size of the grid.
    """
    seeds = _validate_seeds(seeds)
    kinds = _select_samplers(samplers)
    _check_window(TABLE2_SETTINGS, epochs, burn_in)
    overrides = _check_overrides(overrides, extra=("dynamics.eps",))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = base or {}

    job_list = [_table2_job(kind, seed, eps, out_dir, base, epochs, burn_in, overrides)
                for kind in kinds for eps in eps_grid for seed in seeds]
    _validate_jobs(job_list)
    logger.info(f"Table 2 replication: {len(kinds)} samplers x {len(eps_grid)} step sizes "
                f"x {len(seeds)} seeds")
    rows = _execute(job_list, jobs)

    metrics = ("rmse_w0", "rmse_w1")
    by_eps: Dict[str, Dict[str, Dict[str, Any]]] = {}
    matched: Dict[str, Optional[Dict[str, Any]]] = {}
    for eps in eps_grid:
        subset = [r for r in rows if r["eps"] == eps]
        key = f"{eps:g}"
        by_eps[key] = _aggregate(subset, metrics)
        matched[key] = _ordering(subset, by_eps[key], "sgnht-em", "sgnht", "rmse_w1",
                                 strict=False)

    table: Dict[str, Dict[str, Any]] = {}
    for kind in kinds:
        candidates = []
        for eps in eps_grid:
            entry = by_eps[f"{eps:g}"].get(kind.value)
            if entry is None or entry["rmse_w0"] is None or entry["rmse_w1"] is None:
                continue
            candidates.append((entry["rmse_w0"] + entry["rmse_w1"], eps, entry))
        if not candidates:
            failed = [r for r in rows if r["sampler"] == kind.value]
            table[kind.value] = {"rmse_w0": None, "rmse_w1": None, "ms_per_epoch": None,
                                 "eps": None, "runs_ok": 0, "runs_failed": len(failed)}
            continue
        _, eps, entry = min(candidates, key=lambda c: c[0])
        table[kind.value] = dict(entry, eps=eps)

    report = {
        "experiment": "bayes-lr-synthetic",
        "seeds": seeds,
        "eps_grid": list(eps_grid),
        "samplers": table,
        "by_eps": by_eps,
        "orderings": {"sgnht-em_le_sgnht": matched},
        "runs": rows,
    }
    write_json(out_dir / "report.json", report)
    return report


def _dataset_layers(datasets: Sequence[Any], label_column: int,
                    standardize: bool) -> Dict[str, Dict[str, Dict[str, Any]]]:
    """Model sections per dataset name: the synthetic set plus one per CSV file."""
    layers: Dict[str, Dict[str, Dict[str, Any]]] = {
        "synthetic": {"model": {"kind": "bayes-lr-synthetic", "n": TABLE2_SETTINGS["model"]["n"]}}
    }
    for path in datasets:
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"Dataset not found: {path}")
        name = path.stem
        if name in layers:
            raise ConfigurationError(f"Two datasets are named '{name}'")
        layers[name] = {"model": {"kind": "bayes-lr-csv", "path": str(path),
                                  "label_column": label_column, "standardize": standardize}}
    return layers


def _table3_job(kind: SamplerKind, seed: int, dataset: str, model_layer: Dict[str, Dict[str, Any]],
                out_dir: Path, base: Dict[str, Dict[str, Any]], epochs: Optional[int],
                burn_in: Optional[int],
                overrides: Optional[Dict[str, Dict[str, Any]]] = None) -> Dict[str, Any]:
    experiment = {"sampler": kind.value, "seed": seed,
                  "output_dir": str(out_dir / dataset / kind.value / f"seed-{seed}")}
    if epochs is not None:
        experiment["epochs"] = epochs
    if burn_in is not None:
        experiment["burn_in"] = burn_in
    layer: Dict[str, Dict[str, Any]] = {"experiment": experiment}
    if kind.base is SamplerKind.SG_NPHMC:
        layer["mcem"] = {"s_count": TABLE2_NP_S_COUNT}
    return _merge(base, TABLE3_SETTINGS, model_layer, layer, overrides or {})


def replicate_table3(seeds: Sequence[int], out_dir: Path, datasets: Sequence[Any] = (),
                     samplers: Optional[Iterable[str]] = None, jobs: int = 1,
                     epochs: Optional[int] = None, burn_in: Optional[int] = None,
                     base: Optional[Dict[str, Dict[str, Any]]] = None,
                     overrides: Optional[Dict[str, Dict[str, Any]]] = None,
                     label_column: int = -1, standardize: bool = True) -> Dict[str, Any]:
    """
    Per-epoch runtime of every sampler on logistic regression data; writes
    report.json.

    The synthetic set is always timed; every CSV in ``datasets`` adds one
    more, named after its file stem. All samplers use 10 leapfrog steps and
    a fixed S_count (300, or 200 for SG-NPHMC). Per dataset and sampler the
    report holds the median ms per epoch, and for -EM kinds the ratio to
    their base sampler.
    """
    seeds = _validate_seeds(seeds)
    kinds = _select_samplers(samplers)
    _check_window(TABLE3_SETTINGS, epochs, burn_in)
    overrides = _check_overrides(overrides, extra=("model.path",))
    layers = _dataset_layers(datasets, label_column, standardize)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = base or {}

    job_list, names = [], []
    for dataset, model_layer in layers.items():
        for kind in kinds:
            for seed in seeds:
                job_list.append(_table3_job(kind, seed, dataset, model_layer, out_dir, base,
                                            epochs, burn_in, overrides))
                names.append(dataset)
    _validate_jobs(job_list)
    logger.info(f"Table 3 timing: {len(layers)} datasets x {len(kinds)} samplers "
                f"x {len(seeds)} seeds")
    rows = _execute(job_list, jobs)
    for row, dataset in zip(rows, names):
        row["dataset"] = dataset

    timings: Dict[str, Dict[str, Dict[str, Any]]] = {}
    for dataset in layers:
        table = _aggregate([r for r in rows if r["dataset"] == dataset], ())
        for sampler, entry in table.items():
            kind = SamplerKind.parse(sampler)
            base_entry = table.get(kind.base.value)
            if kind.adaptive and base_entry and base_entry["ms_per_epoch"] \
                    and entry["ms_per_epoch"] is not None:
                entry["ratio_to_base"] = entry["ms_per_epoch"] / base_entry["ms_per_epoch"]
            else:
                entry["ratio_to_base"] = None
        timings[dataset] = table

    report = {
        "experiment": "timing",
        "seeds": seeds,
        "datasets": {name: layer["model"] for name, layer in layers.items()},
        "samplers": timings,
        "runs": rows,
    }
    write_json(out_dir / "report.json", report)
    return report


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: Optional[float] = None
    threshold: Optional[str] = None
    message: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "passed": self.passed, "value": self.value,
                "threshold": self.threshold, "message": self.message}


def _property(name: str, threshold: str, compute, accept) -> CheckResult:
    try:
        value = compute()
    except SamplingError as e:
        logger.warning(f"Check {name} raised {type(e).__name__}: {e}")
        return CheckResult(name, False, None, threshold, f"{type(e).__name__}: {e}")
    passed = bool(accept(value))
    if not passed:
        logger.warning(f"Check {name} failed: {value} (want {threshold})")
    return CheckResult(name, passed, float(value), threshold)


def reversibility_models(seed: int) -> List[TargetModel]:
    """Small instances of every model family, checked next to the configured model."""
    return [
        GaussianNormalGammaModel(generate_gaussian_data(50, seed)),
        BayesLogisticModel(generate_mixture_lr_data(50, seed), truth=MIXTURE_LR_WEIGHTS),
        GaussianTarget([0.5, -1.0], [[2.0, 0.3], [0.3, 1.0]]),
        LinearPotentialTarget([0.3, -0.2]),
    ]


def check(cfg: ExperimentConfig, model: Optional[TargetModel] = None) -> List[CheckResult]:
    """
    Verification suite: gradient, reversibility (worst over the configured
    model and one small instance per model family), energy-error scaling,
    M-step convergence and Nose-Poincare energy conservation; plus one
    epoch of the configured kernel when it is the Nose-Poincare sampler.
    """
    model = model or build_model(cfg)
    rng = chain_rng(cfg.seed)
    identity = SpdMatrix.identity(model.dim)
    theta = 0.1 * rng.standard_normal(model.dim)
    results = []

    results.append(_property(
        "gradient", "< 1e-05",
        lambda: finite_diff_grad_check(model, theta, 1e-5), lambda v: v < 1e-5))

    eps = float(cfg.dynamics["eps"])
    steps = min(int(cfg.dynamics["n_leapfrog"]), 50)
    start = PhaseState(theta, resample_momentum(identity, rng))

    def worst_reversibility():
        integrator = HmcConfig(eps, steps)
        worst = reversibility_check(model, identity, integrator, start)
        other_rng = chain_rng(cfg.seed, 1)
        for other in reversibility_models(cfg.seed):
            unit = SpdMatrix.identity(other.dim)
            state = PhaseState(0.1 * other_rng.standard_normal(other.dim),
                               resample_momentum(unit, other_rng))
            worst = max(worst, reversibility_check(other, unit, integrator, state))
        return worst

    results.append(_property("reversibility", "< 1e-08", worst_reversibility,
                             lambda v: v < 1e-8))

    gaussian = GaussianTarget([0.0], [[1.0]])
    unit = SpdMatrix.identity(1)
    results.append(_property(
        "energy-scaling", "in [3, 5]",
        lambda: energy_scaling_check(gaussian, unit, 0.05, 10, 100, rng),
        lambda v: 3.0 <= v <= 5.0))

    results.append(_property(
        "mass-convergence", "< 0.05",
        lambda: mass_convergence_check([[2.0, 0.5], [0.5, 1.0]], 200, 50, rng),
        lambda v: v < 0.05))

    def drift_ratio():
        state = PhaseState([0.5], [1.0], s=1.0, q=0.0)
        coarse = np_energy_drift(gaussian, unit, NpConfig(1e-3, 1, A_noise=0.0, B_noise=0.0),
                                 state, 1000)
        fine = np_energy_drift(gaussian, unit, NpConfig(5e-4, 1, A_noise=0.0, B_noise=0.0),
                               state, 2000)
        return coarse / fine if fine > 0 else math.inf

    results.append(_property("np-energy-drift", ">= 3.5", drift_ratio, lambda v: v >= 3.5))

    if cfg.sampler.base is SamplerKind.SG_NPHMC:
        def np_epoch():
            kernel_cfg = cfg.kernel_config()
            state = initial_state(cfg.sampler, np.zeros(model.dim), identity, kernel_cfg, rng)
            sgnphmc_epoch(state, model, identity, kernel_cfg, build_batcher(cfg, model), rng)
            return 0.0

        results.append(_property("np-kernel", "no divergence", np_epoch, lambda v: True))

    for r in results:
        logger.info(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.value} ({r.threshold})")
    return results
