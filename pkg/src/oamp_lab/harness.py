"""Experiment harness: config parsing, trial batteries, metric CSV logs.

One MetricRecord row per (trial, iteration, algorithm, metric); logs are
byte-deterministic given the base seed: per-trial RNG streams derive from
SeedSequence((base_seed, trial_index)), records are sort-normalized, floats
print with 17 significant digits.
"""

from __future__ import annotations

import csv
import importlib.resources
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .amp_engine import (
    AmpConfig,
    AmpDivergenceError,
    Trajectory,
    run_rect_spectral,
    run_sym_spectral,
)
from .denoisers import DiscretePrior
from .metrics import mse, percentile, subspace_distance  # re-exported harness API
from .model_gen import NoiseSpec, generate_instance
from .spike_estimation import SubCriticalSpikeError, decompose_rect, decompose_sym
from .state_evolution import write_se_csv

SCHEMA_VERSION = 1
CSV_HEADER = ["trial", "iteration", "algorithm", "metric", "value"]
METRIC_NAMES = ("subspace_distance", "mse_u", "mse_v", "se_cov_error", "align_sq")


@dataclass
class ExperimentConfig:
    model: str
    dims: dict
    noise: dict
    theta: list
    prior: object
    algorithms: list
    trials: int = 1
    max_iters: int = 10
    base_seed: int = 0
    output_path: str = "metrics.csv"
    threads: int = 1
    v_prior: object | None = None
    k_minus: int = 0
    early_stop_ratio: float = 1e-5
    cumulant_source: str = "estimated"
    edge_margin_factor: float = 5.0
    theta_sweep: list | None = None
    export_marginals: dict | None = None

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        version = raw.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported config schema_version {version!r}")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**raw)
        if cfg.model not in ("sym", "rect"):
            raise ValueError(f"model must be sym or rect, got {cfg.model!r}")
        if cfg.trials < 1:
            raise ValueError("trials must be >= 1")
        DiscretePrior.from_config(cfg.prior)  # fail early on malformed priors
        if cfg.v_prior is not None:
            DiscretePrior.from_config(cfg.v_prior)
        return cfg

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def load_preset(name: str) -> dict:
    ref = importlib.resources.files("oamp_lab").joinpath(f"presets/{name}.json")
    if not ref.is_file():
        raise FileNotFoundError(f"no preset named {name!r}")
    return json.loads(ref.read_text())


def resolve_config(path_or_name: str) -> ExperimentConfig:
    """A filesystem path wins; otherwise fall back to a bundled preset name."""
    p = Path(path_or_name)
    if p.is_file():
        return ExperimentConfig.from_json(p)
    return ExperimentConfig.from_dict(load_preset(path_or_name))


def _noise_spec(cfg: ExperimentConfig) -> NoiseSpec:
    family = cfg.noise["family"]
    law = cfg.noise.get("law")
    if cfg.model == "sym":
        dims = (int(cfg.dims["n"]),)
    else:
        dims = (int(cfg.dims["m"]), int(cfg.dims["n"]))
    return NoiseSpec(family=family, dims=dims, law=law)


@dataclass
class TrialFailure:
    trial: int
    algorithm: str
    error: str
    kind: str


def run_trial(
    cfg: ExperimentConfig, trial: int, theta=None
) -> tuple[list[tuple], list[TrialFailure], dict[str, Trajectory]]:
    """All algorithms on one shared spiked instance; failures are recorded
    per-algorithm and do not abort the battery."""
    theta = cfg.theta if theta is None else theta
    theta = np.asarray(theta, dtype=float).reshape(-1)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.base_seed, trial)))
    prior_u = DiscretePrior.from_config(cfg.prior)
    prior_v = DiscretePrior.from_config(cfg.v_prior) if cfg.v_prior else prior_u
    instance = generate_instance(
        cfg.model, _noise_spec(cfg), prior_u, theta, rng, prior_v=prior_v
    )
    if cfg.model == "sym":
        decomposition = decompose_sym(instance.x, theta.size - cfg.k_minus, cfg.k_minus, instance.u_star)
    else:
        decomposition = decompose_rect(instance.x, theta.size, instance.u_star)
    records: list[tuple] = []
    failures: list[TrialFailure] = []
    trajectories: dict[str, Trajectory] = {}
    for algorithm in cfg.algorithms:
        amp_cfg = AmpConfig(
            algorithm=algorithm,
            max_iters=cfg.max_iters,
            K=theta.size,
            k_minus=cfg.k_minus,
            early_stop_ratio=cfg.early_stop_ratio,
            cumulant_source=cfg.cumulant_source,
            seed=cfg.base_seed,
            edge_margin_factor=cfg.edge_margin_factor,
        )
        try:
            if cfg.model == "sym":
                traj = run_sym_spectral(
                    instance.x, prior_u, amp_cfg, truth=instance.u_star,
                    decomposition=decomposition,
                )
            else:
                traj = run_rect_spectral(
                    instance.x,
                    prior_u,
                    prior_v,
                    amp_cfg,
                    truth_u=instance.u_star,
                    truth_v=instance.v_star,
                    decomposition=decomposition,
                )
        except (SubCriticalSpikeError, AmpDivergenceError, np.linalg.LinAlgError) as exc:
            failures.append(
                TrialFailure(trial, algorithm, str(exc), type(exc).__name__)
            )
            continue
        trajectories[algorithm] = traj
        for rec in traj.metrics:
            for name in METRIC_NAMES:
                if name in rec and np.isfinite(rec[name]):
                    records.append((trial, rec["iteration"], algorithm, name, rec[name]))
    return records, failures, trajectories


def _write_records(records: list[tuple], path) -> None:
    records = sorted(records, key=lambda r: (r[0], r[1], r[2], r[3]))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for trial, iteration, algorithm, metric, value in records:
            writer.writerow([trial, iteration, algorithm, metric, f"{value:.17g}"])


def _export_marginals(cfg: ExperimentConfig, trajectories: dict[str, Trajectory], out_path: Path) -> None:
    spec = cfg.export_marginals
    algorithm = spec.get("algorithm", cfg.algorithms[0])
    traj = trajectories.get(algorithm)
    if traj is None:
        return
    iters = spec.get("iterations", list(range(len(traj.iterates_f))))
    stem = out_path.with_suffix("")
    with open(f"{stem}.marginals.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iteration", "column", "value"])
        for t in iters:
            if t >= len(traj.iterates_f):
                continue
            f_t = traj.iterates_f[t]
            for col in range(f_t.shape[1]):
                for v in f_t[:, col]:
                    writer.writerow([t, col, f"{v:.17g}"])
    write_se_csv(traj.se_states, f"{stem}.se_sigma.csv", which="sigma")
    write_se_csv(traj.se_states, f"{stem}.se_mu.csv", which="mu")
    prior = DiscretePrior.from_config(cfg.prior)
    with open(f"{stem}.prior.json", "w") as fh:
        json.dump(
            {"atoms": prior.atoms.tolist(), "weights": prior.weights.tolist()},
            fh,
            indent=1,
            sort_keys=True,
        )
        fh.write("\n")


def run_experiment(cfg: ExperimentConfig, threads: int | None = None) -> list[TrialFailure]:
    """Run the configured battery and write the metric CSV log.

    Returns the recorded per-trial failures (callers map them to a nonzero
    exit). A theta_sweep config writes one CSV per theta under a directory
    named by output_path.
    """
    threads = threads or int(os.environ.get("OAMP_LAB_THREADS", cfg.threads))
    if cfg.theta_sweep:
        out_dir = Path(cfg.output_path)
        out_dir.mkdir(parents=True, exist_ok=True)
        all_failures: list[TrialFailure] = []
        for theta in cfg.theta_sweep:
            records, failures = _run_battery(cfg, threads, theta=[float(theta)])
            _write_records(records, out_dir / f"theta_{float(theta):.2f}.csv")
            all_failures.extend(failures)
        return all_failures
    records, failures = _run_battery(cfg, threads)
    _write_records(records, cfg.output_path)
    return failures


def _run_battery(cfg: ExperimentConfig, threads: int, theta=None) -> tuple[list[tuple], list[TrialFailure]]:
    records: list[tuple] = []
    failures: list[TrialFailure] = []
    marginal_trial = (cfg.export_marginals or {}).get("trial", 0)

    def one(trial: int):
        return trial, run_trial(cfg, trial, theta=theta)

    results = []
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(cfg.trials)))
    else:
        results = [one(t) for t in range(cfg.trials)]
    for trial, (recs, fails, trajectories) in results:
        records.extend(recs)
        failures.extend(fails)
        if cfg.export_marginals is not None and trial == marginal_trial and theta is None:
            _export_marginals(cfg, trajectories, Path(cfg.output_path))
    return records, failures


def read_metric_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {reader.fieldnames}")
        return [
            {
                "trial": int(r["trial"]),
                "iteration": int(r["iteration"]),
                "algorithm": r["algorithm"],
                "metric": r["metric"],
                "value": float(r["value"]),
            }
            for r in reader
        ]
