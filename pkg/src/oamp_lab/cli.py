"""oamp-lab command line interface."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .denoisers import DiscretePrior
from .harness import resolve_config, run_experiment
from .model_gen import load_matrix_csv
from .se_predict import exact_cumulants_for_noise, predict_rect, predict_sym
from .spectrum import (
    RECTANGULAR,
    SYMMETRIC,
    CumulantModel,
    SpectralSample,
    empirical_moments,
)
from .spike_estimation import (
    SubCriticalSpikeError,
    decompose_rect,
    decompose_sym,
    estimate_rect,
    estimate_sym,
)
from .state_evolution import write_se_csv


def _cmd_run(args) -> int:
    cfg = resolve_config(args.config)
    if args.seed is not None:
        cfg.base_seed = args.seed
    if args.trials is not None:
        cfg.trials = args.trials
    if args.out is not None:
        cfg.output_path = args.out
    if args.max_iters is not None:
        cfg.max_iters = args.max_iters
    if args.n is not None:
        cfg.dims = dict(cfg.dims)
        if "m" in cfg.dims:
            cfg.dims["m"] = max(2, int(round(cfg.dims["m"] * args.n / cfg.dims["n"])))
        cfg.dims["n"] = args.n
    failures = run_experiment(cfg, threads=args.threads)
    if failures:
        summary = [
            {"trial": f.trial, "algorithm": f.algorithm, "kind": f.kind, "error": f.error}
            for f in failures
        ]
        print(json.dumps({"failed_trials": summary}, sort_keys=True), file=sys.stderr)
        return 1
    return 0


def _print_estimates(est, writer) -> None:
    header = ["component", "lambda_pca", "theta", "mu_sq", "r_value", "r_prime"]
    rect = est.nu_sq is not None
    if rect:
        header += ["nu_sq", "theta_u", "theta_v"]
    writer.writerow(header)
    for k in range(est.theta.size):
        row = [
            k,
            f"{est.lambda_pca[k]:.17g}",
            f"{est.theta[k]:.17g}",
            f"{est.mu_sq[k]:.17g}",
            f"{est.r_value[k]:.17g}",
            f"{est.r_prime[k]:.17g}",
        ]
        if rect:
            row += [
                f"{est.nu_sq[k]:.17g}",
                f"{est.theta_u[k]:.17g}",
                f"{est.theta_v[k]:.17g}",
            ]
        writer.writerow(row)


def _cmd_spikes(args) -> int:
    x = load_matrix_csv(args.input)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    try:
        if x.shape[0] == x.shape[1] and np.allclose(x, x.T, atol=1e-10 * max(1.0, np.max(np.abs(x)))):
            spikes, noise = decompose_sym(x, args.k_plus, args.k_minus)
            est = estimate_sym(spikes, noise, args.edge_margin)
        else:
            if x.shape[0] > x.shape[1]:
                x = x.T
            spikes, noise = decompose_rect(x, args.k_plus)
            est = estimate_rect(spikes, noise, args.edge_margin)
    except SubCriticalSpikeError as exc:
        print(json.dumps({"error": "sub_critical", "detail": str(exc)}), file=sys.stderr)
        return 2
    _print_estimates(est, writer)
    return 0


def _cmd_cumulants(args) -> int:
    kind = RECTANGULAR if args.kind == "rect" else SYMMETRIC
    sample = SpectralSample.from_csv(args.input, kind=kind, gamma=args.gamma)
    moments = empirical_moments(sample, args.order)
    model = CumulantModel.estimate(sample, args.order)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["order", "moment", "free_cumulant"])
    for j in range(args.order):
        label = 2 * (j + 1) if kind == RECTANGULAR else j + 1
        writer.writerow([label, f"{moments[j]:.17g}", f"{model.kappa[j]:.17g}"])
    return 0


def _cmd_se_predict(args) -> int:
    cfg = resolve_config(args.config)
    prior_u = DiscretePrior.from_config(cfg.prior)
    theta = np.asarray(cfg.theta, dtype=float)
    out = Path(args.out or "se_predict")
    order = 2 * cfg.max_iters + 8
    if cfg.model == "sym":
        kappa = exact_cumulants_for_noise(cfg.noise, order, "sym", None)
        pred = predict_sym(
            prior_u, theta, kappa, cfg.max_iters, samples=args.samples, seed=cfg.base_seed
        )
    else:
        gamma = cfg.dims["m"] / cfg.dims["n"]
        prior_v = DiscretePrior.from_config(cfg.v_prior) if cfg.v_prior else prior_u
        kappa = exact_cumulants_for_noise(cfg.noise, order, "rect", gamma)
        pred = predict_rect(
            prior_u, prior_v, theta, kappa, gamma, cfg.max_iters,
            samples=args.samples, seed=cfg.base_seed,
        )
    write_se_csv(pred.states, f"{out}.se_sigma.csv", which="sigma")
    write_se_csv(pred.states, f"{out}.se_mu.csv", which="mu")
    if cfg.model == "rect":
        write_se_csv(pred.states, f"{out}.se_omega.csv", which="omega")
        write_se_csv(pred.states, f"{out}.se_nu.csv", which="nu")
    with open(f"{out}.summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iteration", "mse_u", "mse_v"])
        for t, m_u in enumerate(pred.mse_u):
            m_v = pred.mse_v[t - 1] if (cfg.model == "rect" and 1 <= t <= len(pred.mse_v)) else ""
            writer.writerow([t, f"{m_u:.17g}", m_v if m_v == "" else f"{m_v:.17g}"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oamp-lab",
        description="Spectrally-initialized AMP for spiked matrix models",
    )
    parser.add_argument("--version", action="version", version=f"oamp-lab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment battery from a config or preset")
    run.add_argument("--config", required=True, help="config JSON path or bundled preset name")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--trials", type=int, default=None)
    run.add_argument("--threads", type=int, default=None)
    run.add_argument("--out", default=None)
    run.add_argument("--max-iters", type=int, default=None, dest="max_iters")
    run.add_argument("--n", type=int, default=None, help="override dimension (scales m for rect)")
    run.set_defaults(func=_cmd_run)

    spikes = sub.add_parser("spikes", help="estimate spike parameters from a matrix CSV")
    spikes.add_argument("--input", required=True)
    spikes.add_argument("--k-plus", type=int, required=True, dest="k_plus")
    spikes.add_argument("--k-minus", type=int, default=0, dest="k_minus")
    spikes.add_argument("--edge-margin", type=float, default=5.0, dest="edge_margin")
    spikes.set_defaults(func=_cmd_spikes)

    cum = sub.add_parser("cumulants", help="moments and free cumulants of a spectrum CSV")
    cum.add_argument("--input", required=True)
    cum.add_argument("--order", type=int, required=True)
    cum.add_argument("--kind", choices=["sym", "rect"], default="sym")
    cum.add_argument("--gamma", type=float, default=None)
    cum.set_defaults(func=_cmd_cumulants)

    sep = sub.add_parser("se-predict", help="exact-mode SE trajectory without simulation")
    sep.add_argument("--config", required=True)
    sep.add_argument("--out", default=None)
    sep.add_argument("--samples", type=int, default=100_000)
    sep.set_defaults(func=_cmd_se_predict)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
