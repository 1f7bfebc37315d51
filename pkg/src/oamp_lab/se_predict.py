"""Exact-knowledge state-evolution trajectories, no data matrix involved.

Evaluates the SE recursion for the posterior-mean algorithms by Monte Carlo
over the signal prior and the Gaussian iterate law, using exact cumulants of
a named noise law. This is the `se-predict` CLI path and the oracle for
exact-mode engine tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .amp_engine import ExactModel, _exact_rect_estimates, _exact_sym_estimates
from .block_matrix import BlockMatrix, DiagScaler
from .denoisers import DenoiserContext, DiscretePrior, batch_posterior_stats
from .onsager import (
    RECT_SPECTRAL_PHI,
    RECT_SPECTRAL_PSI,
    SYM_SPECTRAL,
    DerivativeLedger,
    assemble_phi,
    assemble_psi,
)
from .spectrum import (
    RECTANGULAR,
    SYMMETRIC,
    CumulantModel,
    free_cumulants_from_moments,
    kappa_series_tables_direct,
    rect_cumulants_from_moments,
)
from .state_evolution import (
    MomentLedger,
    SEState,
    se_mu_block,
    se_omega_rect_checked,
    se_sigma_rect,
    se_sigma_sym,
)


def _beta_moment(a: float, b: float, k: int) -> float:
    out = 1.0
    for i in range(k):
        out *= (a + i) / (a + b + i)
    return out


def law_exact_moments(law: dict, order: int, squared: bool = False) -> np.ndarray:
    """Closed-form moments E[X^k] (or E[X^{2k}]) of a named diagonal law."""
    powers = [2 * (k + 1) for k in range(order)] if squared else list(range(1, order + 1))
    name = law["name"]
    if name == "uniform":
        lo, hi = float(law["lo"]), float(law["hi"])
        return np.array(
            [(hi ** (p + 1) - lo ** (p + 1)) / ((p + 1) * (hi - lo)) for p in powers]
        )
    if name == "centered_beta":
        a, b = float(law["a"]), float(law["b"])
        scale = float(law.get("scale", 1.0))
        shift = float(law.get("shift", 0.0))
        out = []
        for p in powers:
            total = 0.0
            for j in range(p + 1):
                total += math.comb(p, j) * _beta_moment(a, b, j) * shift ** (p - j)
            out.append(scale ** p * total)
        return np.array(out)
    if name == "custom":
        vals = np.asarray(law["values"], dtype=float)
        return np.array([np.mean(vals ** p) for p in powers])
    raise ValueError(f"no closed-form moments for law {name!r}")


def exact_cumulants_for_noise(noise: dict, order: int, model: str, gamma: float | None) -> CumulantModel:
    """Exact cumulant model of a configured noise family."""
    family = noise["family"]
    if family == "goe":
        return CumulantModel.semicircle(order=order)
    if family == "iid_gaussian_rect":
        return CumulantModel.marcenko_pastur(gamma, order=order)
    law = noise["law"]
    if model == "sym":
        m = law_exact_moments(law, order)
        return CumulantModel(
            kappa=free_cumulants_from_moments(m), kind=SYMMETRIC, support_max=0.0
        )
    m2 = law_exact_moments(law, order, squared=True)
    return CumulantModel(
        kappa=rect_cumulants_from_moments(m2, gamma),
        kind=RECTANGULAR,
        support_max=0.0,
        gamma=gamma,
    )


@dataclass
class SEPrediction:
    states: list[SEState] = field(default_factory=list)
    mse_u: list[float] = field(default_factory=list)
    mse_v: list[float] = field(default_factory=list)


def predict_sym(
    prior: DiscretePrior,
    theta,
    kappa: CumulantModel,
    max_iters: int,
    samples: int = 100_000,
    seed: int = 0,
    ridge_scale: float = 1e-9,
) -> SEPrediction:
    """SE trajectory of the spectrally-initialized posterior-mean algorithm."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    k = theta.size
    est = _exact_sym_estimates(ExactModel(kappa, theta))
    table_order = 2 * max_iters + 2
    tables = kappa_series_tables_direct(kappa, theta, order=table_order)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0)))
    u_star = prior.atoms[rng.choice(prior.atoms.shape[0], size=samples, p=prior.weights)]

    mu_blocks = [np.diag(np.sqrt(est.mu_sq))]
    sigma = np.diag(1.0 - est.mu_sq)
    delta = MomentLedger(k)
    delta.set(0, 0, np.diag(1.0 / theta ** 2))
    ledger = DerivativeLedger(k)
    pred = SEPrediction()
    pred.states.append(SEState(0, k, mu_blocks[0].copy(), sigma.copy()))
    pred.mse_u.append(float(np.mean(np.sum((u_star / theta[None, :] - u_star) ** 2, axis=1))))

    for t in range(1, max_iters + 1):
        mu_stack = np.vstack(mu_blocks)
        chol = np.linalg.cholesky(sigma + ridge_scale * np.trace(sigma) / sigma.shape[0] * np.eye(sigma.shape[0]))
        z = rng.standard_normal((samples, t * k)) @ chol.T
        f_stack = u_star @ mu_stack.T + z
        u_cols = [f_stack[:, :k] / theta[None, :]]
        for s in range(1, t + 1):
            ctx = DenoiserContext(mu_stack[: s * k], sigma[: s * k, : s * k], ridge_scale)
            u_s, jac = batch_posterior_stats(f_stack[:, : s * k], ctx, prior)
            u_cols.append(u_s)
            for col in range(s):
                ledger.set(s, col, jac[:, col * k:(col + 1) * k])
        u_t = u_cols[t]
        for r in range(t + 1):
            delta.set(r, t, u_cols[r].T @ u_t / samples)
        mu_blocks.append(se_mu_block(u_t.T @ u_star / samples, theta, "sym"))
        phi_t = assemble_phi(ledger, t, SYM_SPECTRAL)
        sigma_new = se_sigma_sym(phi_t, delta.table(t + 1), kappa, tables).data.copy()
        sigma_new[: t * k, : t * k] = sigma
        sigma = sigma_new
        pred.states.append(SEState(t, k, np.vstack(mu_blocks), sigma.copy()))
        pred.mse_u.append(float(np.mean(np.sum((u_t - u_star) ** 2, axis=1))))
    return pred


def predict_rect(
    prior_u: DiscretePrior,
    prior_v: DiscretePrior,
    theta,
    kappa: CumulantModel,
    gamma: float,
    max_iters: int,
    samples: int = 100_000,
    seed: int = 0,
    ridge_scale: float = 1e-9,
) -> SEPrediction:
    """SE trajectory for the rectangular algorithm (both sides)."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    k = theta.size
    est = _exact_rect_estimates(ExactModel(kappa, theta), gamma)
    table_order = 2 * max_iters + 4
    tables = kappa_series_tables_direct(kappa, theta, order=table_order)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 1)))
    u_star = prior_u.atoms[rng.choice(prior_u.atoms.shape[0], size=samples, p=prior_u.weights)]
    v_star = prior_v.atoms[rng.choice(prior_v.atoms.shape[0], size=samples, p=prior_v.weights)]
    s_u, s_v = est.theta_u, est.theta_v
    s_u_inv, s_v_inv = DiagScaler(1.0 / s_u), DiagScaler(1.0 / s_v)

    mu_blocks = [np.diag(np.sqrt(est.mu_sq))]
    nu_pca = np.diag(np.sqrt(est.nu_sq))
    nu_blocks = [nu_pca, nu_pca.copy()]
    sigma = np.diag(1.0 - est.mu_sq)
    omega = np.tile(np.diag(1.0 - est.nu_sq), (2, 2))
    delta = MomentLedger(k)
    d00 = np.diag(1.0 / s_u ** 2)
    for (r, s) in ((0, 0), (0, 1), (1, 1)):
        delta.set(r, s, d00)
    gamma_led = MomentLedger(k)
    gamma_led.set(0, 0, np.diag(1.0 / s_v ** 2))
    phi_ledger = DerivativeLedger(k)
    psi_ledger = DerivativeLedger(k)
    pred = SEPrediction()
    pred.states.append(
        SEState(0, k, mu_blocks[0].copy(), sigma.copy(), np.vstack(nu_blocks), omega.copy())
    )

    def ridge(mat):
        return mat + ridge_scale * np.trace(mat) / mat.shape[0] * np.eye(mat.shape[0])

    for t in range(1, max_iters + 1):
        # v side: G-stack over blocks 0..t; v_s sees blocks 1..s.
        nu_stack = np.vstack(nu_blocks)
        chol_o = np.linalg.cholesky(ridge(omega))
        g_stack = v_star @ nu_stack.T + rng.standard_normal((samples, (t + 1) * k)) @ chol_o.T
        v_cols = [g_stack[:, :k] / s_v[None, :]]
        for s in range(1, t + 1):
            ctx = DenoiserContext(
                nu_stack[k:(s + 1) * k], omega[k:(s + 1) * k, k:(s + 1) * k], ridge_scale
            )
            v_s, jac = batch_posterior_stats(g_stack[:, k:(s + 1) * k], ctx, prior_v)
            v_cols.append(v_s)
            for col in range(1, s + 1):
                psi_ledger.set(s, col, jac[:, (col - 1) * k: col * k])
        v_t = v_cols[t]
        for r in range(t + 1):
            gamma_led.set(r, t, v_cols[r].T @ v_t / samples)
        mu_blocks.append(se_mu_block(v_t.T @ v_star / samples, theta, "rect_mu", gamma))

        phi_t = assemble_phi(phi_ledger, t, RECT_SPECTRAL_PHI, s_u_inv)
        psi_t = assemble_psi(psi_ledger, t, RECT_SPECTRAL_PSI, s_v_inv)
        sigma_new = se_sigma_rect(
            phi_t, psi_t, delta.table(t + 1), gamma_led.table(t + 1), kappa, tables
        ).data.copy()
        sigma_new[: t * k, : t * k] = sigma
        sigma = sigma_new

        # u side: F-stack over blocks 0..t.
        mu_stack = np.vstack(mu_blocks)
        chol_s = np.linalg.cholesky(ridge(sigma))
        f_stack = u_star @ mu_stack.T + rng.standard_normal((samples, (t + 1) * k)) @ chol_s.T
        u_cols = [f_stack[:, :k] / s_u[None, :]]
        u_cols.append(u_cols[0])
        for s in range(2, t + 2):
            ctx = DenoiserContext(mu_stack[: s * k], sigma[: s * k, : s * k], ridge_scale)
            u_s, jac = batch_posterior_stats(f_stack[:, : s * k], ctx, prior_u)
            u_cols.append(u_s)
            for col in range(s):
                phi_ledger.set(s, col, jac[:, col * k:(col + 1) * k])
        u_next = u_cols[t + 1]
        for r in range(t + 2):
            delta.set(r, t + 1, u_cols[r].T @ u_next / samples)
        nu_blocks.append(se_mu_block(u_next.T @ u_star / samples, theta, "rect_nu", gamma))

        phi_t1 = assemble_phi(phi_ledger, t + 1, RECT_SPECTRAL_PHI, s_u_inv)

        def psi_fill(fill: float, _t=t) -> BlockMatrix:
            base = assemble_psi(
                psi_ledger, _t + 1, RECT_SPECTRAL_PSI, s_v_inv, defined_rows=_t + 1
            ).data.copy()
            if fill != 0.0:
                base[(_t + 1) * k:, k:] = fill
            return BlockMatrix(base, k)

        def gamma_fill(fill: float, _t=t) -> BlockMatrix:
            return gamma_led.table(_t + 2, undefined_fill=fill)

        omega_new = se_omega_rect_checked(
            phi_t1, psi_fill, delta.table(t + 2), gamma_fill, kappa, tables, gamma
        ).data.copy()
        omega_new[: (t + 1) * k, : (t + 1) * k] = omega
        omega = omega_new

        pred.states.append(
            SEState(t, k, np.vstack(mu_blocks), sigma.copy(), np.vstack(nu_blocks), omega.copy())
        )
        pred.mse_v.append(float(np.mean(np.sum((v_t - v_star) ** 2, axis=1))))
        pred.mse_u.append(float(np.mean(np.sum((u_next - u_star) ** 2, axis=1))))
    return pred
