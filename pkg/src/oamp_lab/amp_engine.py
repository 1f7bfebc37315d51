"""AMP iteration drivers.

Spectrally-initialized symmetric and rectangular loops with pluggable
denoisers (full posterior mean, single-iterate posterior mean, the
white-noise baseline), the independent-initialization loops, and the linear
AMP used as a verification path. Debiasing coefficients and state-evolution
parameters are recomputed each iteration from the full ledgers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .block_matrix import BlockMatrix, DiagScaler
from .denoisers import DenoiserContext, DiscretePrior, batch_posterior_stats
from .metrics import mean_alignment_sq, mse, subspace_distance
from .onsager import (
    RECT_INDEPENDENT_PHI,
    RECT_INDEPENDENT_PSI,
    RECT_SPECTRAL_PHI,
    RECT_SPECTRAL_PSI,
    SYM_INDEPENDENT,
    SYM_SPECTRAL,
    DerivativeLedger,
    assemble_phi,
    assemble_psi,
    debias_rect_independent,
    debias_rect_spectral,
    debias_sym_independent,
    debias_sym_spectral,
)
from .spectrum import (
    RECTANGULAR,
    SYMMETRIC,
    CumulantModel,
    kappa_series_tables,
    kappa_series_tables_direct,
)
from .spike_estimation import (
    SpikeEstimates,
    decompose_rect,
    decompose_sym,
    estimate_rect,
    estimate_rect_mp,
    estimate_sym,
    estimate_sym_semicircle,
)
from .state_evolution import (
    MomentLedger,
    SEState,
    check_early_stop,
    se_mu_block,
    se_omega_rect_checked,
    se_sigma_rect,
    se_sigma_sym,
)

BAYES_OAMP = "bayes_oamp"
SINGLE_ITERATE = "single_iterate"
GAUSSIAN_BAYES_AMP = "gaussian_bayes_amp"
LINEAR = "linear"

DIVERGENCE_LIMIT = 1e6


class AmpDivergenceError(RuntimeError):
    def __init__(self, iteration: int, norm: float):
        self.iteration = iteration
        super().__init__(f"iterate diverged at t={iteration} (row RMS {norm:.3g})")


@dataclass
class AmpConfig:
    algorithm: str = BAYES_OAMP
    max_iters: int = 10
    K: int = 1
    k_plus: int | None = None          # defaults to K positive spikes
    k_minus: int = 0
    early_stop_ratio: float = 1e-5
    early_stop_on_schur: bool = False
    cumulant_source: str = "estimated"  # estimated | exact
    seed: int = 0
    moment_order: int | None = None
    edge_margin_factor: float = 5.0
    ridge_scale: float = 1e-9

    def __post_init__(self):
        if self.max_iters < 1 or self.K < 1:
            raise ValueError("max_iters and K must be >= 1")
        if self.algorithm not in (BAYES_OAMP, SINGLE_ITERATE, GAUSSIAN_BAYES_AMP, LINEAR):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")

    @property
    def plus(self) -> int:
        return self.K - self.k_minus if self.k_plus is None else self.k_plus


@dataclass
class ExactModel:
    """Ground-truth spectral law and signal strengths for exact-knowledge runs."""

    kappa: CumulantModel
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float).reshape(-1)


@dataclass
class Trajectory:
    algorithm: str
    iterates_u: list = field(default_factory=list)
    iterates_f: list = field(default_factory=list)
    iterates_v: list = field(default_factory=list)
    iterates_g: list = field(default_factory=list)
    se_states: list = field(default_factory=list)
    metrics: list = field(default_factory=list)       # one dict per recorded iteration
    stop_reason: str = "max_iters"
    estimates: SpikeEstimates | None = None
    kappa: CumulantModel | None = None
    tables_warning: bool = False
    errors: list = field(default_factory=list)        # linear AMP convergence record


def _guard_divergence(iterate: np.ndarray, t: int) -> None:
    norm = float(np.linalg.norm(iterate)) / math.sqrt(iterate.shape[0])
    if not np.isfinite(norm) or norm > DIVERGENCE_LIMIT:
        raise AmpDivergenceError(t, norm)


def _exact_sym_estimates(exact: ExactModel) -> SpikeEstimates:
    theta = exact.theta
    r = np.array([exact.kappa.r_series(1.0 / t) for t in theta])
    rp = np.array([exact.kappa.r_prime_series(1.0 / t) for t in theta])
    mu_sq = 1.0 - rp / theta ** 2
    return SpikeEstimates(
        kind=SYMMETRIC,
        lambda_pca=theta + r,
        theta=theta.copy(),
        mu_sq=mu_sq,
        r_value=r,
        r_prime=rp,
    )


def _exact_rect_estimates(exact: ExactModel, gamma: float) -> SpikeEstimates:
    theta = exact.theta
    kk = theta.size
    mu_sq = np.empty(kk)
    nu_sq = np.empty(kk)
    r_val = np.empty(kk)
    r_prime = np.empty(kk)
    theta_u = np.empty(kk)
    theta_v = np.empty(kk)
    lam = np.empty(kk)
    for i, th in enumerate(theta):
        z = 1.0 / th ** 2
        r = exact.kappa.r_series(z)
        rp = exact.kappa.r_prime_series(z)
        t_of_r = (1.0 + r) * (1.0 + gamma * r)
        t_prime = 1.0 + gamma + 2.0 * gamma * r
        lam[i] = th * math.sqrt(t_of_r)
        mu_sq[i] = (t_of_r - z * t_prime * rp) / (1.0 + gamma * r)
        nu_sq[i] = (t_of_r - z * t_prime * rp) / (1.0 + r)
        r_val[i] = r
        r_prime[i] = rp
        theta_u[i] = lam[i] * math.sqrt(gamma) / (1.0 + gamma * r)
        theta_v[i] = lam[i] / (math.sqrt(gamma) * (1.0 + r))
    return SpikeEstimates(
        kind=RECTANGULAR,
        lambda_pca=lam,
        theta=theta.copy(),
        mu_sq=mu_sq,
        nu_sq=nu_sq,
        r_value=r_val,
        r_prime=r_prime,
        theta_u=theta_u,
        theta_v=theta_v,
        gamma=gamma,
    )


def _sym_inputs(x, cfg: AmpConfig, truth, exact: ExactModel | None, decomposition=None):
    """Spike extraction plus the cumulant machinery for a symmetric run."""
    spikes, noise = decomposition or decompose_sym(x, cfg.plus, cfg.k_minus, truth)
    t = cfg.max_iters
    table_order = 2 * t + 2
    if cfg.algorithm == GAUSSIAN_BAYES_AMP:
        est = estimate_sym_semicircle(spikes)
        kappa = CumulantModel.semicircle(order=table_order + 2)
        tables = kappa_series_tables_direct(kappa, est.theta, order=table_order)
    elif cfg.cumulant_source == "exact":
        if exact is None:
            raise ValueError("exact cumulant mode needs an ExactModel")
        est = _exact_sym_estimates(exact)
        kappa = exact.kappa
        tables = kappa_series_tables_direct(kappa, est.theta, order=table_order)
    else:
        est = estimate_sym(spikes, noise, cfg.edge_margin_factor)
        order = cfg.moment_order or table_order + 2
        kappa = CumulantModel.estimate(noise, order)
        tables = kappa_series_tables(
            kappa, est.r_value, est.r_prime, est.theta, order=table_order
        )
    return spikes, est, kappa, tables


def run_sym_spectral(
    x: np.ndarray,
    prior: DiscretePrior,
    cfg: AmpConfig,
    truth: np.ndarray | None = None,
    exact: ExactModel | None = None,
    decomposition=None,
) -> Trajectory:
    """Spectrally-initialized symmetric AMP: U_0 = F_pca S^{-1}, F_0 = F_pca,
    then U_t = u_t(F_0..F_{t-1}), F_t = X U_t - sum_s U_s b_{ts}^T with the
    spectral-init debiasing coefficients and empirically-updated SE state.

    `decomposition` (a (SymSpikes, SpectralSample) pair) lets callers reuse one
    eigendecomposition across algorithm variants."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    k = cfg.K
    spikes, est, kappa, tables = _sym_inputs(x, cfg, truth, exact, decomposition)
    theta = est.theta
    single = cfg.algorithm in (SINGLE_ITERATE, GAUSSIAN_BAYES_AMP)

    f0 = spikes.vectors
    u0 = f0 / theta[None, :]
    mu_blocks = [np.diag(np.sqrt(est.mu_sq))]
    sigma = np.diag(1.0 - est.mu_sq)
    delta = MomentLedger(k)
    delta.set(0, 0, u0.T @ u0 / n)
    phi_ledger = DerivativeLedger(k)

    traj = Trajectory(
        algorithm=cfg.algorithm, estimates=est, kappa=kappa, tables_warning=tables.warning
    )
    traj.iterates_u.append(u0)
    traj.iterates_f.append(f0)
    traj.se_states.append(SEState(0, k, mu_blocks[0].copy(), sigma.copy()))
    if truth is not None:
        traj.metrics.append(_sym_metrics(0, f0, f0, traj, truth, n))

    u_list = [u0]
    f_list = [f0]
    for t in range(1, cfg.max_iters + 1):
        mu_stack = np.vstack(mu_blocks)
        if single:
            ctx = DenoiserContext(mu_blocks[-1], sigma[-k:, -k:], cfg.ridge_scale)
            u_t, jac = batch_posterior_stats(f_list[-1], ctx, prior)
            for s in range(t):
                phi_ledger.set(t, s, jac if s == t - 1 else np.zeros((k, k)))
        else:
            ctx = DenoiserContext(mu_stack, sigma, cfg.ridge_scale)
            u_t, jac = batch_posterior_stats(np.hstack(f_list), ctx, prior)
            for s in range(t):
                phi_ledger.set(t, s, jac[:, s * k:(s + 1) * k])
        _guard_divergence(u_t, t)

        phi_t = assemble_phi(phi_ledger, t, SYM_SPECTRAL)
        btab = debias_sym_spectral(phi_t, kappa, tables)
        f_t = x @ u_t
        for s, u_s in enumerate(u_list):
            f_t = f_t - u_s @ btab.coeff(t, s).T
        f_t = f_t - u_t @ btab.coeff(t, t).T

        u_list.append(u_t)
        f_list.append(f_t)
        for r in range(t + 1):
            delta.set(r, t, u_list[r].T @ u_t / n)
        mu_blocks.append(se_mu_block(delta.get(t, t), theta, "sym"))

        sigma_new = se_sigma_sym(phi_t, delta.table(t + 1), kappa, tables).data.copy()
        sigma_new[: t * k, : t * k] = sigma            # frozen prefix
        sigma = sigma_new

        traj.iterates_u.append(u_t)
        traj.iterates_f.append(f_t)
        traj.se_states.append(SEState(t, k, np.vstack(mu_blocks), sigma.copy()))
        if truth is not None:
            traj.metrics.append(_sym_metrics(t, u_t, np.hstack(f_list), traj, truth, n))

        if check_early_stop(sigma, cfg.early_stop_ratio, k, cfg.early_stop_on_schur):
            traj.stop_reason = "early_stop"
            break
    return traj


def _safe_subspace(estimate, truth) -> float:
    try:
        return subspace_distance(estimate, truth)
    except ValueError:
        return float("nan")


def _sym_metrics(t, estimate, f_stack, traj: Trajectory, truth, n) -> dict:
    state = traj.se_states[-1]
    resid = f_stack - truth @ state.mu.T
    cov = resid.T @ resid / n
    denom = float(np.linalg.norm(state.sigma))
    cov_err = float(np.linalg.norm(cov - state.sigma)) / denom if denom > 0 else float("nan")
    return {
        "iteration": t,
        "mse_u": mse(estimate, truth),
        "subspace_distance": _safe_subspace(estimate, truth),
        "align_sq": mean_alignment_sq(estimate, truth),
        "se_cov_error": cov_err,
    }


def run_rect_spectral(
    x: np.ndarray,
    prior_u: DiscretePrior,
    prior_v: DiscretePrior,
    cfg: AmpConfig,
    truth_u: np.ndarray | None = None,
    truth_v: np.ndarray | None = None,
    exact: ExactModel | None = None,
    decomposition=None,
) -> Trajectory:
    """Spectrally-initialized rectangular AMP with the duplicated warm start
    U_1 = U_0 = F_pca S_u^{-1}, G_1 = G_0 = G_pca, V_0 = G_pca S_v^{-1}."""
    x = np.asarray(x, dtype=float)
    m, n = x.shape
    if m > n:
        raise ValueError("expected m <= n")
    gamma = m / n
    k = cfg.K
    spikes, noise = decomposition or decompose_rect(x, k, truth_u)
    big_t = cfg.max_iters
    table_order = 2 * big_t + 4
    if cfg.algorithm == GAUSSIAN_BAYES_AMP:
        est = estimate_rect_mp(spikes, gamma)
        kappa = CumulantModel.marcenko_pastur(gamma, order=table_order + 2)
        tables = kappa_series_tables_direct(kappa, est.theta, order=table_order)
    elif cfg.cumulant_source == "exact":
        if exact is None:
            raise ValueError("exact cumulant mode needs an ExactModel")
        est = _exact_rect_estimates(exact, gamma)
        kappa = exact.kappa
        tables = kappa_series_tables_direct(kappa, est.theta, order=table_order)
    else:
        est = estimate_rect(spikes, noise, cfg.edge_margin_factor)
        order = cfg.moment_order or table_order + 2
        kappa = CumulantModel.estimate(noise, order)
        tables = kappa_series_tables(
            kappa, est.r_value, est.r_prime, est.theta, order=table_order
        )
    single = cfg.algorithm in (SINGLE_ITERATE, GAUSSIAN_BAYES_AMP)
    s_u = est.theta_u
    s_v = est.theta_v
    s_u_inv = DiagScaler(1.0 / s_u)
    s_v_inv = DiagScaler(1.0 / s_v)

    f0 = spikes.left_vectors
    g_pca = spikes.right_vectors
    u0 = f0 / s_u[None, :]
    v0 = g_pca / s_v[None, :]
    u_list = [u0, u0.copy()]            # U_0 = U_1
    f_list = [f0]
    g_list = [g_pca, g_pca.copy()]      # G_0 = G_1
    v_list = [v0]

    delta = MomentLedger(k)
    d00 = u0.T @ u0 / m
    for (r, s) in ((0, 0), (0, 1), (1, 1)):
        delta.set(r, s, d00)
    gamma_led = MomentLedger(k)
    gamma_led.set(0, 0, v0.T @ v0 / n)

    mu_blocks = [np.diag(np.sqrt(est.mu_sq))]
    nu_pca = np.diag(np.sqrt(est.nu_sq))
    nu_blocks = [nu_pca, nu_pca.copy()]
    sigma = np.diag(1.0 - est.mu_sq)
    omega_init = np.diag(1.0 - est.nu_sq)
    omega = np.tile(omega_init, (2, 2))

    phi_ledger = DerivativeLedger(k)
    psi_ledger = DerivativeLedger(k)

    traj = Trajectory(
        algorithm=cfg.algorithm, estimates=est, kappa=kappa, tables_warning=tables.warning
    )
    traj.iterates_u = list(u_list)
    traj.iterates_f = list(f_list)
    traj.iterates_v = list(v_list)
    traj.iterates_g = list(g_list)
    traj.se_states.append(
        SEState(0, k, mu_blocks[0].copy(), sigma.copy(), np.vstack(nu_blocks), omega.copy())
    )
    if truth_u is not None and truth_v is not None:
        traj.metrics.append(
            _rect_metrics(0, f0, g_pca, traj, truth_u, truth_v, m, n)
        )

    for t in range(1, cfg.max_iters + 1):
        # V_t = v_t(G_1 .. G_t): conditioning law excludes block 0.
        if single:
            ctx_v = DenoiserContext(nu_blocks[t], omega[-k:, -k:], cfg.ridge_scale)
            v_t, jac_v = batch_posterior_stats(g_list[t], ctx_v, prior_v)
            for s in range(1, t + 1):
                psi_ledger.set(t, s, jac_v if s == t else np.zeros((k, k)))
        else:
            ctx_v = DenoiserContext(
                np.vstack(nu_blocks[1: t + 1]), omega[k:(t + 1) * k, k:(t + 1) * k],
                cfg.ridge_scale,
            )
            v_t, jac_v = batch_posterior_stats(np.hstack(g_list[1: t + 1]), ctx_v, prior_v)
            for s in range(1, t + 1):
                psi_ledger.set(t, s, jac_v[:, (s - 1) * k: s * k])
        _guard_divergence(v_t, t)
        v_list.append(v_t)
        for r in range(t + 1):
            gamma_led.set(r, t, v_list[r].T @ v_t / n)
        mu_blocks.append(se_mu_block(gamma_led.get(t, t), est.theta, "rect_mu", gamma))

        phi_t = assemble_phi(phi_ledger, t, RECT_SPECTRAL_PHI, s_u_inv)
        psi_t = assemble_psi(psi_ledger, t, RECT_SPECTRAL_PSI, s_v_inv)
        atab, _ = debias_rect_spectral(phi_t, psi_t, kappa, tables, gamma)
        f_t = x @ v_t
        for s in range(t + 1):
            f_t = f_t - u_list[s] @ atab.coeff(t, s).T
        f_list.append(f_t)

        sigma_new = se_sigma_rect(
            phi_t, psi_t, delta.table(t + 1), gamma_led.table(t + 1), kappa, tables
        ).data.copy()
        sigma_new[: t * k, : t * k] = sigma
        sigma = sigma_new

        # U_{t+1} = u_{t+1}(F_0 .. F_t)
        if single:
            ctx_u = DenoiserContext(mu_blocks[t], sigma[-k:, -k:], cfg.ridge_scale)
            u_next, jac_u = batch_posterior_stats(f_list[t], ctx_u, prior_u)
            for s in range(t + 1):
                phi_ledger.set(t + 1, s, jac_u if s == t else np.zeros((k, k)))
        else:
            ctx_u = DenoiserContext(np.vstack(mu_blocks), sigma, cfg.ridge_scale)
            u_next, jac_u = batch_posterior_stats(np.hstack(f_list), ctx_u, prior_u)
            for s in range(t + 1):
                phi_ledger.set(t + 1, s, jac_u[:, s * k:(s + 1) * k])
        _guard_divergence(u_next, t)
        u_list.append(u_next)
        for r in range(t + 2):
            delta.set(r, t + 1, u_list[r].T @ u_next / m)
        nu_blocks.append(se_mu_block(delta.get(t + 1, t + 1), est.theta, "rect_nu", gamma))

        phi_t1 = assemble_phi(phi_ledger, t + 1, RECT_SPECTRAL_PHI, s_u_inv)

        def psi_fill(fill: float, _t=t) -> BlockMatrix:
            base = assemble_psi(
                psi_ledger, _t + 1, RECT_SPECTRAL_PSI, s_v_inv, defined_rows=_t + 1
            ).data.copy()
            if fill != 0.0:
                base[(_t + 1) * k:, k:] = fill
            return BlockMatrix(base, k)

        _, btab = debias_rect_spectral(phi_t1, psi_fill(0.0), kappa, tables, gamma)
        g_next = x.T @ u_next
        for s in range(t + 1):
            g_next = g_next - v_list[s] @ btab.coeff(t + 1, s).T
        g_list.append(g_next)

        def gamma_fill(fill: float, _t=t) -> BlockMatrix:
            return gamma_led.table(_t + 2, undefined_fill=fill)

        omega_new = se_omega_rect_checked(
            phi_t1, psi_fill, delta.table(t + 2), gamma_fill, kappa, tables, gamma
        ).data.copy()
        omega_new[: (t + 1) * k, : (t + 1) * k] = omega
        omega = omega_new

        traj.iterates_v.append(v_t)
        traj.iterates_f.append(f_t)
        traj.iterates_u.append(u_next)
        traj.iterates_g.append(g_next)
        traj.se_states.append(
            SEState(t, k, np.vstack(mu_blocks), sigma.copy(), np.vstack(nu_blocks), omega.copy())
        )
        if truth_u is not None and truth_v is not None:
            traj.metrics.append(
                _rect_metrics(t, u_next, v_t, traj, truth_u, truth_v, m, n)
            )
        stop_sigma = check_early_stop(sigma, cfg.early_stop_ratio, k, cfg.early_stop_on_schur)
        # Omega's duplicated G_0 = G_1 blocks make it singular by construction;
        # test the sub-matrix the v-denoiser actually conditions on.
        stop_omega = check_early_stop(
            omega[k:, k:], cfg.early_stop_ratio, k, cfg.early_stop_on_schur
        )
        if stop_sigma or stop_omega:
            traj.stop_reason = "early_stop"
            break
    return traj


def _rect_metrics(t, est_u, est_v, traj: Trajectory, truth_u, truth_v, m, n) -> dict:
    state = traj.se_states[-1]
    f_stack = np.hstack(traj.iterates_f)
    resid_f = f_stack - truth_u @ state.mu.T
    cov_f = resid_f.T @ resid_f / m
    err_f = float(np.linalg.norm(cov_f - state.sigma)) / max(1e-300, float(np.linalg.norm(state.sigma)))
    g_stack = np.hstack(traj.iterates_g)
    resid_g = g_stack - truth_v @ state.nu.T
    cov_g = resid_g.T @ resid_g / n
    err_g = float(np.linalg.norm(cov_g - state.omega)) / max(1e-300, float(np.linalg.norm(state.omega)))
    return {
        "iteration": t,
        "mse_u": mse(est_u, truth_u),
        "mse_v": mse(est_v, truth_v),
        "subspace_distance": max(
            _safe_subspace(est_u, truth_u), _safe_subspace(est_v, truth_v)
        ),
        "align_sq": 0.5 * (mean_alignment_sq(est_u, truth_u) + mean_alignment_sq(est_v, truth_v)),
        "se_cov_error": max(err_f, err_g),
    }


# ---------------------------------------------------------------------------
# Independent-initialization verification loops


class IdentityLastDenoiser:
    """u_{t+1}(Z_1..Z_t) = Z_t; the chain that reduces AMP to a linear recursion."""

    def __init__(self, k: int):
        self.k = k

    def apply(self, stack: np.ndarray) -> np.ndarray:
        return stack[:, -self.k:].copy()

    def mean_jacobians(self, stack: np.ndarray) -> list[np.ndarray]:
        blocks = [np.zeros((self.k, self.k)) for _ in range(stack.shape[1] // self.k)]
        blocks[-1] = np.eye(self.k)
        return blocks


def run_sym_independent(
    w: np.ndarray,
    chain,
    init: np.ndarray,
    cfg: AmpConfig,
    kappa: CumulantModel | None = None,
    side_info: np.ndarray | None = None,
) -> Trajectory:
    """Z_t = W U_t - sum_s U_s b_{ts}^T, U_{t+1} = u_{t+1}(Z_1..Z_t, E).

    `chain[t-1]` supplies u_{t+1}; the initialization must be independent of
    the noise (caller contract). Iterates are stored 1-based in spirit:
    iterates_u[i] is U_{i+1}, iterates_f[i] is Z_{i+1}.
    """
    w = np.asarray(w, dtype=float)
    n = w.shape[0]
    k = cfg.K
    if kappa is None:
        raise ValueError("independent-init runs need an explicit cumulant model")
    u_list = [np.asarray(init, dtype=float)]
    z_list: list[np.ndarray] = []
    ledger = DerivativeLedger(k)
    traj = Trajectory(algorithm="independent", kappa=kappa)
    for t in range(1, cfg.max_iters + 1):
        phi_t = assemble_phi(ledger, t, SYM_INDEPENDENT)
        btab = debias_sym_independent(phi_t, kappa)
        z_t = w @ u_list[t - 1]
        for s in range(1, t + 1):
            z_t = z_t - u_list[s - 1] @ btab.coeff(t - 1, s - 1).T
        z_list.append(z_t)
        _guard_divergence(z_t, t)
        if t < cfg.max_iters:
            stack = np.hstack(z_list if side_info is None else z_list + [side_info])
            u_next = chain[t - 1].apply(stack)
            jac = chain[t - 1].mean_jacobians(stack)
            for s in range(t):
                ledger.set(t, s, jac[s])
            u_list.append(u_next)
    traj.iterates_u = u_list
    traj.iterates_f = z_list
    return traj


def run_rect_independent(
    w: np.ndarray,
    v_chain,
    u_chain,
    init: np.ndarray,
    cfg: AmpConfig,
    kappa: CumulantModel | None = None,
    side_info_u: np.ndarray | None = None,
    side_info_v: np.ndarray | None = None,
) -> Trajectory:
    """The rectangular independent-init loop: Z_t / V_t on the long side,
    Y_t / U_{t+1} on the short side, coefficients from the cumulant series."""
    w = np.asarray(w, dtype=float)
    m, n = w.shape
    gamma = m / n
    k = cfg.K
    if kappa is None:
        raise ValueError("independent-init runs need an explicit cumulant model")
    u_list = [np.asarray(init, dtype=float)]
    v_list: list[np.ndarray] = []
    z_list: list[np.ndarray] = []
    y_list: list[np.ndarray] = []
    phi_ledger = DerivativeLedger(k)
    psi_ledger = DerivativeLedger(k)
    traj = Trajectory(algorithm="independent", kappa=kappa)
    for t in range(1, cfg.max_iters + 1):
        phi_t = assemble_phi(phi_ledger, t, RECT_INDEPENDENT_PHI)
        psi_masked = assemble_psi(psi_ledger, t, RECT_INDEPENDENT_PSI, defined_rows=t - 1)
        _, btab = debias_rect_independent(phi_t, psi_masked, kappa, gamma)
        z_t = w.T @ u_list[t - 1]
        for s in range(1, t):
            z_t = z_t - v_list[s - 1] @ btab.coeff(t - 1, s - 1).T
        z_list.append(z_t)
        z_stack = np.hstack(z_list if side_info_v is None else z_list + [side_info_v])
        v_t = v_chain[t - 1].apply(z_stack)
        jac = v_chain[t - 1].mean_jacobians(z_stack)
        for s in range(t):
            psi_ledger.set(t - 1, s, jac[s])
        v_list.append(v_t)

        psi_t = assemble_psi(psi_ledger, t, RECT_INDEPENDENT_PSI)
        atab, _ = debias_rect_independent(phi_t, psi_t, kappa, gamma)
        y_t = w @ v_t
        for s in range(1, t + 1):
            y_t = y_t - u_list[s - 1] @ atab.coeff(t - 1, s - 1).T
        y_list.append(y_t)
        _guard_divergence(y_t, t)
        if t < cfg.max_iters:
            y_stack = np.hstack(y_list if side_info_u is None else y_list + [side_info_u])
            u_next = u_chain[t - 1].apply(y_stack)
            jac_u = u_chain[t - 1].mean_jacobians(y_stack)
            for s in range(t):
                phi_ledger.set(t, s, jac_u[s])
            u_list.append(u_next)
    traj.iterates_u = u_list
    traj.iterates_v = v_list
    traj.iterates_f = y_list
    traj.iterates_g = z_list
    return traj


def run_linear_amp(
    x: np.ndarray,
    theta,
    tau: int,
    init: np.ndarray,
    kappa: CumulantModel,
    f_target: np.ndarray | None = None,
) -> Trajectory:
    """The verification linear AMP: F_t = X U_t - sum_i kappa_{t-i+1} U_i S^{-(t-i)},
    U_{t+1} = F_t S^{-1}. Divergence is recorded, not raised."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    theta = np.asarray(theta, dtype=float).reshape(-1)
    u_list = [np.asarray(init, dtype=float)]
    f_list: list[np.ndarray] = []
    traj = Trajectory(algorithm=LINEAR, kappa=kappa)
    for t in range(1, tau + 1):
        f_t = x @ u_list[-1]
        for i in range(1, t + 1):
            c = kappa.kappa_at(t - i + 1)
            if c != 0.0:
                f_t = f_t - c * u_list[i - 1] * (theta ** -(t - i))[None, :]
        f_list.append(f_t)
        if f_target is not None:
            traj.errors.append(float(np.linalg.norm(f_t - f_target)) / math.sqrt(n))
        norm = float(np.linalg.norm(f_t)) / math.sqrt(n)
        if not np.isfinite(norm) or norm > DIVERGENCE_LIMIT:
            traj.stop_reason = "diverged"
            break
        u_list.append(f_t / theta[None, :])
    traj.iterates_u = u_list
    traj.iterates_f = f_list
    return traj
