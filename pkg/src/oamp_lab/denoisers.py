"""Row-wise non-linearities: Bayes posterior means under a discrete prior.

The conditional law of the stacked iterates given the signal row is Gaussian,
N(mu . u, Sigma); the posterior mean over a finite-atom prior and its analytic
Jacobian (posterior covariance times mu^T Sigma^{-1}) are what the AMP engines
apply row-wise. A single-iterate variant and the linear denoiser used by the
verification AMP live here too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .block_matrix import DiagScaler


@dataclass(frozen=True)
class DiscretePrior:
    """Finite-atom prior on signal rows in R^K."""

    atoms: np.ndarray       # (A, K)
    weights: np.ndarray     # (A,), sums to 1

    def __post_init__(self):
        atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float)).copy()
        weights = np.asarray(self.weights, dtype=float).reshape(-1).copy()
        if atoms.shape[0] != weights.size:
            raise ValueError("atoms and weights length mismatch")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1")
        atoms.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def second_moment(self) -> np.ndarray:
        return (self.atoms * self.weights[:, None]).T @ self.atoms

    def is_normalized(self, atol: float = 1e-8) -> bool:
        """E[U U^T] = Id, the normalization the spiked models assume."""
        return bool(np.max(np.abs(self.second_moment() - np.eye(self.dim))) <= atol)

    @classmethod
    def rademacher(cls) -> "DiscretePrior":
        return cls(atoms=np.array([[-1.0], [1.0]]), weights=np.array([0.5, 0.5]))

    @classmethod
    def three_point(cls) -> "DiscretePrior":
        """The rank-2 prior used in the simulation studies."""
        s = math.sqrt(2.0)
        return cls(
            atoms=np.array([[0.0, 1.0], [s, -1.0], [-s, -1.0]]),
            weights=np.array([0.5, 0.25, 0.25]),
        )

    @classmethod
    def from_config(cls, spec) -> "DiscretePrior":
        """Accepts a name shorthand or a list of {"atom": [...], "weight": w} records."""
        if isinstance(spec, str):
            spec = {"name": spec}
        if isinstance(spec, dict) and "name" in spec:
            name = spec["name"]
            if name == "rademacher":
                return cls.rademacher()
            if name == "three_point":
                return cls.three_point()
            raise ValueError(f"unknown prior name {name!r}")
        if isinstance(spec, dict):
            return cls(
                atoms=np.asarray(spec["atoms"], dtype=float),
                weights=np.asarray(spec["weights"], dtype=float),
            )
        atoms = np.array([np.asarray(rec["atom"], dtype=float) for rec in spec])
        weights = np.array([float(rec["weight"]) for rec in spec])
        return cls(atoms=atoms, weights=weights)


class DenoiserContext:
    """Factorized Gaussian channel (mu, Sigma) for the stacked iterates.

    A ridge of 1e-9 * mean(diag Sigma) is added before the Cholesky
    factorization when the smallest eigenvalue falls under that level; the
    engines' early-stopping rule normally fires first.
    """

    def __init__(self, mu: np.ndarray, sigma: np.ndarray, ridge_scale: float = 1e-9):
        mu = np.atleast_2d(np.asarray(mu, dtype=float))
        sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
        d = sigma.shape[0]
        if sigma.shape != (d, d) or mu.shape[0] != d:
            raise ValueError("mu/sigma dimension mismatch")
        if np.max(np.abs(sigma - sigma.T)) > 1e-8 * max(1.0, np.max(np.abs(sigma))):
            raise ValueError("sigma must be symmetric")
        sigma = 0.5 * (sigma + sigma.T)
        mean_diag = float(np.mean(np.diag(sigma)))
        # absolute floor covers the zero-noise limit where Sigma vanishes
        level = ridge_scale * (mean_diag if mean_diag > 0 else 1.0)
        ridge = 0.0
        min_eig = float(np.linalg.eigvalsh(sigma)[0])
        if min_eig < level:
            ridge = level - min(min_eig, 0.0)
            sigma = sigma + ridge * np.eye(d)
        try:
            chol = np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(
                f"sigma not positive definite even with ridge {ridge:.3g}"
            ) from exc
        self.mu = mu
        self.sigma = sigma
        self.ridge = ridge
        self._chol = chol
        self.sigma_inv_mu = self.solve(mu)                 # Sigma^{-1} mu, (d, K)
        self.quad = mu.T @ self.sigma_inv_mu               # mu^T Sigma^{-1} mu, (K, K)

    @property
    def dim(self) -> int:
        return self.sigma.shape[0]

    @property
    def signal_dim(self) -> int:
        return self.mu.shape[1]

    def solve(self, b: np.ndarray) -> np.ndarray:
        y = np.linalg.solve(self._chol, b)
        return np.linalg.solve(self._chol.T, y)


def _log_kernels(f: np.ndarray, ctx: DenoiserContext, prior: DiscretePrior) -> np.ndarray:
    """log posterior kernels log w_a - (f - mu u_a)^T Sigma^{-1} (f - mu u_a)/2,
    dropping the f-only term (cancels in the normalization)."""
    g = f @ ctx.sigma_inv_mu                               # (..., K)
    quad_atoms = np.einsum("ak,kl,al->a", prior.atoms, ctx.quad, prior.atoms)
    return g @ prior.atoms.T - 0.5 * quad_atoms + np.log(prior.weights)


def posterior_weights(f: np.ndarray, ctx: DenoiserContext, prior: DiscretePrior) -> np.ndarray:
    """Posterior atom probabilities for a single stacked row f."""
    logs = _log_kernels(np.asarray(f, dtype=float).reshape(-1), ctx, prior)
    logs = logs - np.max(logs)
    w = np.exp(logs)
    return w / math.fsum(w)


def posterior_mean(f: np.ndarray, ctx: DenoiserContext, prior: DiscretePrior) -> np.ndarray:
    """E[U | stacked iterates = f], via max-subtracted exponentials.

    Sums with fsum so the result is invariant under permuting the prior atoms.
    """
    logs = _log_kernels(np.asarray(f, dtype=float).reshape(-1), ctx, prior)
    logs = logs - np.max(logs)
    w = np.exp(logs)
    denom = math.fsum(w)
    return np.array(
        [math.fsum(w * prior.atoms[:, k]) / denom for k in range(prior.dim)]
    )


def posterior_mean_batch(f_rows: np.ndarray, ctx: DenoiserContext, prior: DiscretePrior) -> np.ndarray:
    """Vectorized posterior mean over the rows of an (n, D) stack."""
    logs = _log_kernels(np.asarray(f_rows, dtype=float), ctx, prior)
    logs -= logs.max(axis=1, keepdims=True)
    w = np.exp(logs)
    w /= w.sum(axis=1, keepdims=True)
    return w @ prior.atoms


def posterior_jacobian(f: np.ndarray, ctx: DenoiserContext, prior: DiscretePrior) -> np.ndarray:
    """Full (K, D) Jacobian: PostCov(f) mu^T Sigma^{-1}; block s is columns sK:(s+1)K."""
    w = posterior_weights(f, ctx, prior)
    mean = w @ prior.atoms
    second = (prior.atoms * w[:, None]).T @ prior.atoms
    post_cov = second - np.outer(mean, mean)
    return post_cov @ ctx.sigma_inv_mu.T


def batch_posterior_stats(
    f_rows: np.ndarray, ctx: DenoiserContext, prior: DiscretePrior
) -> tuple[np.ndarray, np.ndarray]:
    """(posterior means, row-averaged Jacobian) for an (n, D) stack.

    The averaged Jacobian is mean_i PostCov_i applied to mu^T Sigma^{-1}; the
    engines slice it into the K x K derivative blocks of the current row of
    the debiasing ledger.
    """
    f_rows = np.asarray(f_rows, dtype=float)
    n = f_rows.shape[0]
    logs = _log_kernels(f_rows, ctx, prior)
    logs -= logs.max(axis=1, keepdims=True)
    w = np.exp(logs)
    w /= w.sum(axis=1, keepdims=True)
    means = w @ prior.atoms
    wbar = w.mean(axis=0)
    second = (prior.atoms * wbar[:, None]).T @ prior.atoms
    mean_post_cov = second - means.T @ means / n
    return means, mean_post_cov @ ctx.sigma_inv_mu.T


def single_iterate_posterior_mean(
    f_last: np.ndarray, mu_last: np.ndarray, sigma_last: np.ndarray, prior: DiscretePrior
) -> np.ndarray:
    """Posterior mean conditioning on the last iterate block only."""
    ctx = DenoiserContext(mu_last, sigma_last)
    return posterior_mean(f_last, ctx, prior)


def linear_denoiser(f: np.ndarray, scale: DiagScaler) -> np.ndarray:
    """Componentwise division by the signal strengths; Jacobian is S^{-1} exactly."""
    if np.any(scale.entries == 0.0):
        raise ValueError("linear denoiser needs nonzero signal strengths")
    return np.asarray(f, dtype=float) / scale.entries
