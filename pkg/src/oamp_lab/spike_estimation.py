"""Outlier eigen/singular pairs and the data-driven signal-strength estimates.

Implements the full estimation recipe: extract the designated outliers with
the model normalization and sign conventions, then read theta, the spectral
alignments, and the R-transform values off the empirical Cauchy/D transforms
of the residual bulk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .spectrum import (
    RECTANGULAR,
    SYMMETRIC,
    SpectralSample,
    cauchy_G,
    cauchy_G_prime,
    d_transform,
)


class SubCriticalSpikeError(RuntimeError):
    """A targeted component sits at (or inside) the bulk edge."""

    def __init__(self, component: int, lam: float, detail: str):
        self.component = component
        self.lam = lam
        super().__init__(f"component {component}: lambda={lam:.6g} {detail}")


@dataclass(frozen=True)
class SymSpikes:
    """Outlier sample eigenpairs of a symmetric matrix, caller-ordered."""

    lambdas: np.ndarray          # K_+ positive descending, then K_- negative ascending
    vectors: np.ndarray          # n x K, columns scaled to |f|^2 = n
    k_plus: int
    k_minus: int
    sign_mode: str               # "truth" or "data"

    @property
    def n(self) -> int:
        return self.vectors.shape[0]


@dataclass(frozen=True)
class RectSpikes:
    """Top singular triplets of an m x n matrix (m <= n)."""

    lambdas: np.ndarray
    left_vectors: np.ndarray     # m x K, |f|^2 = m
    right_vectors: np.ndarray    # n x K, |g|^2 = n
    sign_mode: str

    @property
    def m(self) -> int:
        return self.left_vectors.shape[0]

    @property
    def n(self) -> int:
        return self.right_vectors.shape[0]


@dataclass(frozen=True)
class SpikeEstimates:
    """Per-component signal-strength and alignment estimates."""

    kind: str
    lambda_pca: np.ndarray
    theta: np.ndarray
    mu_sq: np.ndarray
    r_value: np.ndarray          # R(1/theta) resp. R(theta^-2)
    r_prime: np.ndarray
    nu_sq: np.ndarray | None = None
    theta_u: np.ndarray | None = None
    theta_v: np.ndarray | None = None
    gamma: float | None = None


def _fix_signs(vectors: np.ndarray, truth: np.ndarray | None) -> np.ndarray:
    """Column sign convention: f.T u_* >= 0 with truth, else largest-|coord| positive."""
    out = vectors.copy()
    for k in range(out.shape[1]):
        if truth is not None:
            s = out[:, k] @ truth[:, k]
        else:
            s = out[np.argmax(np.abs(out[:, k])), k]
        if s < 0:
            out[:, k] = -out[:, k]
    return out


def decompose_sym(
    x: np.ndarray, k_plus: int, k_minus: int, truth: np.ndarray | None = None
) -> tuple[SymSpikes, SpectralSample]:
    """One eigendecomposition: outlier pairs plus the residual bulk spectrum."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if x.shape != (n, n):
        raise ValueError("matrix must be square")
    if k_plus + k_minus < 1:
        raise ValueError("need at least one targeted component")
    asym = np.max(np.abs(x - x.T))
    if asym > 1e-10 * max(1.0, np.max(np.abs(x))):
        raise ValueError("matrix is not symmetric")
    evals, evecs = np.linalg.eigh(x)          # ascending
    top = list(range(n - 1, n - 1 - k_plus, -1))
    bottom = list(range(k_minus))
    sel = top + bottom
    lambdas = evals[sel]
    vectors = evecs[:, sel] * math.sqrt(n)
    vectors = _fix_signs(vectors, truth)
    keep = np.ones(n, dtype=bool)
    keep[sel] = False
    bulk = SpectralSample(evals[keep], kind=SYMMETRIC)
    spikes = SymSpikes(
        lambdas=lambdas,
        vectors=vectors,
        k_plus=k_plus,
        k_minus=k_minus,
        sign_mode="truth" if truth is not None else "data",
    )
    return spikes, bulk


def extract_sym_spikes(
    x: np.ndarray, k_plus: int, k_minus: int, truth: np.ndarray | None = None
) -> SymSpikes:
    return decompose_sym(x, k_plus, k_minus, truth)[0]


def decompose_rect(
    x: np.ndarray,
    k: int,
    truth_u: np.ndarray | None = None,
) -> tuple[RectSpikes, SpectralSample]:
    """One SVD: top-k triplets plus the residual singular value law."""
    x = np.asarray(x, dtype=float)
    m, n = x.shape
    if m > n:
        raise ValueError("expected m <= n; pass the transpose for tall matrices")
    if k < 1:
        raise ValueError("need at least one targeted component")
    u, s, vt = np.linalg.svd(x, full_matrices=False)
    f = u[:, :k] * math.sqrt(m)
    g = vt[:k].T * math.sqrt(n)
    # Flip (f, g) as a pair so X stays sum sigma f g^T / sqrt(mn).
    for col in range(k):
        if truth_u is not None:
            sign = f[:, col] @ truth_u[:, col]
        else:
            sign = f[np.argmax(np.abs(f[:, col])), col]
        if sign < 0:
            f[:, col] = -f[:, col]
            g[:, col] = -g[:, col]
    bulk = SpectralSample(s[k:], kind=RECTANGULAR, gamma=m / n)
    spikes = RectSpikes(
        lambdas=s[:k].copy(),
        left_vectors=f,
        right_vectors=g,
        sign_mode="truth" if truth_u is not None else "data",
    )
    return spikes, bulk


def extract_rect_spikes(x: np.ndarray, k: int, truth_u: np.ndarray | None = None) -> RectSpikes:
    return decompose_rect(x, k, truth_u)[0]


def _edge_spacing(values: np.ndarray, upper: bool, count: int = 10) -> float:
    """Mean gap among the `count` bulk values nearest the relevant edge."""
    v = values[-count - 1:] if upper else values[: count + 1]
    if v.size < 2:
        return 0.0
    return float((v[-1] - v[0]) / (v.size - 1))


def _check_separation(
    component: int, lam: float, noise: SpectralSample, margin_factor: float
) -> None:
    lo, hi = noise.support_min, noise.support_max
    if lo <= lam <= hi:
        raise SubCriticalSpikeError(component, lam, f"inside bulk support [{lo:.6g}, {hi:.6g}]")
    if margin_factor <= 0:
        return
    if lam > hi:
        margin, spacing = lam - hi, _edge_spacing(noise.values, upper=True)
    else:
        margin, spacing = lo - lam, _edge_spacing(noise.values, upper=False)
    if margin < margin_factor * spacing:
        raise SubCriticalSpikeError(
            component, lam, f"separation {margin:.3g} below {margin_factor} x edge spacing {spacing:.3g}"
        )


def estimate_sym(
    spikes: SymSpikes, noise: SpectralSample, edge_margin_factor: float = 5.0
) -> SpikeEstimates:
    """theta = 1/G(lambda), mu^2 = -1/(theta^2 G'(lambda)), R = lambda - theta,
    R' = theta^2 (1 - mu^2), with G, G' from the residual empirical spectrum."""
    kk = spikes.lambdas.size
    theta = np.empty(kk)
    mu_sq = np.empty(kk)
    r_val = np.empty(kk)
    r_prime = np.empty(kk)
    for comp, lam in enumerate(spikes.lambdas):
        _check_separation(comp, float(lam), noise, edge_margin_factor)
        g = cauchy_G(noise, float(lam))
        gp = cauchy_G_prime(noise, float(lam))
        theta[comp] = 1.0 / g
        mu_sq[comp] = -1.0 / (theta[comp] ** 2 * gp)   # = G^2/|G'| <= 1 by Cauchy-Schwarz
        r_val[comp] = lam - theta[comp]
        r_prime[comp] = theta[comp] ** 2 * (1.0 - mu_sq[comp])
    return SpikeEstimates(
        kind=SYMMETRIC,
        lambda_pca=spikes.lambdas.copy(),
        theta=theta,
        mu_sq=mu_sq,
        r_value=r_val,
        r_prime=r_prime,
    )


def _rect_u_of(w: float, gamma: float) -> float:
    """Inverse of T(z) = (1+z)(1+gamma z) shifted by one: T(U(w-1)) = w."""
    return (-gamma - 1.0 + math.sqrt((1.0 + gamma) ** 2 + 4.0 * gamma * w)) / (2.0 * gamma)


def estimate_rect(
    spikes: RectSpikes, noise: SpectralSample, edge_margin_factor: float = 5.0
) -> SpikeEstimates:
    """Rectangular recipe off the empirical D-transform.

    theta = D(lambda)^{-1/2}; mu^2, nu^2 from D'; R from the rectangular
    R-transform identity R = U(lambda^2 D(lambda) - 1); R' by inverting the
    alignment expression; theta_u theta_v = theta^2 holds by construction.
    """
    gamma = noise.gamma
    kk = spikes.lambdas.size
    theta = np.empty(kk)
    mu_sq = np.empty(kk)
    nu_sq = np.empty(kk)
    r_val = np.empty(kk)
    r_prime = np.empty(kk)
    theta_u = np.empty(kk)
    theta_v = np.empty(kk)
    for comp, lam in enumerate(spikes.lambdas):
        lam = float(lam)
        _check_separation(comp, lam, noise, edge_margin_factor)
        dt = d_transform(noise, lam)
        theta[comp] = dt.d ** -0.5
        th2 = theta[comp] ** 2
        mu_sq[comp] = min(1.0, -2.0 * dt.phi / (th2 * dt.d_prime))
        nu_sq[comp] = min(1.0, -2.0 * dt.phibar / (th2 * dt.d_prime))
        r = _rect_u_of(lam * lam * dt.d - 1.0, gamma)  # T(R) = lambda^2 / theta^2
        t_of_r = lam * lam / th2
        t_prime = 1.0 + gamma + 2.0 * gamma * r
        r_val[comp] = r
        r_prime[comp] = (t_of_r - mu_sq[comp] * (1.0 + gamma * r)) * th2 / t_prime
        theta_u[comp] = lam * math.sqrt(gamma) / (1.0 + gamma * r)
        theta_v[comp] = lam / (math.sqrt(gamma) * (1.0 + r))
    return SpikeEstimates(
        kind=RECTANGULAR,
        lambda_pca=spikes.lambdas.copy(),
        theta=theta,
        mu_sq=mu_sq,
        nu_sq=nu_sq,
        r_value=r_val,
        r_prime=r_prime,
        theta_u=theta_u,
        theta_v=theta_v,
        gamma=gamma,
    )


def estimate_sym_semicircle(spikes: SymSpikes) -> SpikeEstimates:
    """Closed-form semicircle estimates (the white-noise baseline algorithm)."""
    kk = spikes.lambdas.size
    theta = np.empty(kk)
    mu_sq = np.empty(kk)
    for comp, lam in enumerate(spikes.lambdas):
        lam = float(lam)
        if abs(lam) <= 2.0:
            raise SubCriticalSpikeError(comp, lam, "at or inside the semicircle edge |2|")
        root = math.sqrt(lam * lam - 4.0)
        theta[comp] = (lam + root) / 2.0 if lam > 0 else (lam - root) / 2.0
        mu_sq[comp] = 1.0 - 1.0 / theta[comp] ** 2
    r_val = spikes.lambdas - theta
    r_prime = theta ** 2 * (1.0 - mu_sq)
    return SpikeEstimates(
        kind=SYMMETRIC,
        lambda_pca=spikes.lambdas.copy(),
        theta=theta,
        mu_sq=mu_sq,
        r_value=r_val,
        r_prime=r_prime,
    )


def estimate_rect_mp(spikes: RectSpikes, gamma: float) -> SpikeEstimates:
    """Closed-form estimates under the square-root Marcenko-Pastur law.

    R(z) = z, so lambda^2 = (theta^2 + gamma)(theta^2 + 1)/theta^2 solves in
    closed form; the spike must clear the bulk edge 1 + sqrt(gamma).
    """
    kk = spikes.lambdas.size
    theta = np.empty(kk)
    mu_sq = np.empty(kk)
    nu_sq = np.empty(kk)
    r_val = np.empty(kk)
    r_prime = np.empty(kk)
    theta_u = np.empty(kk)
    theta_v = np.empty(kk)
    edge = 1.0 + math.sqrt(gamma)
    for comp, lam in enumerate(spikes.lambdas):
        lam = float(lam)
        if lam <= edge:
            raise SubCriticalSpikeError(comp, lam, f"at or inside the MP edge {edge:.6g}")
        b = lam * lam - 1.0 - gamma
        disc = b * b - 4.0 * gamma
        if disc <= 0:
            raise SubCriticalSpikeError(comp, lam, "below the MP phase transition")
        th2 = (b + math.sqrt(disc)) / 2.0
        theta[comp] = math.sqrt(th2)
        r = 1.0 / th2
        t_of_r = lam * lam / th2
        t_prime = 1.0 + gamma + 2.0 * gamma * r
        mu_sq[comp] = (t_of_r - t_prime / th2) / (1.0 + gamma * r)
        nu_sq[comp] = (t_of_r - t_prime / th2) / (1.0 + r)
        r_val[comp] = r
        r_prime[comp] = 1.0
        theta_u[comp] = lam * math.sqrt(gamma) / (1.0 + gamma * r)
        theta_v[comp] = lam / (math.sqrt(gamma) * (1.0 + r))
    return SpikeEstimates(
        kind=RECTANGULAR,
        lambda_pca=spikes.lambdas.copy(),
        theta=theta,
        mu_sq=mu_sq,
        nu_sq=nu_sq,
        r_value=r_val,
        r_prime=r_prime,
        theta_u=theta_u,
        theta_v=theta_v,
        gamma=gamma,
    )
