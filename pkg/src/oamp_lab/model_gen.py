"""Spiked-model instance generation.

Haar-conjugated noise with prescribed spectra, Gaussian ensembles, and signal
matrices drawn from discrete priors with the exact normalization the models
assume (columns orthogonal with squared norm n).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .denoisers import DiscretePrior
from .spectrum import RECTANGULAR, SYMMETRIC, SpectralSample


@dataclass(frozen=True)
class NoiseSpec:
    """family: goe | iid_gaussian_rect | haar_diag; law names the diagonal law."""

    family: str
    dims: tuple[int, ...]
    law: dict | None = None

    def __post_init__(self):
        if self.family not in ("goe", "iid_gaussian_rect", "haar_diag"):
            raise ValueError(f"unknown noise family {self.family!r}")
        if self.family == "haar_diag" and not self.law:
            raise ValueError("haar_diag needs a law spec")
        if self.family == "goe" and len(self.dims) != 1:
            raise ValueError("goe takes dims (n,)")
        if self.family == "iid_gaussian_rect" and len(self.dims) != 2:
            raise ValueError("iid_gaussian_rect takes dims (m, n)")

    @property
    def is_rectangular(self) -> bool:
        return self.family == "iid_gaussian_rect" or (
            self.family == "haar_diag" and len(self.dims) == 2
        )


def haar_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Exact Haar draw: QR of a Ginibre matrix with the R-diagonal signs fixed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    a = rng.standard_normal((n, n))
    q, r = np.linalg.qr(a)
    d = np.diag(r)
    signs = np.where(d >= 0, 1.0, -1.0)
    return q * signs[None, :]


def _draw_law(law: dict, count: int, rng: np.random.Generator) -> np.ndarray:
    name = law["name"]
    if name == "uniform":
        return rng.uniform(law["lo"], law["hi"], size=count)
    if name == "centered_beta":
        scale = law.get("scale", 1.0)
        shift = law.get("shift", 0.0)
        return scale * (rng.beta(law["a"], law["b"], size=count) + shift)
    if name == "custom":
        vals = np.asarray(law["values"], dtype=float)
        return rng.choice(vals, size=count, replace=True)
    raise ValueError(f"unknown law {name!r}")


def sample_noise(
    spec: NoiseSpec, rng: np.random.Generator, with_spectrum: bool = False
) -> tuple[np.ndarray, SpectralSample | None]:
    """Draw a noise matrix; optionally return its realized spectrum.

    For haar_diag the spectrum is the drawn diagonal (free); for goe / iid
    Gaussian it costs an extra decomposition and is computed only on request.
    """
    if spec.family == "goe":
        n = spec.dims[0]
        g = rng.standard_normal((n, n))
        w = (g + g.T) / math.sqrt(2.0 * n)
        spectrum = SpectralSample(np.linalg.eigvalsh(w), kind=SYMMETRIC) if with_spectrum else None
        return w, spectrum
    if spec.family == "iid_gaussian_rect":
        m, n = spec.dims
        w = rng.standard_normal((m, n)) / math.sqrt(n)
        spectrum = (
            SpectralSample(np.linalg.svd(w, compute_uv=False), kind=RECTANGULAR, gamma=m / n)
            if with_spectrum
            else None
        )
        return w, spectrum
    # haar_diag
    if len(spec.dims) == 1:
        n = spec.dims[0]
        lam = _draw_law(spec.law, n, rng)
        o = haar_orthogonal(n, rng)
        w = o.T @ (lam[:, None] * o)
        return w, SpectralSample(lam, kind=SYMMETRIC)
    m, n = spec.dims
    lam = np.abs(_draw_law(spec.law, m, rng))
    o = haar_orthogonal(m, rng)
    q = haar_orthogonal(n, rng)
    w = o.T @ (lam[:, None] * q[:m, :])
    return w, SpectralSample(lam, kind=RECTANGULAR, gamma=m / n)


def sample_signals(
    prior: DiscretePrior, n: int, k_prime: int, rng: np.random.Generator
) -> np.ndarray:
    """Rows i.i.d. from the prior, then columns Gram-Schmidt-orthogonalized and
    rescaled to squared norm n exactly.

    The orthogonalization perturbs rows off the atoms by O(n^{-1/2}), which the
    asymptotic model assumptions tolerate.
    """
    if prior.dim != k_prime:
        raise ValueError("prior dimension must equal the signal rank")
    idx = rng.choice(prior.atoms.shape[0], size=n, p=prior.weights)
    u = prior.atoms[idx].astype(float).copy()
    for k in range(k_prime):
        v = u[:, k]
        for j in range(k):
            v = v - (u[:, j] @ v) / (u[:, j] @ u[:, j]) * u[:, j]
        norm = np.linalg.norm(v)
        if norm < 1e-8 * math.sqrt(n):
            raise ValueError("degenerate prior: rank-deficient signal draw")
        u[:, k] = v * (math.sqrt(n) / norm)
    return u


@dataclass(frozen=True)
class SpikedInstance:
    x: np.ndarray
    u_star: np.ndarray
    theta: np.ndarray
    v_star: np.ndarray | None = None
    w_spectrum: SpectralSample | None = field(default=None, repr=False)

    @property
    def is_rectangular(self) -> bool:
        return self.v_star is not None


def build_spiked(
    signals: np.ndarray,
    theta,
    noise: np.ndarray,
    v_signals: np.ndarray | None = None,
    w_spectrum: SpectralSample | None = None,
) -> SpikedInstance:
    """X = sum_k theta_k/n u_k u_k^T + W, or theta_k/sqrt(mn) u_k v_k^T + W."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if v_signals is None:
        n = signals.shape[0]
        if noise.shape != (n, n) or signals.shape[1] != theta.size:
            raise ValueError("dimension mismatch")
        x = noise + (signals * (theta / n)[None, :]) @ signals.T
        return SpikedInstance(x=x, u_star=signals, theta=theta, w_spectrum=w_spectrum)
    m, n = signals.shape[0], v_signals.shape[0]
    if noise.shape != (m, n) or signals.shape[1] != theta.size or v_signals.shape[1] != theta.size:
        raise ValueError("dimension mismatch")
    x = noise + (signals * (theta / math.sqrt(m * n))[None, :]) @ v_signals.T
    return SpikedInstance(
        x=x, u_star=signals, v_star=v_signals, theta=theta, w_spectrum=w_spectrum
    )


def generate_instance(
    model: str,
    noise_spec: NoiseSpec,
    prior_u: DiscretePrior,
    theta,
    rng: np.random.Generator,
    prior_v: DiscretePrior | None = None,
    with_spectrum: bool = False,
) -> SpikedInstance:
    """Noise + signals + assembly in one call (the harness's per-trial path)."""
    w, spectrum = sample_noise(noise_spec, rng, with_spectrum=with_spectrum)
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if model == "sym":
        n = noise_spec.dims[0]
        u = sample_signals(prior_u, n, theta.size, rng)
        return build_spiked(u, theta, w, w_spectrum=spectrum)
    if model == "rect":
        m, n = noise_spec.dims
        u = sample_signals(prior_u, m, theta.size, rng)
        v = sample_signals(prior_v or prior_u, n, theta.size, rng)
        return build_spiked(u, theta, w, v_signals=v, w_spectrum=spectrum)
    raise ValueError(f"unknown model {model!r}")


def save_matrix_csv(path, matrix: np.ndarray) -> None:
    """Plain numeric CSV, one matrix row per line, 17-significant-digit floats."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in np.atleast_2d(matrix):
            writer.writerow([f"{v:.17g}" for v in row])


def load_matrix_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    return np.asarray(rows)


def export_instance(instance: SpikedInstance, prefix: str) -> list[str]:
    """Write X / U / (V) as portable CSVs for cross-language debugging."""
    paths = [f"{prefix}_X.csv", f"{prefix}_U.csv"]
    save_matrix_csv(paths[0], instance.x)
    save_matrix_csv(paths[1], instance.u_star)
    if instance.v_star is not None:
        paths.append(f"{prefix}_V.csv")
        save_matrix_csv(paths[2], instance.v_star)
    return paths
