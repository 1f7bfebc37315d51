"""Error metrics and the reference percentile used across harness and plots."""

from __future__ import annotations

import math

import numpy as np


def orthonormal_basis(a: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    q, r = np.linalg.qr(a)
    diag = np.abs(np.diag(r))
    if np.any(diag <= tol * max(1.0, diag.max(initial=0.0))):
        raise ValueError("rank-deficient column span")
    return q


def subspace_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Operator norm of the difference of orthogonal projectors onto the column
    spans: the sine of the largest principal angle."""
    qa = orthonormal_basis(a)
    qb = orthonormal_basis(b)
    if qa.shape[1] != qb.shape[1]:
        raise ValueError("subspace dimensions differ")
    s = np.linalg.svd(qa.T @ qb, compute_uv=False)
    smin = min(1.0, float(s.min()))
    return math.sqrt(max(0.0, 1.0 - smin * smin))


def mse(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Row-count-normalized squared Frobenius error; no sign alignment is
    applied here (signs were fixed at spike extraction)."""
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise ValueError("shape mismatch")
    return float(np.sum((estimate - truth) ** 2) / estimate.shape[0])


def mean_alignment_sq(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Mean over components of the squared normalized column alignment."""
    estimate = np.atleast_2d(np.asarray(estimate, dtype=float))
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    vals = []
    for k in range(truth.shape[1]):
        e, u = estimate[:, k], truth[:, k]
        denom = np.linalg.norm(e) * np.linalg.norm(u)
        vals.append(0.0 if denom == 0 else float((e @ u) / denom) ** 2)
    return float(np.mean(vals))


def percentile(values, q: float) -> float:
    """Reference percentile: linear interpolation at rank (n-1) * q / 100.

    The plots package reimplements this formula; the two must agree to 1e-12
    on shared vectors.
    """
    v = sorted(float(x) for x in values)
    if not v:
        raise ValueError("empty sample")
    h = (len(v) - 1) * q / 100.0
    lo = int(math.floor(h))
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (h - lo) * (v[hi] - v[lo])


def excess_kurtosis(values: np.ndarray) -> float:
    v = np.asarray(values, dtype=float)
    v = v - v.mean()
    m2 = float(np.mean(v ** 2))
    if m2 == 0:
        return 0.0
    return float(np.mean(v ** 4) / m2 ** 2 - 3.0)


def ks_distance_to_normal(values: np.ndarray, std: float) -> float:
    """Kolmogorov-Smirnov distance between a sample and N(0, std^2)."""
    v = np.sort(np.asarray(values, dtype=float))
    n = v.size
    cdf = 0.5 * (1.0 + np.array([math.erf(x / (std * math.sqrt(2.0))) for x in v]))
    upper = np.abs(np.arange(1, n + 1) / n - cdf)
    lower = np.abs(np.arange(0, n) / n - cdf)
    return float(max(upper.max(), lower.max()))
