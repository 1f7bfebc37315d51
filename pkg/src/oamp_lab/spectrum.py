"""Empirical spectral laws and their transforms.

Moment <-> free-cumulant conversions (symmetric and rectangular), the
Cauchy-, R- and D-transform evaluators with their bracketed inversions, and
the signal-strength-weighted cumulant tables that feed the spectral-init
debiasing coefficients and state evolution.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .block_matrix import DiagScaler

SYMMETRIC = "symmetric"
RECTANGULAR = "rectangular"


class SupportError(ValueError):
    """Evaluation point inside the spectral support (transform has a pole)."""


class InversionDomainError(ValueError):
    """Target value outside the invertible range of a monotone transform."""


@dataclass(frozen=True)
class SpectralSample:
    """An empirical spectral law: eigenvalues, or singular values with aspect ratio."""

    values: np.ndarray
    kind: str = SYMMETRIC
    gamma: float | None = None

    def __post_init__(self):
        v = np.sort(np.asarray(self.values, dtype=float).reshape(-1))
        if v.size < 2:
            raise ValueError("need at least 2 spectral values")
        if not np.all(np.isfinite(v)):
            raise ValueError("spectral values must be finite")
        if self.kind not in (SYMMETRIC, RECTANGULAR):
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.kind == RECTANGULAR:
            if np.any(v < 0):
                raise ValueError("rectangular spectral values must be non-negative")
            if self.gamma is None or not (0.0 < self.gamma <= 1.0):
                raise ValueError("rectangular sample needs gamma in (0, 1]")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def support_min(self) -> float:
        return float(self.values[0])

    @property
    def support_max(self) -> float:
        return float(self.values[-1])

    @classmethod
    def from_csv(cls, path, kind: str = SYMMETRIC, gamma: float | None = None) -> "SpectralSample":
        """Load from a one-column CSV with header `value`."""
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "value" not in reader.fieldnames:
                raise ValueError(f"{path}: expected a CSV with a `value` column")
            vals = [float(row["value"]) for row in reader]
        return cls(np.asarray(vals), kind=kind, gamma=gamma)


def empirical_moments(sample: SpectralSample, order: int) -> np.ndarray:
    """m_1..m_order of the law (of Lambda^2 for rectangular samples).

    Uses exact (fsum) accumulation; order-12 moments of samples supported in
    [-3, 3] would otherwise lose digits to cancellation.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    base = sample.values ** 2 if sample.kind == RECTANGULAR else sample.values
    n = base.size
    out = np.empty(order)
    pw = np.ones_like(base)
    for k in range(order):
        pw = pw * base
        out[k] = math.fsum(pw) / n
    return out


def _poly_mul(a: np.ndarray, b: np.ndarray, trunc: int) -> np.ndarray:
    return np.convolve(a, b)[:trunc]


def free_cumulants_from_moments(moments) -> np.ndarray:
    """kappa_1..kappa_J from m_1..m_J via the free moment-cumulant relation.

    Works with the generating-function form M(z) = C(z M(z)) where
    M(z) = 1 + sum m_k z^k and C(z) = 1 + sum kappa_k z^k, matching
    coefficients order by order.
    """
    m = np.asarray(moments, dtype=float).reshape(-1)
    j = m.size
    trunc = j + 1
    big_m = np.concatenate(([1.0], m))            # M(z) coefficients
    s = np.concatenate(([0.0], big_m))[:trunc]    # S(z) = z * M(z)
    kappa = np.zeros(j)
    s_pow = np.array([1.0])                        # S^0
    series = np.zeros(trunc)                       # sum_{i<k} kappa_i S^i
    for k in range(1, j + 1):
        s_pow = _poly_mul(s_pow, s, trunc)         # S^k, leading coeff at z^k is 1
        coeff = series[k] if k < series.size else 0.0
        kappa[k - 1] = m[k - 1] - coeff
        if k < j:
            padded = np.zeros(trunc)
            padded[: s_pow.size] = s_pow
            series = series + kappa[k - 1] * padded
    return kappa


def moments_from_free_cumulants(kappa) -> np.ndarray:
    """Exact inverse of free_cumulants_from_moments (same recursion run forward)."""
    k = np.asarray(kappa, dtype=float).reshape(-1)
    j = k.size
    m = np.zeros(j)
    for t in range(1, j + 1):
        trunc = t + 1
        big_m = np.concatenate(([1.0], m[: t - 1]))
        s = np.concatenate(([0.0], big_m))[:trunc]
        total = 0.0
        s_pow = np.array([1.0])
        for i in range(1, t + 1):
            s_pow = _poly_mul(s_pow, s, trunc)
            if t < s_pow.size:
                total += k[i - 1] * s_pow[t]
        m[t - 1] = total
    return m


def rect_cumulants_from_moments(moments2, gamma: float) -> np.ndarray:
    """Rectangular free cumulants kappa_2, kappa_4, .. from moments of Lambda^2.

    Coefficient matching in M(z) = C(z (1 + M(z)) (1 + gamma M(z))) with
    M(z) = sum m_{2k} z^k and C(z) = sum kappa_{2k} z^k.
    """
    m = np.asarray(moments2, dtype=float).reshape(-1)
    j = m.size
    trunc = j + 1
    big_m = np.concatenate(([0.0], m))            # M(z), no constant term
    a = big_m * gamma
    a[0] = 1.0                                     # 1 + gamma M
    b = big_m.copy()
    b[0] = 1.0                                     # 1 + M
    s = np.concatenate(([0.0], _poly_mul(a, b, trunc)))[:trunc]
    kappa = np.zeros(j)
    s_pow = np.array([1.0])
    series = np.zeros(trunc)
    for k in range(1, j + 1):
        s_pow = _poly_mul(s_pow, s, trunc)
        coeff = series[k] if k < series.size else 0.0
        kappa[k - 1] = m[k - 1] - coeff
        if k < j:
            padded = np.zeros(trunc)
            padded[: s_pow.size] = s_pow
            series = series + kappa[k - 1] * padded
    return kappa


def rect_moments_from_cumulants(kappa2, gamma: float) -> np.ndarray:
    """Forward evaluation of the rectangular moment-cumulant relation."""
    k = np.asarray(kappa2, dtype=float).reshape(-1)
    j = k.size
    m = np.zeros(j)
    for t in range(1, j + 1):
        trunc = t + 1
        big_m = np.concatenate(([0.0], m[: t - 1]))
        a = big_m * gamma
        a[0] = 1.0
        b = big_m.copy()
        b[0] = 1.0
        s = np.concatenate(([0.0], _poly_mul(a, b, trunc)))[:trunc]
        total = 0.0
        s_pow = np.array([1.0])
        for i in range(1, t + 1):
            s_pow = _poly_mul(s_pow, s, trunc)
            if t < s_pow.size:
                total += k[i - 1] * s_pow[t]
        m[t - 1] = total
    return m


# ---------------------------------------------------------------------------
# Transforms of an empirical law


def cauchy_G(sample: SpectralSample, z: float) -> float:
    """G(z) = mean of 1/(z - lambda_i); z must lie outside [min, max]."""
    lo, hi = sample.support_min, sample.support_max
    if lo <= z <= hi:
        raise SupportError(f"z={z} inside spectral support [{lo}, {hi}]")
    return float(np.mean(1.0 / (z - sample.values)))


def cauchy_G_prime(sample: SpectralSample, z: float) -> float:
    lo, hi = sample.support_min, sample.support_max
    if lo <= z <= hi:
        raise SupportError(f"z={z} inside spectral support [{lo}, {hi}]")
    return float(-np.mean(1.0 / (z - sample.values) ** 2))


def _bisect_decreasing(f, lo: float, hi: float, target: float, iters: int = 200) -> float:
    """Root of f(z) = target for strictly decreasing f on [lo, hi]."""
    flo, fhi = f(lo), f(hi)
    if not (fhi <= target <= flo):
        raise InversionDomainError(f"target {target} not bracketed in [{flo}, {fhi}]")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if f(mid) >= target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def invert_cauchy(sample: SpectralSample, g: float, side: str = "upper") -> float:
    """z with G(z) = g on the monotone branch outside the support.

    Upper branch: g in (0, G(max+)); lower branch: g in (G(min-), 0).
    Signals a sub-critical spike when g is outside the invertible range.
    """
    if side == "upper":
        if g <= 0:
            raise InversionDomainError("upper-branch target must be positive")
        edge = sample.support_max
        lo = edge + 1e-9
        hi = edge + 10.0 * (1.0 + abs(edge))
        f = lambda z: cauchy_G(sample, z)
        for _ in range(200):
            if f(hi) < g:
                break
            hi = edge + 2.0 * (hi - edge)
        else:
            raise InversionDomainError("could not bracket target")
        z = _bisect_decreasing(f, lo, hi, g)
    elif side == "lower":
        if g >= 0:
            raise InversionDomainError("lower-branch target must be negative")
        edge = sample.support_min
        lo = edge - 10.0 * (1.0 + abs(edge))
        hi = edge - 1e-9
        f = lambda z: cauchy_G(sample, z)
        for _ in range(200):
            if f(lo) > g:
                break
            lo = edge - 2.0 * (edge - lo)
        else:
            raise InversionDomainError("could not bracket target")
        z = _bisect_decreasing(f, lo, hi, g)
    else:
        raise ValueError("side must be 'upper' or 'lower'")
    if abs(cauchy_G(sample, z) - g) > 1e-10 * max(1.0, abs(g)):
        raise InversionDomainError("bisection failed to reach tolerance")
    return z


@dataclass(frozen=True)
class DTransform:
    phi: float
    phibar: float
    d: float
    d_prime: float


def d_transform(sample: SpectralSample, z: float) -> DTransform:
    """phi, phibar, D = phi*phibar and D' at z > max singular value."""
    if sample.kind != RECTANGULAR:
        raise ValueError("d_transform is defined for rectangular samples")
    if z <= sample.support_max:
        raise SupportError(f"z={z} inside spectral support (max {sample.support_max})")
    gamma = sample.gamma
    lam2 = sample.values ** 2
    denom = z * z - lam2
    phi = float(np.mean(z / denom))
    phi_prime = float(np.mean(-(z * z + lam2) / denom ** 2))
    phibar = gamma * phi + (1.0 - gamma) / z
    phibar_prime = gamma * phi_prime - (1.0 - gamma) / z ** 2
    d = phi * phibar
    d_prime = phi_prime * phibar + phi * phibar_prime
    return DTransform(phi=phi, phibar=phibar, d=d, d_prime=d_prime)


def invert_D(sample: SpectralSample, d: float) -> float:
    """z > max singular value with D(z) = d; errors on sub-critical d <= 0."""
    if d <= 0:
        raise InversionDomainError("D target must be positive")
    edge = sample.support_max
    lo = edge + 1e-9
    hi = edge + 10.0 * (1.0 + abs(edge))
    f = lambda z: d_transform(sample, z).d
    for _ in range(200):
        if f(hi) < d:
            break
        hi = edge + 2.0 * (hi - edge)
    else:
        raise InversionDomainError("could not bracket target")
    z = _bisect_decreasing(f, lo, hi, d)
    if abs(f(z) - d) > 1e-10 * max(1.0, abs(d)):
        raise InversionDomainError("bisection failed to reach tolerance")
    return z


# ---------------------------------------------------------------------------
# Cumulant models and the weighted table recursions


@dataclass(frozen=True)
class CumulantModel:
    """Free-cumulant sequence of a spectral law.

    For symmetric laws `kappa[j]` is kappa_{j+1}; for rectangular laws it is
    the rectangular cumulant kappa_{2(j+1)} at aspect ratio `gamma`.
    """

    kappa: np.ndarray
    kind: str = SYMMETRIC
    support_max: float = 0.0
    support_min: float | None = None
    gamma: float | None = None
    source_sample: SpectralSample | None = field(default=None, repr=False)

    def __post_init__(self):
        k = np.asarray(self.kappa, dtype=float).reshape(-1).copy()
        k.flags.writeable = False
        object.__setattr__(self, "kappa", k)

    @property
    def order(self) -> int:
        return self.kappa.size

    def kappa_at(self, j: int) -> float:
        """Symmetric kappa_j (1-indexed); rectangular kappa_{2j}. Zero beyond storage."""
        if j < 1:
            raise ValueError("cumulant index must be >= 1")
        return float(self.kappa[j - 1]) if j <= self.kappa.size else 0.0

    def r_series(self, z: float) -> float:
        """Symmetric: R(z) = sum kappa_{j+1} z^j; rectangular: sum kappa_{2j} z^j."""
        if self.kind == SYMMETRIC:
            return float(sum(self.kappa[j] * z ** j for j in range(self.kappa.size)))
        return float(sum(self.kappa[j] * z ** (j + 1) for j in range(self.kappa.size)))

    def r_prime_series(self, z: float) -> float:
        if self.kind == SYMMETRIC:
            return float(
                sum((j + 1) * self.kappa[j + 1] * z ** j for j in range(self.kappa.size - 1))
            )
        return float(sum((j + 1) * self.kappa[j] * z ** j for j in range(self.kappa.size)))

    @classmethod
    def estimate(cls, sample: SpectralSample, order: int) -> "CumulantModel":
        """Fit cumulants to an empirical sample via the moment-cumulant relations."""
        m = empirical_moments(sample, order)
        if sample.kind == SYMMETRIC:
            kappa = free_cumulants_from_moments(m)
        else:
            kappa = rect_cumulants_from_moments(m, sample.gamma)
        return cls(
            kappa=kappa,
            kind=sample.kind,
            support_max=sample.support_max,
            support_min=sample.support_min if sample.kind == SYMMETRIC else None,
            gamma=sample.gamma,
            source_sample=sample,
        )

    @classmethod
    def semicircle(cls, order: int = 16) -> "CumulantModel":
        kappa = np.zeros(order)
        kappa[1] = 1.0
        return cls(kappa=kappa, kind=SYMMETRIC, support_max=2.0, support_min=-2.0)

    @classmethod
    def marcenko_pastur(cls, gamma: float, order: int = 16) -> "CumulantModel":
        """Square-root-MP singular value law: kappa_2 = 1, higher rectangular cumulants 0."""
        kappa = np.zeros(order)
        kappa[0] = 1.0
        return cls(
            kappa=kappa,
            kind=RECTANGULAR,
            support_max=1.0 + math.sqrt(gamma),
            gamma=gamma,
        )


@dataclass(frozen=True)
class KappaSeriesTables:
    """Diagonal tables kappa_tilde_s, kappa_hat_s for a vector of signal strengths.

    Symmetric: tilde indexed s = 1..order, hat s = 2..order.
    Rectangular: index s means the 2s-th cumulant; tilde and hat run s = 1..order.
    """

    kind: str
    scale: np.ndarray                      # theta_1..theta_K
    tilde: dict[int, np.ndarray]
    hat: dict[int, np.ndarray]
    warning: bool = False

    @property
    def max_order(self) -> int:
        return max(self.tilde)

    def tilde_at(self, s: int) -> DiagScaler:
        if s not in self.tilde:
            raise KeyError(f"kappa_tilde table order insufficient (need s={s})")
        return DiagScaler(self.tilde[s])

    def hat_at(self, s: int) -> DiagScaler:
        if s not in self.hat:
            raise KeyError(f"kappa_hat table order insufficient (need s={s})")
        return DiagScaler(self.hat[s])

    def check_recursions(self, kappa: CumulantModel, atol: float = 1e-8) -> bool:
        """Recursion-consistency invariant across every stored order."""
        th = self.scale if self.kind == SYMMETRIC else self.scale ** 2
        for s in sorted(self.tilde):
            if s + 1 in self.tilde:
                lhs = self.tilde[s + 1]
                rhs = (self.tilde[s] - kappa.kappa_at(s)) * th
                if np.max(np.abs(lhs - rhs)) > atol * max(1.0, np.max(np.abs(lhs))):
                    return False
        for s in sorted(self.hat):
            if s + 1 in self.hat and s in self.tilde:
                lhs = self.hat[s + 1]
                rhs = (self.hat[s] - self.tilde[s]) * th
                if np.max(np.abs(lhs - rhs)) > atol * max(1.0, np.max(np.abs(lhs))):
                    return False
        return True


def kappa_series_tables(
    kappa: CumulantModel,
    r_values,
    r_prime_values,
    scale,
    order: int,
    stability_budget: int | None = None,
) -> KappaSeriesTables:
    """Build the weighted-cumulant tables from per-component R, R' values.

    Symmetric seeds: kappa_tilde_1 = R(1/theta_k), kappa_hat_2 = R'(1/theta_k);
    then kappa_tilde_{s+1} = (kappa_tilde_s - kappa_s) theta and
    kappa_hat_{s+1} = (kappa_hat_s - kappa_tilde_s) theta.
    Rectangular seeds: kappa_tilde_2 = theta^2 R(theta^-2), kappa_hat_2 =
    R'(theta^-2), with theta^2 in the recursions.

    The recursion amplifies seed error by a theta factor per step; the result
    carries a warning flag when any |theta_k| <= 1.05 (series near divergence)
    or when `order` exceeds the caller's stability budget.
    """
    theta = np.asarray(scale, dtype=float).reshape(-1)
    r_values = np.broadcast_to(np.asarray(r_values, dtype=float), theta.shape).copy()
    r_prime_values = np.broadcast_to(np.asarray(r_prime_values, dtype=float), theta.shape).copy()
    warning = bool(np.any(np.abs(theta) <= 1.05))
    if stability_budget is not None and order > stability_budget:
        warning = True

    tilde: dict[int, np.ndarray] = {}
    hat: dict[int, np.ndarray] = {}
    if kappa.kind == SYMMETRIC:
        step = theta
        tilde[1] = r_values
        for s in range(1, order):
            tilde[s + 1] = (tilde[s] - kappa.kappa_at(s)) * step
        hat[2] = r_prime_values
        for s in range(2, order):
            hat[s + 1] = (hat[s] - tilde[s]) * step
    else:
        step = theta ** 2
        tilde[1] = theta ** 2 * r_values
        for s in range(1, order):
            tilde[s + 1] = (tilde[s] - kappa.kappa_at(s)) * step
        hat[1] = r_prime_values
        for s in range(1, order):
            hat[s + 1] = (hat[s] - tilde[s]) * step
    return KappaSeriesTables(kind=kappa.kind, scale=theta, tilde=tilde, hat=hat, warning=warning)


def kappa_series_tables_direct(
    kappa: CumulantModel, scale, order: int, stability_budget: int | None = None
) -> KappaSeriesTables:
    """Tables by direct truncated summation of the defining series.

    Exact for laws with finitely many nonzero cumulants (semicircle, MP) and
    the preferred path in exact-cumulant mode, where it avoids the recursion's
    theta^s error growth.
    """
    theta = np.asarray(scale, dtype=float).reshape(-1)
    warning = bool(np.any(np.abs(theta) <= 1.05))
    if stability_budget is not None and order > stability_budget:
        warning = True
    tilde: dict[int, np.ndarray] = {}
    hat: dict[int, np.ndarray] = {}
    if kappa.kind == SYMMETRIC:
        z = 1.0 / theta
        for s in range(1, order + 1):
            tilde[s] = sum(
                kappa.kappa_at(j + s) * z ** j for j in range(kappa.order + 1)
            ) + np.zeros_like(theta)
            if s >= 2:
                hat[s] = sum(
                    (j + 1) * kappa.kappa_at(j + s) * z ** j for j in range(kappa.order + 1)
                ) + np.zeros_like(theta)
    else:
        z = 1.0 / theta ** 2
        for s in range(1, order + 1):
            tilde[s] = sum(
                kappa.kappa_at(j + s) * z ** j for j in range(kappa.order + 1)
            ) + np.zeros_like(theta)
            hat[s] = sum(
                (j + 1) * kappa.kappa_at(j + s) * z ** j for j in range(kappa.order + 1)
            ) + np.zeros_like(theta)
    return KappaSeriesTables(kind=kappa.kind, scale=theta, tilde=tilde, hat=hat, warning=warning)
