"""State-evolution parameter tracking.

Maintains the mean transformations and covariances describing the Gaussian
law of the stacked debiased iterates, assembled from empirical second-moment
ledgers, derivative matrices and weighted cumulant tables. The four-part
decomposition of the second-moment matrix separates the spectral
initialization block (which carries the weighted cumulant series) from the
posterior-mean iterates (which carry the plain cumulants).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .block_matrix import (
    BlockMatrix,
    DiagScaler,
    block_left_scale,
    block_right_scale,
    matrix_powers,
)
from .spectrum import SYMMETRIC, CumulantModel, KappaSeriesTables


class MaskViolationError(AssertionError):
    """A computation path read a structurally-undefined trailing block."""


@dataclass
class MomentLedger:
    """Empirical second-moment blocks, e.g. n^{-1} U_r^T U_s, symmetric as a table."""

    block_dim: int
    blocks: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)

    def set(self, r: int, s: int, value: np.ndarray) -> None:
        value = np.asarray(value, dtype=float)
        if value.shape != (self.block_dim, self.block_dim):
            raise ValueError("moment block has wrong shape")
        self.blocks[(r, s)] = value.copy()
        self.blocks[(s, r)] = value.T.copy()

    def get(self, r: int, s: int) -> np.ndarray:
        return self.blocks[(r, s)]

    def table(self, num_blocks: int, undefined_fill: float | None = None) -> BlockMatrix:
        """Dense table over blocks [0..num_blocks); missing blocks must be the
        structurally-undefined trailing ones and are filled with `undefined_fill`."""
        k = self.block_dim
        out = np.zeros((num_blocks * k, num_blocks * k))
        for r in range(num_blocks):
            for s in range(num_blocks):
                blk = self.blocks.get((r, s))
                if blk is None:
                    if undefined_fill is None:
                        raise KeyError(f"moment block ({r}, {s}) undefined")
                    blk = np.full((k, k), undefined_fill)
                out[r * k:(r + 1) * k, s * k:(s + 1) * k] = blk
        return BlockMatrix(out, k)


def decompose_delta(delta: BlockMatrix) -> tuple[BlockMatrix, BlockMatrix, BlockMatrix, BlockMatrix]:
    """Split into (bar, tilde, tilde^T, hat): interior, first-row, first-column
    and corner parts. The four parts sum to `delta` bit-exactly."""
    if not delta.is_square:
        raise ValueError("delta must be square")
    k = delta.block_dim
    bar = delta.data.copy()
    bar[:k, :] = 0.0
    bar[:, :k] = 0.0
    tilde = np.zeros_like(delta.data)
    tilde[:k, k:] = delta.data[:k, k:]
    tilde_t = np.zeros_like(delta.data)
    tilde_t[k:, :k] = delta.data[k:, :k]
    hat = np.zeros_like(delta.data)
    hat[:k, :k] = delta.data[:k, :k]
    return (
        BlockMatrix(bar, k),
        BlockMatrix(tilde, k),
        BlockMatrix(tilde_t, k),
        BlockMatrix(hat, k),
    )


def _weighted_delta(
    parts: tuple[BlockMatrix, BlockMatrix, BlockMatrix, BlockMatrix],
    kappa_scalar: float,
    tilde_diag: DiagScaler,
    hat_diag: DiagScaler,
) -> np.ndarray:
    """kappa * bar + tilde-weighted first row/column + hat-weighted corner."""
    bar, tilde, tilde_t, hat = parts
    out = kappa_scalar * bar.data
    if np.any(tilde_diag.entries != 0.0):
        out = out + block_left_scale(tilde, tilde_diag).data
        out = out + block_right_scale(tilde_t, tilde_diag).data
    if np.any(hat_diag.entries != 0.0):
        out = out + block_left_scale(hat, hat_diag).data
    return out


def se_sigma_sym(
    phi: BlockMatrix,
    delta: BlockMatrix,
    kappa: CumulantModel,
    tables: KappaSeriesTables,
) -> BlockMatrix:
    """Covariance of the stacked symmetric iterates.

    Sigma = sum_j Theta^(j)[phi, Delta^(j)] where Delta^(j) weights the
    four-part decomposition with kappa_{j+2}, kappa_tilde_{j+2} and
    kappa_hat_{j+2}. The j-sum is finite: phi is nilpotent, so orders beyond
    2(t) contribute exactly zero.
    """
    if tables.kind != SYMMETRIC or kappa.kind != SYMMETRIC:
        raise ValueError("symmetric inputs required")
    nb = phi.num_row_blocks
    k = phi.block_dim
    parts = decompose_delta(delta)
    pows = matrix_powers(phi.data, nb)
    out = np.zeros_like(delta.data)
    jmax = 2 * (nb - 1)
    for j in range(jmax + 1):
        mid = _weighted_delta(
            parts, kappa.kappa_at(j + 2), tables.tilde_at(j + 2), tables.hat_at(j + 2)
        )
        if not mid.any():
            continue
        for i in range(j + 1):
            if i >= len(pows) or j - i >= len(pows):
                continue
            out += pows[i] @ mid @ pows[j - i].T
    out = 0.5 * (out + out.T)
    return BlockMatrix(out, k)


def _rect_weighted(parts, kappa: CumulantModel, tables: KappaSeriesTables, j: int) -> np.ndarray:
    return _weighted_delta(
        parts, kappa.kappa_at(j + 1), tables.tilde_at(j + 1), tables.hat_at(j + 1)
    )


def _xi_theta_sum(
    a_mat: np.ndarray,
    b_mat: np.ndarray,
    mids_main: list[np.ndarray],
    mids_alt: list[np.ndarray],
    nb: int,
) -> np.ndarray:
    """sum_j Theta^(j)-style propagation with product chain (a b), main middle
    sandwiched directly and alt middle sandwiched with an extra a on each side."""
    prod_pows = matrix_powers(a_mat @ b_mat, nb)

    def pw(i):
        return prod_pows[i] if i < len(prod_pows) else None

    out = np.zeros((a_mat.shape[0], a_mat.shape[0]))
    jmax = len(mids_main) - 1
    for j in range(jmax + 1):
        main = mids_main[j]
        if main is not None and main.any():
            for i in range(j + 1):
                left, right = pw(i), pw(j - i)
                if left is None or right is None:
                    continue
                out += left @ main @ right.T
        alt = mids_alt[j]
        if alt is not None and alt.any():
            wrapped = a_mat @ alt @ a_mat.T
            for i in range(j):
                left, right = pw(i), pw(j - 1 - i)
                if left is None or right is None:
                    continue
                out += left @ wrapped @ right.T
    return out


def se_sigma_rect(
    phi: BlockMatrix,
    psi: BlockMatrix,
    delta: BlockMatrix,
    gamma_mat: BlockMatrix,
    kappa: CumulantModel,
    tables: KappaSeriesTables,
) -> BlockMatrix:
    """Covariance of the stacked left-side iterates:
    Sigma_t = sum_j Xi^(j)[phi, psi, Delta^(j), Gamma^(j)] (no gamma factor)."""
    nb = phi.num_row_blocks
    parts_d = decompose_delta(delta)
    parts_g = decompose_delta(gamma_mat)
    jmax = 2 * (nb - 1) + 1
    mids_g = [_rect_weighted(parts_g, kappa, tables, j) for j in range(jmax + 1)]
    mids_d = [_rect_weighted(parts_d, kappa, tables, j) for j in range(jmax + 1)]
    out = _xi_theta_sum(psi.data, phi.data, mids_g, mids_d, nb)
    return BlockMatrix(0.5 * (out + out.T), phi.block_dim)


def se_omega_rect(
    phi: BlockMatrix,
    psi: BlockMatrix,
    delta: BlockMatrix,
    gamma_mat: BlockMatrix,
    kappa: CumulantModel,
    tables: KappaSeriesTables,
    gamma: float,
) -> BlockMatrix:
    """Covariance of the stacked right-side iterates:
    Omega_{t+1} = gamma * sum_j Theta^(j)[phi, psi, Delta^(j), Gamma^(j)].

    The trailing row of psi and trailing row/column of gamma_mat may be
    structurally undefined; callers fill them with a sentinel and
    `se_omega_rect_checked` verifies they are never read.
    """
    nb = phi.num_row_blocks
    parts_d = decompose_delta(delta)
    parts_g = decompose_delta(gamma_mat)
    jmax = 2 * (nb - 1) + 1
    mids_d = [_rect_weighted(parts_d, kappa, tables, j) for j in range(jmax + 1)]
    mids_g = [_rect_weighted(parts_g, kappa, tables, j) for j in range(jmax + 1)]
    out = gamma * _xi_theta_sum(phi.data, psi.data, mids_d, mids_g, nb)
    return BlockMatrix(0.5 * (out + out.T), phi.block_dim)


def se_omega_rect_checked(
    phi: BlockMatrix,
    psi_fill,
    delta: BlockMatrix,
    gamma_fill,
    kappa: CumulantModel,
    tables: KappaSeriesTables,
    gamma: float,
) -> BlockMatrix:
    """Evaluate Omega with undefined trailing blocks filled two different ways
    and assert bit-identical output; the last column block of phi must be zero
    for the guarantee to hold, so any difference is a structural-mask bug.

    psi_fill / gamma_fill: callables fill -> BlockMatrix.
    """
    k = phi.block_dim
    last = (phi.num_col_blocks - 1) * k
    if phi.data[:, last:].any():
        raise MaskViolationError("last column block of phi must be zero")
    out0 = se_omega_rect(phi, psi_fill(0.0), delta, gamma_fill(0.0), kappa, tables, gamma)
    out1 = se_omega_rect(phi, psi_fill(1e9), delta, gamma_fill(1e9), kappa, tables, gamma)
    if not np.array_equal(out0.data, out1.data):
        raise MaskViolationError("undefined trailing blocks leaked into Omega")
    return out0


def se_sigma_omega_rect(
    phi: BlockMatrix,
    psi_fill,
    delta: BlockMatrix,
    gamma_fill,
    kappa: CumulantModel,
    tables: KappaSeriesTables,
    gamma: float,
) -> tuple[BlockMatrix, BlockMatrix]:
    """(Sigma_t, Omega_{t+1}) from (t+2)-block inputs whose trailing psi/Gamma
    blocks are undefined; Sigma_t is evaluated on the leading (t+1)-subgrid."""
    k = phi.block_dim
    sub = slice(0, (phi.num_row_blocks - 1) * k)
    phi_sub = BlockMatrix(phi.data[sub, sub], k)
    psi_sub = BlockMatrix(psi_fill(0.0).data[sub, sub], k)
    delta_sub = BlockMatrix(delta.data[sub, sub], k)
    gamma_sub = BlockMatrix(gamma_fill(0.0).data[sub, sub], k)
    sigma = se_sigma_rect(phi_sub, psi_sub, delta_sub, gamma_sub, kappa, tables)
    omega = se_omega_rect_checked(phi, psi_fill, delta, gamma_fill, kappa, tables, gamma)
    return sigma, omega


def se_sigma_sym_independent(
    phi: BlockMatrix, delta: BlockMatrix, kappa: CumulantModel
) -> BlockMatrix:
    """Independent-init covariance: Sigma_t = sum_j Theta^(j)[phi, kappa_{j+2} delta]."""
    nb = phi.num_row_blocks
    pows = matrix_powers(phi.data, nb)
    out = np.zeros_like(delta.data)
    for j in range(2 * (nb - 1) + 1):
        c = kappa.kappa_at(j + 2)
        if c == 0.0:
            continue
        mid = c * delta.data
        for i in range(j + 1):
            if i >= len(pows) or j - i >= len(pows):
                continue
            out += pows[i] @ mid @ pows[j - i].T
    return BlockMatrix(0.5 * (out + out.T), phi.block_dim)


def se_sigma_omega_rect_independent(
    phi: BlockMatrix,
    psi: BlockMatrix,
    delta: BlockMatrix,
    gamma_mat: BlockMatrix,
    kappa: CumulantModel,
    gamma: float,
) -> tuple[BlockMatrix, BlockMatrix]:
    """Independent-init (Sigma_t, Omega_t): plain kappa_{2(j+1)}-weighted
    alternating propagation, gamma factor on the Omega side."""
    nb = phi.num_row_blocks
    jmax = 2 * (nb - 1) + 1
    mids_d = [kappa.kappa_at(j + 1) * delta.data for j in range(jmax + 1)]
    mids_g = [kappa.kappa_at(j + 1) * gamma_mat.data for j in range(jmax + 1)]
    sigma = _xi_theta_sum(psi.data, phi.data, mids_g, mids_d, nb)
    omega = gamma * _xi_theta_sum(phi.data, psi.data, mids_d, mids_g, nb)
    k = phi.block_dim
    return (
        BlockMatrix(0.5 * (sigma + sigma.T), k),
        BlockMatrix(0.5 * (omega + omega.T), k),
    )


def se_mu_block(second_moment_block: np.ndarray, scale, mode: str, gamma: float | None = None) -> np.ndarray:
    """One mean-transformation block from a second-moment block.

    Empirical mode feeds the martingale identity E[U_t U_*^T] = E[U_t U_t^T]:
    sym:      mu_s = (U_s^T U_s / n) S
    rect mu:  mu_s = (V_s^T V_s / n) S / sqrt(gamma)
    rect nu:  nu_s = (U_s^T U_s / m) S sqrt(gamma)
    Exact mode passes the true cross-moment E[U_s U_*^T] as the block instead.
    """
    block = np.asarray(second_moment_block, dtype=float)
    s = np.asarray(scale, dtype=float).reshape(-1)
    if mode == "sym":
        return block * s[None, :]
    if mode == "rect_mu":
        return block * s[None, :] / np.sqrt(gamma)
    if mode == "rect_nu":
        return block * s[None, :] * np.sqrt(gamma)
    raise ValueError(f"unknown mode {mode!r}")


def check_early_stop(
    sigma: np.ndarray, threshold_ratio: float, block_dim: int | None = None, use_schur: bool = False
) -> bool:
    """True when the smallest eigenvalue of Sigma (or, optionally, of the
    trailing conditional-covariance Schur complement) drops below
    threshold_ratio * mean(diag Sigma)."""
    sigma = np.asarray(sigma, dtype=float)
    level = threshold_ratio * float(np.mean(np.diag(sigma)))
    if use_schur and block_dim is not None and sigma.shape[0] > block_dim:
        k = block_dim
        a = sigma[:-k, :-k]
        b = sigma[:-k, -k:]
        d = sigma[-k:, -k:]
        target = d - b.T @ np.linalg.solve(a + 1e-14 * np.eye(a.shape[0]), b)
    else:
        target = sigma
    return bool(np.linalg.eigvalsh(0.5 * (target + target.T))[0] < level)


@dataclass
class SEState:
    """Snapshot of the state-evolution parameters after iteration `iteration`."""

    iteration: int
    block_dim: int
    mu: np.ndarray                 # (t+1)K x K
    sigma: np.ndarray              # (t+1)K x (t+1)K
    nu: np.ndarray | None = None   # rectangular counterparts
    omega: np.ndarray | None = None

    def validate(self, atol_scale: float = 1e-8) -> None:
        for mat in (self.sigma, self.omega):
            if mat is None:
                continue
            if np.max(np.abs(mat - mat.T)) > atol_scale * max(1.0, np.max(np.abs(mat))):
                raise ValueError("covariance not symmetric")
            floor = -atol_scale * np.trace(mat) / mat.shape[0]
            if np.linalg.eigvalsh(mat)[0] < floor:
                raise ValueError("covariance has a significantly negative eigenvalue")

    def prefix_matches(self, previous: "SEState") -> bool:
        """Exact block equality of the shared leading blocks with the prior state."""
        d = previous.mu.shape[0]
        ok = np.array_equal(self.mu[:d], previous.mu) and np.array_equal(
            self.sigma[:d, :d], previous.sigma
        )
        if previous.nu is not None and self.nu is not None:
            dn = previous.nu.shape[0]
            ok = ok and np.array_equal(self.nu[:dn], previous.nu)
            ok = ok and np.array_equal(self.omega[:dn, :dn], previous.omega)
        return bool(ok)


def se_matrix_csv_rows(states: list[SEState], which: str = "sigma"):
    """Long-format rows (iter, row_block, col_block, i, j, value) for export."""
    for st in states:
        mat = getattr(st, which)
        if mat is None:
            continue
        mat = np.atleast_2d(mat)
        k = st.block_dim
        for rb in range(mat.shape[0] // k):
            for cb in range(max(1, mat.shape[1] // k)):
                for i in range(k):
                    for j in range(min(k, mat.shape[1])):
                        col = cb * k + j
                        if col >= mat.shape[1]:
                            continue
                        yield (st.iteration, rb, cb, i, j, mat[rb * k + i, col])


def write_se_csv(states: list[SEState], path, which: str = "sigma") -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iter", "row_block", "col_block", "i", "j", "value"])
        for row in se_matrix_csv_rows(states, which):
            writer.writerow([*row[:5], f"{row[5]:.17g}"])
