"""Onsager debiasing coefficient tables.

Four families: symmetric/rectangular x independent/spectral initialization.
Each is a finite matrix power series in the block-lower-triangular ledger of
averaged denoiser Jacobians; the spectral-init variants additionally scale
the column-0 blocks with the signal-strength-weighted cumulant tables.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .block_matrix import BlockMatrix, DiagScaler, block_right_scale, matrix_powers
from .spectrum import SYMMETRIC, CumulantModel, KappaSeriesTables

SYM_INDEPENDENT = "sym_independent"
SYM_SPECTRAL = "sym_spectral"
RECT_INDEPENDENT_PHI = "rect_independent_phi"
RECT_INDEPENDENT_PSI = "rect_independent_psi"
RECT_SPECTRAL_PHI = "rect_spectral_phi"
RECT_SPECTRAL_PSI = "rect_spectral_psi"


@dataclass
class DerivativeLedger:
    """Averaged Jacobian blocks <d_s U_r> (or <d_s V_r>) keyed by (r, s).

    The spectral-init rectangular layout carries fixed convention blocks
    (S_u^{-1} at phi[1,0], S_v^{-1} at psi[0,0]); those are injected by the
    assemblers, not stored here.
    """

    block_dim: int
    entries: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)

    def set(self, r: int, s: int, block: np.ndarray) -> None:
        block = np.asarray(block, dtype=float)
        if block.shape != (self.block_dim, self.block_dim):
            raise ValueError(f"block {(r, s)} has shape {block.shape}")
        self.entries[(r, s)] = block.copy()

    def get(self, r: int, s: int) -> np.ndarray | None:
        return self.entries.get((r, s))


def assemble_phi(
    ledger: DerivativeLedger,
    t: int,
    layout: str,
    s_u_inv: DiagScaler | None = None,
) -> BlockMatrix:
    """The u-side derivative matrix for iterations up to t.

    Independent init: T x T blocks over iterates 1..T (stored 0-based),
    strictly lower. Spectral init: (T+1) x (T+1) blocks indexed from 0;
    the rectangular layout fixes S_u^{-1} at block [1, 0].
    """
    k = ledger.block_dim
    if layout == SYM_INDEPENDENT or layout == RECT_INDEPENDENT_PHI:
        nb = t
        blocks = {}
        for r in range(nb):
            for s in range(r):
                blk = ledger.get(r, s)
                if blk is None:
                    raise KeyError(f"missing derivative block ({r}, {s})")
                blocks[(r, s)] = blk
        return BlockMatrix.from_blocks(blocks, nb, nb, k)
    if layout == SYM_SPECTRAL:
        nb = t + 1
        blocks = {}
        for r in range(1, nb):
            for s in range(r):
                blk = ledger.get(r, s)
                if blk is None:
                    raise KeyError(f"missing derivative block ({r}, {s})")
                blocks[(r, s)] = blk
        return BlockMatrix.from_blocks(blocks, nb, nb, k)
    if layout == RECT_SPECTRAL_PHI:
        if s_u_inv is None:
            raise ValueError("rect spectral phi needs S_u^{-1}")
        nb = t + 1
        blocks = {}
        if nb > 1:
            blocks[(1, 0)] = s_u_inv.as_matrix()
        for r in range(2, nb):
            for s in range(r):
                blk = ledger.get(r, s)
                if blk is None:
                    raise KeyError(f"missing derivative block ({r}, {s})")
                blocks[(r, s)] = blk
        return BlockMatrix.from_blocks(blocks, nb, nb, k)
    raise ValueError(f"unknown phi layout {layout!r}")


def assemble_psi(
    ledger: DerivativeLedger,
    t: int,
    layout: str,
    s_v_inv: DiagScaler | None = None,
    defined_rows: int | None = None,
) -> BlockMatrix:
    """The v-side derivative matrix (lower-triangular including the diagonal).

    Spectral init: S_v^{-1} at block [0, 0], column 0 zero for rows >= 1 (the
    v-denoisers never see the duplicated initial iterate), rows 1..t from the
    ledger. Rows beyond `defined_rows` are left zero: they correspond to
    not-yet-computed iterates, and every series consuming psi multiplies them
    by zero blocks of phi.
    """
    k = ledger.block_dim
    if layout == RECT_INDEPENDENT_PSI:
        nb = t
        limit = nb if defined_rows is None else defined_rows
        blocks = {}
        for r in range(limit):
            for s in range(r + 1):
                blk = ledger.get(r, s)
                if blk is None:
                    raise KeyError(f"missing derivative block ({r}, {s})")
                blocks[(r, s)] = blk
        return BlockMatrix.from_blocks(blocks, nb, nb, k)
    if layout == RECT_SPECTRAL_PSI:
        if s_v_inv is None:
            raise ValueError("rect spectral psi needs S_v^{-1}")
        nb = t + 1
        limit = nb if defined_rows is None else defined_rows
        blocks = {(0, 0): s_v_inv.as_matrix()}
        for r in range(1, limit):
            for s in range(1, r + 1):
                blk = ledger.get(r, s)
                if blk is None:
                    raise KeyError(f"missing derivative block ({r}, {s})")
                blocks[(r, s)] = blk
        return BlockMatrix.from_blocks(blocks, nb, nb, k)
    raise ValueError(f"unknown psi layout {layout!r}")


def _series_blocks(
    factors: list[np.ndarray],
    coeff_scalar,
    coeff_diag,
    block_dim: int,
) -> tuple[BlockMatrix, BlockMatrix]:
    """(plain series, column-0-weighted series) for terms factors[j] at order j.

    plain = sum_j coeff_scalar(j) * factors[j];
    weighted = sum_j factors[j] with every block right-scaled by coeff_diag(j).
    Series stop at the exact-zero factor (nilpotency).
    """
    n = factors[0].shape[0]
    plain = np.zeros((n, n))
    weighted = np.zeros((n, n))
    for j, fac in enumerate(factors):
        if not fac.any() and j > 0:
            break
        c = coeff_scalar(j)
        if c != 0.0:
            plain += c * fac
        d = coeff_diag(j)
        if np.any(d != 0.0):
            weighted += block_right_scale(BlockMatrix(fac, block_dim), DiagScaler(d)).data
    return BlockMatrix(plain, block_dim), BlockMatrix(weighted, block_dim)


@dataclass(frozen=True)
class DebiasTable:
    """Debiasing coefficients b_{ts} (or a_{ts}) as a block table."""

    table: BlockMatrix

    def coeff(self, t: int, s: int) -> np.ndarray:
        return self.table.block(t, s)

    def row(self, t: int) -> list[np.ndarray]:
        return [self.table.block(t, s) for s in range(t + 1)]


def debias_sym_independent(phi: BlockMatrix, kappa: CumulantModel) -> DebiasTable:
    """b_T = sum_j kappa_{j+1} phi^j; diagonal blocks are kappa_1 Id."""
    if not phi.is_strictly_block_lower():
        raise ValueError("phi must be strictly block-lower-triangular")
    nb = phi.num_row_blocks
    pows = matrix_powers(phi.data, nb)
    plain, _ = _series_blocks(
        pows,
        lambda j: kappa.kappa_at(j + 1),
        lambda j: np.zeros(phi.block_dim),
        phi.block_dim,
    )
    return DebiasTable(table=plain)


def debias_sym_spectral(
    phi: BlockMatrix, kappa: CumulantModel, tables: KappaSeriesTables
) -> DebiasTable:
    """Spectral-init coefficients: column 0 from the kappa_tilde-weighted series,
    all other columns from the plain cumulant series."""
    if not phi.is_strictly_block_lower():
        raise ValueError("phi must be strictly block-lower-triangular")
    if tables.kind != SYMMETRIC:
        raise ValueError("symmetric tables required")
    nb = phi.num_row_blocks
    pows = matrix_powers(phi.data, nb)
    plain, weighted = _series_blocks(
        pows,
        lambda j: kappa.kappa_at(j + 1),
        lambda j: tables.tilde_at(j + 1).entries,
        phi.block_dim,
    )
    out = plain.data.copy()
    k = phi.block_dim
    out[:, :k] = weighted.data[:, :k]
    return DebiasTable(table=BlockMatrix(out, k))


def debias_rect_independent(
    phi: BlockMatrix, psi: BlockMatrix, kappa: CumulantModel, gamma: float
) -> tuple[DebiasTable, DebiasTable]:
    """a_T = sum_j kappa_{2(j+1)} psi (phi psi)^j,
    b_T = gamma sum_j kappa_{2(j+1)} phi (psi phi)^j."""
    if not phi.is_strictly_block_lower():
        raise ValueError("phi must be strictly block-lower-triangular")
    if not psi.is_block_lower():
        raise ValueError("psi must be block-lower-triangular")
    nb = phi.num_row_blocks
    k = phi.block_dim
    phi_psi = matrix_powers(phi.data @ psi.data, nb)
    psi_phi = matrix_powers(psi.data @ phi.data, nb)
    a_factors = [psi.data @ p for p in phi_psi]
    b_factors = [phi.data @ p for p in psi_phi]
    a_plain, _ = _series_blocks(
        a_factors, lambda j: kappa.kappa_at(j + 1), lambda j: np.zeros(k), k
    )
    b_plain, _ = _series_blocks(
        b_factors, lambda j: gamma * kappa.kappa_at(j + 1), lambda j: np.zeros(k), k
    )
    return DebiasTable(a_plain), DebiasTable(b_plain)


def debias_rect_spectral(
    phi: BlockMatrix,
    psi: BlockMatrix,
    kappa: CumulantModel,
    tables: KappaSeriesTables,
    gamma: float,
) -> tuple[DebiasTable, DebiasTable]:
    """Rectangular spectral-init coefficients; column 0 carries the
    kappa_tilde_{2(j+1)}-weighted series, with the gamma factor on the b side."""
    if tables.kind == SYMMETRIC:
        raise ValueError("rectangular tables required")
    nb = phi.num_row_blocks
    k = phi.block_dim
    phi_psi = matrix_powers(phi.data @ psi.data, nb)
    psi_phi = matrix_powers(psi.data @ phi.data, nb)
    a_factors = [psi.data @ p for p in phi_psi]
    b_factors = [phi.data @ p for p in psi_phi]
    a_plain, a_weighted = _series_blocks(
        a_factors,
        lambda j: kappa.kappa_at(j + 1),
        lambda j: tables.tilde_at(j + 1).entries,
        k,
    )
    b_plain, b_weighted = _series_blocks(
        b_factors,
        lambda j: gamma * kappa.kappa_at(j + 1),
        lambda j: gamma * tables.tilde_at(j + 1).entries,
        k,
    )
    a_out = a_plain.data.copy()
    a_out[:, :k] = a_weighted.data[:, :k]
    b_out = b_plain.data.copy()
    b_out[:, :k] = b_weighted.data[:, :k]
    return DebiasTable(BlockMatrix(a_out, k)), DebiasTable(BlockMatrix(b_out, k))
