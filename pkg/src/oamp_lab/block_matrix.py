"""Dense block-structured matrix algebra.

Everything downstream (debiasing coefficient tables, state-evolution
covariances) is built from T x T grids of K x K blocks, block-wise diagonal
scalings, and truncated power series of block-lower-triangular matrices.
Blocks are stored as one dense row-major array; at desk scale (T <= ~50,
K <= ~4) nothing fancier is warranted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class BlockShapeError(ValueError):
    """Dimension or block-structure mismatch."""


@dataclass(frozen=True)
class DiagScaler:
    """A diagonal K x K matrix, stored as its diagonal entries."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float).reshape(-1).copy()
        if e.size == 0 or not np.all(np.isfinite(e)):
            raise ValueError("DiagScaler entries must be finite and non-empty")
        e.flags.writeable = False
        object.__setattr__(self, "entries", e)

    @property
    def block_dim(self) -> int:
        return self.entries.size

    def as_matrix(self) -> np.ndarray:
        return np.diag(self.entries)


class BlockMatrix:
    """A (T_r * K) x (T_c * K) matrix viewed as a T_r x T_c grid of K x K blocks.

    Instances are immutable after construction; build varying contents with
    `from_blocks` or operate on copies of `.data`.
    """

    __slots__ = ("data", "num_row_blocks", "num_col_blocks", "block_dim")

    def __init__(self, data: np.ndarray, block_dim: int):
        data = np.array(data, dtype=float)
        if data.ndim != 2:
            raise BlockShapeError("BlockMatrix data must be 2-d")
        if block_dim < 1:
            raise BlockShapeError("block_dim must be >= 1")
        rows, cols = data.shape
        if rows % block_dim or cols % block_dim:
            raise BlockShapeError(
                f"shape {data.shape} is not a multiple of block_dim={block_dim}"
            )
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "num_row_blocks", rows // block_dim)
        object.__setattr__(self, "num_col_blocks", cols // block_dim)
        object.__setattr__(self, "block_dim", block_dim)

    def __setattr__(self, name, value):
        raise AttributeError("BlockMatrix is immutable")

    @classmethod
    def zeros(cls, num_row_blocks: int, num_col_blocks: int, block_dim: int) -> "BlockMatrix":
        return cls(np.zeros((num_row_blocks * block_dim, num_col_blocks * block_dim)), block_dim)

    @classmethod
    def identity(cls, num_blocks: int, block_dim: int) -> "BlockMatrix":
        return cls(np.eye(num_blocks * block_dim), block_dim)

    @classmethod
    def from_blocks(
        cls,
        blocks: dict[tuple[int, int], np.ndarray],
        num_row_blocks: int,
        num_col_blocks: int,
        block_dim: int,
    ) -> "BlockMatrix":
        out = np.zeros((num_row_blocks * block_dim, num_col_blocks * block_dim))
        k = block_dim
        for (r, c), blk in blocks.items():
            if not (0 <= r < num_row_blocks and 0 <= c < num_col_blocks):
                raise BlockShapeError(f"block index {(r, c)} out of range")
            blk = np.asarray(blk, dtype=float)
            if blk.shape != (k, k):
                raise BlockShapeError(f"block {(r, c)} has shape {blk.shape}, want {(k, k)}")
            out[r * k:(r + 1) * k, c * k:(c + 1) * k] = blk
        return cls(out, block_dim)

    def block(self, r: int, c: int) -> np.ndarray:
        k = self.block_dim
        if not (0 <= r < self.num_row_blocks and 0 <= c < self.num_col_blocks):
            raise BlockShapeError(f"block index {(r, c)} out of range")
        return self.data[r * k:(r + 1) * k, c * k:(c + 1) * k]

    @property
    def is_square(self) -> bool:
        return self.num_row_blocks == self.num_col_blocks

    @property
    def T(self) -> "BlockMatrix":
        return BlockMatrix(self.data.T.copy(), self.block_dim)

    def __matmul__(self, other: "BlockMatrix") -> "BlockMatrix":
        if self.block_dim != other.block_dim or self.num_col_blocks != other.num_row_blocks:
            raise BlockShapeError("block-matrix product dimension mismatch")
        return BlockMatrix(self.data @ other.data, self.block_dim)

    def __add__(self, other: "BlockMatrix") -> "BlockMatrix":
        if self.data.shape != other.data.shape or self.block_dim != other.block_dim:
            raise BlockShapeError("block-matrix sum dimension mismatch")
        return BlockMatrix(self.data + other.data, self.block_dim)

    def scaled(self, c: float) -> "BlockMatrix":
        return BlockMatrix(c * self.data, self.block_dim)

    def is_strictly_block_lower(self, tol: float = 0.0) -> bool:
        """True if every block [r, c] with c >= r vanishes (|entry| <= tol)."""
        for r in range(self.num_row_blocks):
            for c in range(r, self.num_col_blocks):
                if np.max(np.abs(self.block(r, c))) > tol:
                    return False
        return True

    def is_block_lower(self, tol: float = 0.0) -> bool:
        for r in range(self.num_row_blocks):
            for c in range(r + 1, self.num_col_blocks):
                if np.max(np.abs(self.block(r, c))) > tol:
                    return False
        return True

    def __repr__(self):
        return (
            f"BlockMatrix({self.num_row_blocks}x{self.num_col_blocks} blocks of "
            f"{self.block_dim}x{self.block_dim})"
        )


def block_right_scale(m: BlockMatrix, d: DiagScaler) -> BlockMatrix:
    """Right-multiply every block of `m` by diag(d).

    Equivalent to scaling global column c*K+j by d_j, so it is a single
    elementwise multiply on the dense storage.
    """
    if d.block_dim != m.block_dim:
        raise BlockShapeError("scaler dimension does not match block_dim")
    scale = np.tile(d.entries, m.num_col_blocks)
    return BlockMatrix(m.data * scale[None, :], m.block_dim)


def block_left_scale(m: BlockMatrix, d: DiagScaler) -> BlockMatrix:
    """Left-multiply every block of `m` by diag(d)."""
    if d.block_dim != m.block_dim:
        raise BlockShapeError("scaler dimension does not match block_dim")
    scale = np.tile(d.entries, m.num_row_blocks)
    return BlockMatrix(m.data * scale[:, None], m.block_dim)


def block_power_series(a: BlockMatrix, coeffs) -> BlockMatrix:
    """Evaluate sum_j coeffs[j] * a^j with a^0 = Id.

    Stops early once a^j is exactly the zero matrix, which happens at
    j = T for a strictly block-lower-triangular T-block matrix; the
    remaining terms are then exactly zero.
    """
    if not a.is_square:
        raise BlockShapeError("power series needs a square matrix")
    coeffs = [float(c) for c in coeffs]
    n = a.data.shape[0]
    out = np.zeros((n, n))
    power = np.eye(n)
    for c in coeffs:
        if c != 0.0:
            out += c * power
        power = power @ a.data
        if not power.any():
            break
    return BlockMatrix(out, a.block_dim)


def matrix_powers(a: np.ndarray, max_power: int) -> list[np.ndarray]:
    """[Id, a, a^2, ..., a^max_power], stopping early at an exact zero power."""
    powers = [np.eye(a.shape[0])]
    for _ in range(max_power):
        nxt = powers[-1] @ a
        powers.append(nxt)
        if not nxt.any():
            break
    return powers


def theta_sym(phi: BlockMatrix, m: BlockMatrix, j: int) -> BlockMatrix:
    """sum_{i=0}^{j} phi^i m (phi^T)^{j-i}."""
    if not (phi.is_square and m.is_square) or phi.data.shape != m.data.shape:
        raise BlockShapeError("theta_sym needs square matrices of equal shape")
    if j < 0:
        raise ValueError("j must be >= 0")
    pows = matrix_powers(phi.data, j)
    out = np.zeros_like(m.data)
    for i in range(j + 1):
        left = pows[i] if i < len(pows) else None
        right = pows[j - i] if j - i < len(pows) else None
        if left is None or right is None:
            continue
        out += left @ m.data @ right.T
    return BlockMatrix(out, phi.block_dim)


def theta_rect(
    phi: BlockMatrix,
    psi: BlockMatrix,
    m_delta: BlockMatrix,
    m_gamma: BlockMatrix,
    j: int,
) -> BlockMatrix:
    """Order-j two-sided propagation with alternating phi/psi factors.

    sum_{i=0}^{j} (phi psi)^i m_delta (psi^T phi^T)^{j-i}
    + sum_{i=0}^{j-1} (phi psi)^i phi m_gamma phi^T (psi^T phi^T)^{j-1-i};
    the second sum is empty at j = 0.
    """
    shapes = {phi.data.shape, psi.data.shape, m_delta.data.shape, m_gamma.data.shape}
    if len(shapes) != 1 or not phi.is_square:
        raise BlockShapeError("theta_rect needs square matrices of equal shape")
    if j < 0:
        raise ValueError("j must be >= 0")
    prod = phi.data @ psi.data
    pows = matrix_powers(prod, j)

    def pw(i):
        return pows[i] if i < len(pows) else None

    out = np.zeros_like(m_delta.data)
    for i in range(j + 1):
        left, right = pw(i), pw(j - i)
        if left is None or right is None:
            continue
        out += left @ m_delta.data @ right.T
    mid = phi.data @ m_gamma.data @ phi.data.T
    for i in range(j):
        left, right = pw(i), pw(j - 1 - i)
        if left is None or right is None:
            continue
        out += left @ mid @ right.T
    return BlockMatrix(out, phi.block_dim)


def xi_rect(
    phi: BlockMatrix,
    psi: BlockMatrix,
    m_delta: BlockMatrix,
    m_gamma: BlockMatrix,
    j: int,
) -> BlockMatrix:
    """theta_rect with the roles of (phi, psi) and (m_delta, m_gamma) swapped."""
    return theta_rect(psi, phi, m_gamma, m_delta, j)
