"""Causal LTI operators stored as finite impulse responses.

An operator ``T`` acts on sequences by ``y(n) = sum_k T(k) u(n - k)``; its
matrix form is the infinite block lower-triangular Toeplitz matrix built from
the coefficients ``T(0), T(1), ...``.  Coefficients are held as a single
``(N + 1, rows, cols)`` float array.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "FirOperator",
    "BlockOperator",
    "Signal",
    "OperatorError",
    "op_add",
    "op_mul",
    "op_delay",
    "op_inverse_truncated",
    "op_neumann_inverse",
    "norm_linf_induced",
    "op_apply",
    "block_assemble",
    "block_flatten",
    "split",
    "hstack",
    "vstack",
    "blockdiag",
]

EQ_ATOL = 1e-12
RCOND_MIN = 1e-10


class OperatorError(ValueError):
    """Raised on dimension mismatches and non-invertible operators."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class FirOperator:
    """Finite impulse response ``{T(0), ..., T(N)}`` of a causal LTI map."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim == 2:
            c = c[None]
        if c.ndim != 3 or c.shape[0] < 1:
            raise OperatorError(f"coefficients must have shape (N+1, rows, cols), got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise OperatorError("coefficients must be finite")
        object.__setattr__(self, "coeffs", _frozen(c))

    # constructors -------------------------------------------------------

    @classmethod
    def zeros(cls, rows: int, cols: int, order: int = 0) -> "FirOperator":
        return cls(np.zeros((order + 1, rows, cols)))

    @classmethod
    def identity(cls, n: int) -> "FirOperator":
        return cls(np.eye(n)[None])

    @classmethod
    def from_matrix(cls, m) -> "FirOperator":
        """Memoryless operator with the single coefficient ``m``."""
        return cls(np.atleast_2d(np.asarray(m, dtype=float))[None])

    @classmethod
    def from_list(cls, mats: Sequence) -> "FirOperator":
        return cls(np.stack([np.atleast_2d(np.asarray(m, dtype=float)) for m in mats]))

    # shape --------------------------------------------------------------

    @property
    def rows(self) -> int:
        return self.coeffs.shape[1]

    @property
    def cols(self) -> int:
        return self.coeffs.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.coeffs.shape[1], self.coeffs.shape[2]

    @property
    def order(self) -> int:
        """Largest stored lag ``N`` (trailing zeros included)."""
        return self.coeffs.shape[0] - 1

    def __len__(self) -> int:
        return self.coeffs.shape[0]

    def lag(self, k: int) -> np.ndarray:
        if 0 <= k < len(self):
            return self.coeffs[k]
        return np.zeros(self.shape)

    # value semantics ----------------------------------------------------

    def trim(self, atol: float = 0.0) -> "FirOperator":
        """Drop trailing coefficients whose entries are all ``<= atol``."""
        mags = np.abs(self.coeffs).reshape(len(self), -1)
        nz = np.nonzero(np.any(mags > atol, axis=1))[0]
        last = int(nz[-1]) if nz.size else 0
        return FirOperator(self.coeffs[: last + 1])

    def truncate(self, horizon: int) -> "FirOperator":
        """Keep lags ``0..horizon``."""
        if horizon < 0:
            raise OperatorError("horizon must be nonnegative")
        return FirOperator(self.coeffs[: horizon + 1])

    def padded(self, order: int) -> np.ndarray:
        """Coefficient array zero-padded (or cut) to lags ``0..order``."""
        out = np.zeros((order + 1,) + self.shape)
        k = min(order + 1, len(self))
        out[:k] = self.coeffs[:k]
        return out

    def equals(self, other: "FirOperator", atol: float = EQ_ATOL) -> bool:
        if self.shape != other.shape:
            return False
        n = max(len(self), len(other))
        return bool(np.all(np.abs(self.padded(n - 1) - other.padded(n - 1)) <= atol))

    def is_zero(self, atol: float = 0.0) -> bool:
        return bool(np.all(np.abs(self.coeffs) <= atol))

    def sub(self, rows: slice, cols: slice) -> "FirOperator":
        return FirOperator(self.coeffs[:, rows, cols])

    @property
    def T(self) -> "FirOperator":
        return FirOperator(np.transpose(self.coeffs, (0, 2, 1)))

    def norm(self) -> float:
        return norm_linf_induced(self)

    def __add__(self, other):
        if isinstance(other, FirOperator):
            return op_add(self, other)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, FirOperator):
            return op_add(self, -other)
        return NotImplemented

    def __neg__(self):
        return FirOperator(-self.coeffs)

    def __mul__(self, s):
        if np.isscalar(s):
            return FirOperator(self.coeffs * float(s))
        return NotImplemented

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, FirOperator):
            return op_mul(self, other)
        return NotImplemented

    def __repr__(self) -> str:
        return f"FirOperator({self.rows}x{self.cols}, order={self.order})"


def op_add(a: FirOperator, b: FirOperator) -> FirOperator:
    if a.shape != b.shape:
        raise OperatorError(f"cannot add {a.shape} and {b.shape} operators")
    n = max(len(a), len(b))
    return FirOperator(a.padded(n - 1) + b.padded(n - 1))


def _convolve(a: np.ndarray, b: np.ndarray, horizon: int | None = None) -> np.ndarray:
    na, nb = a.shape[0], b.shape[0]
    n = na + nb - 1 if horizon is None else min(na + nb - 1, horizon + 1)
    out = np.zeros((n, a.shape[1], b.shape[2]))
    for m in range(min(na, n)):
        if not a[m].any():
            continue
        k = min(nb, n - m)
        out[m : m + k] += np.einsum("ij,kjl->kil", a[m], b[:k])
    return out


def op_mul(a: FirOperator, b: FirOperator, horizon: int | None = None) -> FirOperator:
    """Composition ``a b``: ``(ab)(k) = sum_m a(m) b(k - m)``."""
    if a.cols != b.rows:
        raise OperatorError(f"cannot compose {a.shape} with {b.shape}")
    return FirOperator(_convolve(a.coeffs, b.coeffs, horizon))


def op_delay(a: FirOperator, k: int = 1) -> FirOperator:
    """``Lambda^k a``: shift the impulse response right by ``k`` samples."""
    if k < 0:
        raise OperatorError("delay must be nonnegative")
    return FirOperator(np.concatenate([np.zeros((k,) + a.shape), a.coeffs]))


def op_inverse_truncated(t: FirOperator, horizon: int, rcond_min: float = RCOND_MIN) -> FirOperator:
    """Impulse response of the causal inverse of ``t`` up to ``horizon``."""
    if t.rows != t.cols:
        raise OperatorError("only square operators can be inverted")
    t0 = t.lag(0)
    rc = 1.0 / np.linalg.cond(t0) if t.rows else 1.0
    if not np.isfinite(rc) or rc < rcond_min:
        raise OperatorError(f"lag-0 coefficient is singular or ill-conditioned (rcond={rc:.3g})")
    t0inv = np.linalg.inv(t0)
    s = np.zeros((horizon + 1, t.rows, t.rows))
    s[0] = t0inv
    for k in range(1, horizon + 1):
        acc = np.zeros((t.rows, t.rows))
        for m in range(1, min(k, t.order) + 1):
            acc += t.coeffs[m] @ s[k - m]
        s[k] = -t0inv @ acc
    return FirOperator(s)


def op_neumann_inverse(e: FirOperator, horizon: int, tol: float = 1e-9,
                       max_terms: int = 10_000) -> tuple[FirOperator, float]:
    """Truncated ``(I - e)^{-1} = sum_j e^j`` for a contraction ``e``.

    Returns the partial sum (lags ``0..horizon``) and the bound
    ``eps^(J+1) / (1 - eps)`` on the induced norm of the omitted powers.
    """
    if e.rows != e.cols:
        raise OperatorError("only square operators can be inverted")
    eps = norm_linf_induced(e)
    if eps >= 1.0:
        raise OperatorError(f"small-gain condition violated: ||e|| = {eps:.6g} >= 1")
    total = np.zeros((horizon + 1, e.rows, e.rows))
    total[0] = np.eye(e.rows)
    if eps == 0.0:
        return FirOperator(total), 0.0
    ec = e.coeffs[: horizon + 1]
    power = total[:1].copy()
    j, tail = 0, eps / (1.0 - eps)
    while tail > tol and j < max_terms:
        power = _convolve(power, ec, horizon)
        j += 1
        total[: power.shape[0]] += power
        tail = eps ** (j + 1) / (1.0 - eps)
        if not power.any():
            break
    return FirOperator(total), float(tail)


def norm_linf_induced(t: FirOperator) -> float:
    """l-infinity induced gain: the largest absolute row sum over all lags."""
    if t.rows == 0 or t.cols == 0:
        return 0.0
    return float(np.abs(t.coeffs).sum(axis=(0, 2)).max())


@dataclass(frozen=True, eq=False)
class Signal:
    """Finite vector sequence ``s(0), ..., s(T)`` stored as ``(T + 1, dim)``."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2:
            raise OperatorError("signal samples must be a (length, dim) array")
        object.__setattr__(self, "samples", _frozen(s))

    @classmethod
    def zeros(cls, dim: int, length: int) -> "Signal":
        return cls(np.zeros((length, dim)))

    @classmethod
    def impulse(cls, dim: int, length: int, index: int = 0, at: int = 0) -> "Signal":
        s = np.zeros((length, dim))
        s[at, index] = 1.0
        return cls(s)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def __len__(self) -> int:
        return self.samples.shape[0]

    def sup_norm(self) -> float:
        return float(np.abs(self.samples).max()) if self.samples.size else 0.0


def op_apply(t: FirOperator, u: Signal | np.ndarray) -> Signal:
    """``y(n) = sum_{k <= min(n, N)} T(k) u(n - k)``, same length as ``u``."""
    us = u.samples if isinstance(u, Signal) else np.atleast_2d(np.asarray(u, dtype=float))
    if us.shape[1] != t.cols:
        raise OperatorError(f"operator takes {t.cols} inputs, signal has dim {us.shape[1]}")
    n = us.shape[0]
    y = np.zeros((n, t.rows))
    for k in range(min(len(t), n)):
        if t.coeffs[k].any():
            y[k:] += us[: n - k] @ t.coeffs[k].T
    return Signal(y)


@dataclass(frozen=True, eq=False)
class BlockOperator:
    """Grid of FIR blocks with row heights and column widths."""

    row_partition: tuple[int, ...]
    col_partition: tuple[int, ...]
    blocks: tuple[tuple[FirOperator, ...], ...] = field(repr=False)

    def __post_init__(self):
        rp, cp = tuple(int(r) for r in self.row_partition), tuple(int(c) for c in self.col_partition)
        grid = tuple(tuple(row) for row in self.blocks)
        if len(grid) != len(rp) or any(len(row) != len(cp) for row in grid):
            raise OperatorError("block grid shape does not match partitions")
        for i, row in enumerate(grid):
            for j, b in enumerate(row):
                if b.shape != (rp[i], cp[j]):
                    raise OperatorError(f"block ({i},{j}) is {b.shape}, expected {(rp[i], cp[j])}")
        object.__setattr__(self, "row_partition", rp)
        object.__setattr__(self, "col_partition", cp)
        object.__setattr__(self, "blocks", grid)

    def __getitem__(self, ij: tuple[int, int]) -> FirOperator:
        i, j = ij
        return self.blocks[i][j]

    @property
    def shape(self) -> tuple[int, int]:
        return sum(self.row_partition), sum(self.col_partition)

    def flatten(self) -> FirOperator:
        return block_flatten(self)

    def equals(self, other: "BlockOperator", atol: float = EQ_ATOL) -> bool:
        return (self.row_partition == other.row_partition
                and self.col_partition == other.col_partition
                and self.flatten().equals(other.flatten(), atol))


def block_assemble(grid, row_partition=None, col_partition=None) -> BlockOperator:
    """Build a BlockOperator; partitions default to the block shapes."""
    grid = [list(row) for row in grid]
    if row_partition is None:
        row_partition = [row[0].rows for row in grid]
    if col_partition is None:
        col_partition = [b.cols for b in grid[0]]
    return BlockOperator(tuple(row_partition), tuple(col_partition), tuple(tuple(r) for r in grid))


def block_flatten(b: BlockOperator) -> FirOperator:
    order = max(blk.order for row in b.blocks for blk in row) if b.blocks else 0
    out = np.zeros((order + 1,) + b.shape)
    r0 = 0
    for i, h in enumerate(b.row_partition):
        c0 = 0
        for j, w in enumerate(b.col_partition):
            blk = b.blocks[i][j]
            out[: len(blk), r0 : r0 + h, c0 : c0 + w] = blk.coeffs
            c0 += w
        r0 += h
    return FirOperator(out)


def split(t: FirOperator, row_partition, col_partition) -> BlockOperator:
    """Inverse of :func:`block_flatten`."""
    if (sum(row_partition), sum(col_partition)) != t.shape:
        raise OperatorError("partitions do not match operator shape")
    ro = np.concatenate([[0], np.cumsum(row_partition)]).astype(int)
    co = np.concatenate([[0], np.cumsum(col_partition)]).astype(int)
    grid = [[t.sub(slice(ro[i], ro[i + 1]), slice(co[j], co[j + 1]))
             for j in range(len(col_partition))] for i in range(len(row_partition))]
    return BlockOperator(tuple(row_partition), tuple(col_partition), tuple(tuple(r) for r in grid))


def hstack(ops: Sequence[FirOperator]) -> FirOperator:
    return block_flatten(block_assemble([list(ops)]))


def vstack(ops: Sequence[FirOperator]) -> FirOperator:
    return block_flatten(block_assemble([[o] for o in ops]))


def blockdiag(ops: Sequence[FirOperator]) -> FirOperator:
    grid = [[o if i == j else FirOperator.zeros(o.rows, p.cols) for j, p in enumerate(ops)]
            for i, o in enumerate(ops)]
    return block_flatten(block_assemble(grid))
