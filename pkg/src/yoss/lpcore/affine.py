"""FIR operators that depend affinely on masked decision coefficients.

An :class:`AffineFir` stores a constant impulse response ``const`` of shape
``(K, rows, cols)`` and a dense coefficient tensor ``lin`` of shape
``(K, rows, cols, nv)``; its value at a decision vector ``v`` is
``const + lin @ v``.  Decision variables are FIR blocks whose entry ``(i, j)``
is free only at lags ``min_lag[i, j] .. order`` (entries with an infinite
minimum lag are absent altogether).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..oplib import FirOperator, OperatorError

__all__ = ["FirVariable", "VariableSpace", "AffineFir"]


@dataclass(frozen=True, eq=False)
class FirVariable:
    """A masked FIR decision block; ``index[k, i, j]`` is its slot or -1."""

    name: str
    index: np.ndarray

    @property
    def rows(self) -> int:
        return self.index.shape[1]

    @property
    def cols(self) -> int:
        return self.index.shape[2]

    @property
    def order(self) -> int:
        return self.index.shape[0] - 1

    @property
    def size(self) -> int:
        return int((self.index >= 0).sum())

    def value(self, v: np.ndarray) -> FirOperator:
        out = np.zeros(self.index.shape)
        used = self.index >= 0
        out[used] = v[self.index[used]]
        return FirOperator(out)


class VariableSpace:
    """Allocates global slots for the coefficients of masked FIR variables."""

    def __init__(self):
        self.variables: dict[str, FirVariable] = {}
        self.size = 0

    def add(self, name: str, rows: int, cols: int, order: int, min_lag=0) -> tuple[FirVariable, "AffineFir"]:
        """Create ``name`` with free coefficients at lags ``min_lag .. order``.

        ``min_lag`` is a scalar or a ``(rows, cols)`` array (``inf`` = absent).
        """
        if name in self.variables:
            raise ValueError(f"variable {name!r} already defined")
        if order < 0:
            raise ValueError("variable order must be nonnegative")
        lags = np.broadcast_to(np.asarray(min_lag, dtype=float), (rows, cols))
        free = np.arange(order + 1)[:, None, None] >= lags[None]
        index = np.full((order + 1, rows, cols), -1, dtype=int)
        count = int(free.sum())
        index[free] = np.arange(self.size, self.size + count)
        self.size += count
        var = FirVariable(name, index)
        self.variables[name] = var
        return var, AffineFir.of_variable(var, self.size)

    def values(self, v: np.ndarray) -> dict[str, FirOperator]:
        return {name: var.value(v) for name, var in self.variables.items()}


class AffineFir:
    def __init__(self, const: np.ndarray, lin: np.ndarray):
        const = np.asarray(const, dtype=float)
        lin = np.asarray(lin, dtype=float)
        if const.ndim != 3 or lin.ndim != 4 or lin.shape[:3] != const.shape:
            raise OperatorError(f"inconsistent affine FIR shapes {const.shape} and {lin.shape}")
        self.const = const
        self.lin = lin

    # constructors -------------------------------------------------------

    @classmethod
    def constant(cls, t: FirOperator, nv: int = 0) -> "AffineFir":
        return cls(t.coeffs.copy(), np.zeros(t.coeffs.shape + (nv,)))

    @classmethod
    def of_variable(cls, var: FirVariable, nv: int) -> "AffineFir":
        lin = np.zeros(var.index.shape + (nv,))
        k, i, j = np.nonzero(var.index >= 0)
        lin[k, i, j, var.index[k, i, j]] = 1.0
        return cls(np.zeros(var.index.shape), lin)

    @staticmethod
    def lift(x, nv: int | None = None) -> "AffineFir":
        if isinstance(x, AffineFir):
            return x
        if isinstance(x, FirOperator):
            return AffineFir.constant(x, nv or 0)
        raise TypeError(f"cannot use {type(x).__name__} as an affine FIR expression")

    # shape --------------------------------------------------------------

    @property
    def shape(self) -> tuple[int, int]:
        return self.const.shape[1], self.const.shape[2]

    @property
    def rows(self) -> int:
        return self.const.shape[1]

    @property
    def cols(self) -> int:
        return self.const.shape[2]

    @property
    def nv(self) -> int:
        return self.lin.shape[3]

    def __len__(self) -> int:
        return self.const.shape[0]

    def degree(self) -> int:
        """Largest lag with a nonzero constant or decision coefficient (0 if none)."""
        mags = np.abs(self.const).reshape(len(self), -1).sum(axis=1)
        mags = mags + np.abs(self.lin).reshape(len(self), -1).sum(axis=1)
        nz = np.flatnonzero(mags)
        return int(nz[-1]) if nz.size else 0

    def with_nv(self, nv: int) -> "AffineFir":
        if nv == self.nv:
            return self
        if nv < self.nv:
            raise ValueError("cannot drop decision slots")
        pad = np.zeros(self.const.shape + (nv - self.nv,))
        return AffineFir(self.const, np.concatenate([self.lin, pad], axis=3))

    def with_length(self, K: int) -> "AffineFir":
        if K == len(self):
            return self
        if K < len(self):
            return AffineFir(self.const[:K], self.lin[:K])
        c = np.zeros((K,) + self.const.shape[1:])
        ln = np.zeros((K,) + self.lin.shape[1:])
        c[: len(self)] = self.const
        ln[: len(self)] = self.lin
        return AffineFir(c, ln)

    def trimmed(self) -> "AffineFir":
        return self.with_length(self.degree() + 1)

    def truncate(self, horizon: int) -> "AffineFir":
        return self.with_length(min(len(self), horizon + 1))

    # algebra ------------------------------------------------------------

    def _align(self, other: "AffineFir") -> tuple["AffineFir", "AffineFir"]:
        nv = max(self.nv, other.nv)
        K = max(len(self), len(other))
        return self.with_nv(nv).with_length(K), other.with_nv(nv).with_length(K)

    def __add__(self, other):
        if isinstance(other, FirOperator):
            other = AffineFir.constant(other)
        if not isinstance(other, AffineFir):
            return NotImplemented
        if self.shape != other.shape:
            raise OperatorError(f"cannot add {self.shape} and {other.shape}")
        a, b = self._align(other)
        return AffineFir(a.const + b.const, a.lin + b.lin)

    __radd__ = __add__

    def __neg__(self):
        return AffineFir(-self.const, -self.lin)

    def __sub__(self, other):
        if isinstance(other, FirOperator):
            other = AffineFir.constant(other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, s):
        if np.isscalar(s):
            return AffineFir(self.const * float(s), self.lin * float(s))
        return NotImplemented

    __rmul__ = __mul__

    def lmul(self, t: FirOperator) -> "AffineFir":
        """``t @ self`` (composition with a constant operator on the left)."""
        if t.cols != self.rows:
            raise OperatorError(f"cannot compose {t.shape} with {self.shape}")
        K = len(t) + len(self) - 1
        c = np.zeros((K, t.rows, self.cols))
        ln = np.zeros((K, t.rows, self.cols, self.nv))
        L = len(self)
        for m in range(len(t)):
            tm = t.coeffs[m]
            if not tm.any():
                continue
            c[m: m + L] += np.einsum("ij,kjl->kil", tm, self.const)
            ln[m: m + L] += np.einsum("ij,kjlv->kilv", tm, self.lin, optimize=True)
        return AffineFir(c, ln)

    def rmul(self, t: FirOperator) -> "AffineFir":
        """``self @ t`` (composition with a constant operator on the right)."""
        if self.cols != t.rows:
            raise OperatorError(f"cannot compose {self.shape} with {t.shape}")
        K = len(t) + len(self) - 1
        c = np.zeros((K, self.rows, t.cols))
        ln = np.zeros((K, self.rows, t.cols, self.nv))
        L = len(self)
        for m in range(len(t)):
            tm = t.coeffs[m]
            if not tm.any():
                continue
            c[m: m + L] += np.einsum("kij,jl->kil", self.const, tm)
            ln[m: m + L] += np.einsum("kijv,jl->kilv", self.lin, tm, optimize=True)
        return AffineFir(c, ln)

    def __matmul__(self, other):
        if isinstance(other, FirOperator):
            return self.rmul(other)
        return NotImplemented

    def __rmatmul__(self, other):
        if isinstance(other, FirOperator):
            return self.lmul(other)
        return NotImplemented

    def delay(self, k: int = 1) -> "AffineFir":
        c = np.concatenate([np.zeros((k,) + self.const.shape[1:]), self.const])
        ln = np.concatenate([np.zeros((k,) + self.lin.shape[1:]), self.lin])
        return AffineFir(c, ln)

    # stacking -----------------------------------------------------------

    @staticmethod
    def block(grid: Sequence[Sequence["AffineFir | FirOperator"]]) -> "AffineFir":
        items = [[AffineFir.lift(x) for x in row] for row in grid]
        nv = max(x.nv for row in items for x in row)
        K = max(len(x) for row in items for x in row)
        items = [[x.with_nv(nv).with_length(K) for x in row] for row in items]
        for row in items:
            if len({x.rows for x in row}) != 1:
                raise OperatorError("blocks in a row must have equal heights")
        for j in range(len(items[0])):
            if len({row[j].cols for row in items}) != 1:
                raise OperatorError("blocks in a column must have equal widths")
        c = np.concatenate([np.concatenate([x.const for x in row], axis=2) for row in items], axis=1)
        ln = np.concatenate([np.concatenate([x.lin for x in row], axis=2) for row in items], axis=1)
        return AffineFir(c, ln)

    @staticmethod
    def vstack(items) -> "AffineFir":
        return AffineFir.block([[x] for x in items])

    @staticmethod
    def hstack(items) -> "AffineFir":
        return AffineFir.block([list(items)])

    # evaluation ---------------------------------------------------------

    def evaluate(self, v: np.ndarray) -> FirOperator:
        v = np.asarray(v, dtype=float)
        if v.size < self.nv:
            raise ValueError("decision vector too short")
        return FirOperator(self.const + self.lin @ v[: self.nv])

    def __repr__(self) -> str:
        return f"AffineFir({self.rows}x{self.cols}, lags={len(self)}, nv={self.nv})"
