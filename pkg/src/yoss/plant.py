"""Aggregation of networked subsystems into an operator-form generalized plant.

The aggregate plant is

    x = Lambda A x + Lambda B1 w + Lambda B2 u + x0_bar
    z = C1 x + D11 w + D12 u
    y = C2 x + D21 w

with every coefficient a :class:`FirOperator`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .oplib import FirOperator, OperatorError, Signal, blockdiag
from .structure import (AssumptionReport, Link, NodeDims, StructureMask, mask_check_assumptions,
                        mask_from_network)

__all__ = ["Subsystem", "GeneralizedPlant", "PlantReport", "plant_from_subsystems",
           "plant_simulate", "plant_validate", "spectral_radius"]


def _mat(a, shape=None) -> np.ndarray | None:
    if a is None:
        return None if shape is None else np.zeros(shape)
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if shape is not None and a.shape != shape:
        raise OperatorError(f"expected a {shape} matrix, got {a.shape}")
    return a


@dataclass
class Subsystem:
    """One node: local matrices plus coupling matrices keyed by neighbour index.

    ``C3[j]``/``D31[j]`` generate the signal this node sends to node ``j``;
    ``B3[j]`` injects the signal received from node ``j``.  Missing matrices
    are zeros.
    """

    A: np.ndarray
    B2: np.ndarray | None = None
    C2: np.ndarray | None = None
    B1: np.ndarray | None = None
    C1: np.ndarray | None = None
    D11: np.ndarray | None = None
    D12: np.ndarray | None = None
    D21: np.ndarray | None = None
    B3: dict[int, np.ndarray] = field(default_factory=dict)
    C3: dict[int, np.ndarray] = field(default_factory=dict)
    D31: dict[int, np.ndarray] = field(default_factory=dict)

    def dims(self) -> tuple[int, int, int, int, int]:
        """(n, p, m, q, r) inferred from whichever matrices are present."""
        A = _mat(self.A)
        n = A.shape[0]
        m = _mat(self.B2).shape[1] if self.B2 is not None else (
            _mat(self.D12).shape[1] if self.D12 is not None else 0)
        p = _mat(self.C2).shape[0] if self.C2 is not None else (
            _mat(self.D21).shape[0] if self.D21 is not None else 0)
        q = 0
        for name in ("B1", "D11", "D21"):
            if getattr(self, name) is not None:
                q = _mat(getattr(self, name)).shape[1]
                break
        for mat in self.D31.values():
            q = max(q, _mat(mat).shape[1])
        r = 0
        for name in ("C1", "D11", "D12"):
            if getattr(self, name) is not None:
                r = _mat(getattr(self, name)).shape[0]
                break
        return n, p, m, q, r

    def local(self) -> dict[str, np.ndarray]:
        n, p, m, q, r = self.dims()
        return {
            "A": _mat(self.A, (n, n)),
            "B1": _mat(self.B1, (n, q)),
            "B2": _mat(self.B2, (n, m)),
            "C1": _mat(self.C1, (r, n)),
            "C2": _mat(self.C2, (p, n)),
            "D11": _mat(self.D11, (r, q)),
            "D12": _mat(self.D12, (r, m)),
            "D21": _mat(self.D21, (p, q)),
        }


@dataclass(frozen=True, eq=False)
class GeneralizedPlant:
    A: FirOperator
    B1: FirOperator
    B2: FirOperator
    C1: FirOperator
    C2: FirOperator
    D11: FirOperator
    D12: FirOperator
    D21: FirOperator
    dims: NodeDims
    mask: StructureMask

    @property
    def n(self) -> int:
        return self.A.rows

    @property
    def m(self) -> int:
        return self.B2.cols

    @property
    def p(self) -> int:
        return self.C2.rows

    @property
    def q(self) -> int:
        return self.B1.cols

    @property
    def r(self) -> int:
        return self.C1.rows

    def operators(self) -> dict[str, FirOperator]:
        return {k: getattr(self, k) for k in ("A", "B1", "B2", "C1", "C2", "D11", "D12", "D21")}

    def dimension_errors(self) -> list[str]:
        n, q, m, r, p = self.A.rows, self.B1.cols, self.B2.cols, self.C1.rows, self.C2.rows
        want = {"A": (n, n), "B1": (n, q), "B2": (n, m), "C1": (r, n), "C2": (p, n),
                "D11": (r, q), "D12": (r, m), "D21": (p, q)}
        errs = [f"{k} is {getattr(self, k).shape}, expected {s}" for k, s in want.items()
                if getattr(self, k).shape != s]
        d = self.dims
        totals = {"x": n, "y": p, "u": m, "w": q, "z": r}
        errs += [f"node sizes for '{k}' sum to {d.total(k)}, plant has {v}"
                 for k, v in totals.items() if d.total(k) != v]
        if self.mask.nodes != d.nodes:
            errs.append(f"mask has {self.mask.nodes} nodes, plant has {d.nodes}")
        return errs


def plant_from_subsystems(subs: Sequence[Subsystem], links: Sequence[Link | tuple],
                          mask: StructureMask | None = None) -> GeneralizedPlant:
    """Aggregate subsystems coupled through delayed links.

    Block ``(i, j)`` of ``A`` at lag ``tau_ij`` is ``B3^{ij} C3^{ij}`` and the
    matching block of ``B1`` is ``B3^{ij} D31^{ij}``.  Unless ``mask`` is
    given, the structure is the shortest-path delay mask of the links.
    """
    nodes = len(subs)
    if nodes == 0:
        raise ValueError("at least one subsystem is required")
    locs = [s.local() for s in subs]
    dims = NodeDims(*zip(*[s.dims() for s in subs]))
    links = [ln if isinstance(ln, Link) else Link(*ln) for ln in links]
    max_tau = max([ln.tau for ln in links], default=0)

    def bd(name):
        return blockdiag([FirOperator.from_matrix(loc[name]) for loc in locs]).coeffs[0]

    A = np.zeros((max_tau + 1, dims.total("x"), dims.total("x")))
    B1 = np.zeros((max_tau + 1, dims.total("x"), dims.total("w")))
    A[0], B1[0] = bd("A"), bd("B1")
    xo = np.concatenate([[0], np.cumsum(dims.n)]).astype(int)
    wo = np.concatenate([[0], np.cumsum(dims.q)]).astype(int)
    for ln in links:
        i, j = ln.dst, ln.src
        if not (0 <= i < nodes and 0 <= j < nodes):
            raise ValueError(f"link {j}->{i} references an unknown node")
        if i not in subs[j].C3 or j not in subs[i].B3:
            raise ValueError(f"link {j}->{i} needs C3[{i}] on node {j} and B3[{j}] on node {i}")
        B3 = _mat(subs[i].B3[j])
        C3 = _mat(subs[j].C3[i])
        if B3.shape[0] != dims.n[i] or C3.shape[1] != dims.n[j] or B3.shape[1] != C3.shape[0]:
            raise OperatorError(f"coupling matrices for link {j}->{i} have inconsistent shapes")
        A[ln.tau, xo[i]:xo[i + 1], xo[j]:xo[j + 1]] += B3 @ C3
        if i in subs[j].D31:
            D31 = _mat(subs[j].D31[i], (C3.shape[0], dims.q[j]))
            B1[ln.tau, xo[i]:xo[i + 1], wo[j]:wo[j + 1]] += B3 @ D31
    if mask is None:
        mask = mask_from_network(links, nodes, dims)
    elif mask.dims is None:
        mask = mask.with_dims(dims)
    return GeneralizedPlant(
        A=FirOperator(A).trim(), B1=FirOperator(B1).trim(),
        B2=FirOperator(bd("B2")[None]), C1=FirOperator(bd("C1")[None]),
        C2=FirOperator(bd("C2")[None]), D11=FirOperator(bd("D11")[None]),
        D12=FirOperator(bd("D12")[None]), D21=FirOperator(bd("D21")[None]),
        dims=dims, mask=mask,
    )


def _as_samples(s, dim: int, T: int, name: str) -> np.ndarray:
    if s is None:
        return np.zeros((T, dim))
    a = s.samples if isinstance(s, Signal) else np.asarray(s, dtype=float).reshape(-1, dim) if dim else np.zeros((T, 0))
    if a.shape[1] != dim:
        raise OperatorError(f"{name} has dim {a.shape[1]}, expected {dim}")
    if a.shape[0] < T:
        raise OperatorError(f"{name} has {a.shape[0]} samples, need {T}")
    return a[:T]


def _tap(op: FirOperator, hist: np.ndarray, t: int) -> np.ndarray:
    """sum_k op(k) hist(t - k) over available history."""
    out = np.zeros(op.rows)
    for k in range(min(len(op), t + 1)):
        out += op.coeffs[k] @ hist[t - k]
    return out


def plant_simulate(p: GeneralizedPlant, u=None, w=None, x0=None, T: int = 1,
                   t0: int = 0) -> tuple[Signal, Signal, Signal]:
    """Open-loop recursion over ``t = 0..T-1``; returns (x, y, z)."""
    if T < 1:
        raise ValueError("horizon must be at least 1")
    us = _as_samples(u, p.m, T, "u")
    ws = _as_samples(w, p.q, T, "w")
    x = np.zeros((T, p.n))
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        if x0.shape[0] != p.n:
            raise OperatorError(f"x0 has dim {x0.shape[0]}, expected {p.n}")
        if t0 < T:
            x[t0] += x0
    for t in range(T - 1):
        x[t + 1] += _tap(p.A, x, t) + _tap(p.B1, ws, t) + _tap(p.B2, us, t)
    y = np.array([_tap(p.C2, x, t) + _tap(p.D21, ws, t) for t in range(T)]).reshape(T, p.p)
    z = np.array([_tap(p.C1, x, t) + _tap(p.D11, ws, t) + _tap(p.D12, us, t)
                  for t in range(T)]).reshape(T, p.r)
    return Signal(x), Signal(y), Signal(z)


def spectral_radius(p: GeneralizedPlant) -> float:
    """Spectral radius of the companion form of ``x(t+1) = sum_k A(k) x(t-k)``."""
    N, n = p.A.order, p.n
    comp = np.zeros(((N + 1) * n, (N + 1) * n))
    comp[:n] = np.hstack(list(p.A.coeffs))
    comp[n:, :-n] = np.eye(N * n)
    return float(np.max(np.abs(np.linalg.eigvals(comp)))) if comp.size else 0.0


@dataclass
class PlantReport:
    dimension_errors: list[str]
    assumptions: AssumptionReport | None

    @property
    def ok(self) -> bool:
        return not self.dimension_errors and self.assumptions is not None and self.assumptions.ok

    def lines(self) -> list[str]:
        out = [f"dimensions: {'ok' if not self.dimension_errors else 'ERROR'}"]
        out += ["  " + e for e in self.dimension_errors]
        if self.assumptions is not None:
            out += self.assumptions.lines()
        return out


def plant_validate(p: GeneralizedPlant) -> PlantReport:
    errs = p.dimension_errors()
    if errs:
        return PlantReport(errs, None)
    return PlantReport([], mask_check_assumptions(p.mask, p))
