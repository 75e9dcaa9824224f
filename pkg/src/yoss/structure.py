"""Network structure as per-entry minimum-delay masks.

A mask holds a node-level matrix ``d`` where ``d[i][j]`` is the smallest lag
at which node ``j`` may influence node ``i`` (``inf`` = never).  An operator
whose rows and columns are partitioned by node belongs to the structure set
iff every entry of block ``(i, j)`` vanishes at all lags below ``d[i][j]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .oplib import FirOperator, OperatorError

__all__ = [
    "NodeDims",
    "StructureMask",
    "Link",
    "Violation",
    "MembershipResult",
    "AssumptionReport",
    "mask_from_network",
    "mask_check_membership",
    "mask_check_assumptions",
]

INF = np.inf
SIGNAL_KINDS = ("x", "y", "u", "w", "z")


@dataclass(frozen=True)
class NodeDims:
    """Per-node dimensions: states, measurements, controls, disturbances, outputs."""

    n: tuple[int, ...]
    p: tuple[int, ...]
    m: tuple[int, ...]
    q: tuple[int, ...]
    r: tuple[int, ...]

    def __post_init__(self):
        vals = [tuple(int(v) for v in getattr(self, k)) for k in "npmqr"]
        if not vals[0]:
            raise ValueError("at least one node is required")
        if len({len(v) for v in vals}) != 1:
            raise ValueError("all dimension lists must have one entry per node")
        if any(v < 0 for vs in vals for v in vs):
            raise ValueError("dimensions must be nonnegative")
        for k, v in zip("npmqr", vals):
            object.__setattr__(self, k, v)

    @property
    def nodes(self) -> int:
        return len(self.n)

    def sizes(self, kind: str) -> tuple[int, ...]:
        """Per-node sizes of signal ``kind`` in {'x', 'y', 'u', 'w', 'z'}."""
        return {"x": self.n, "y": self.p, "u": self.m, "w": self.q, "z": self.r}[kind]

    def total(self, kind: str) -> int:
        return sum(self.sizes(kind))


@dataclass(frozen=True)
class Link:
    """Directed communication link ``src -> dst`` with delay ``tau`` (nodes 0-based).

    ``extra`` adds further lags to the structural distance of this link; the
    default 0 places the coupling exactly at lag ``tau``.
    """

    src: int
    dst: int
    tau: int = 1
    extra: int = 0

    @property
    def weight(self) -> int:
        return int(self.tau) + int(self.extra)


@dataclass(frozen=True)
class Violation:
    block: tuple[int, int]
    entry: tuple[int, int]
    lag: int
    magnitude: float


@dataclass
class MembershipResult:
    ok: bool
    violations: list[Violation] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


@dataclass(frozen=True, eq=False)
class StructureMask:
    d: np.ndarray
    dims: NodeDims | None = None

    def __post_init__(self):
        d = np.array(self.d, dtype=float)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise ValueError("delay matrix must be square")
        if np.any(np.diag(d) != 0):
            raise ValueError("diagonal of the delay matrix must be zero")
        if np.any(d < 0) or np.any(np.isnan(d)):
            raise ValueError("delays must be nonnegative")
        finite = d[np.isfinite(d)]
        if np.any(finite != np.round(finite)):
            raise ValueError("finite delays must be integers")
        if self.dims is not None and self.dims.nodes != d.shape[0]:
            raise ValueError("node dimensions do not match mask size")
        d.flags.writeable = False
        object.__setattr__(self, "d", d)

    @property
    def nodes(self) -> int:
        return self.d.shape[0]

    def with_dims(self, dims: NodeDims) -> "StructureMask":
        return StructureMask(self.d, dims)

    def _sizes(self, s) -> tuple[int, ...]:
        if isinstance(s, str):
            if self.dims is None:
                raise ValueError("mask has no node dimensions attached")
            return self.dims.sizes(s)
        return tuple(int(v) for v in s)

    def entry_lags(self, row_sizes, col_sizes, offset: int = 0) -> np.ndarray:
        """Entry-level minimum lags; ``row_sizes``/``col_sizes`` are per-node
        sizes or a signal kind.  ``offset`` is added (for ``Lambda^k X`` blocks)."""
        rs, cs = self._sizes(row_sizes), self._sizes(col_sizes)
        if len(rs) != self.nodes or len(cs) != self.nodes:
            raise ValueError("size lists must have one entry per node")
        return np.repeat(np.repeat(self.d, rs, axis=0), cs, axis=1) + offset

    def triangle_violations(self) -> list[tuple[int, int, int]]:
        d, bad = self.d, []
        for k in range(self.nodes):
            via = d[:, k][:, None] + d[k, :][None, :]
            for i, j in zip(*np.nonzero(d > via)):
                bad.append((int(i), int(k), int(j)))
        return bad

    def is_closed(self) -> bool:
        return not self.triangle_violations()


def mask_from_network(links: Iterable[Link | tuple], nodes: int, dims: NodeDims | None = None) -> StructureMask:
    """Shortest-path structural delays over directed links (Floyd-Warshall)."""
    d = np.full((nodes, nodes), INF)
    np.fill_diagonal(d, 0.0)
    for ln in links:
        ln = ln if isinstance(ln, Link) else Link(*ln)
        if not (0 <= ln.src < nodes and 0 <= ln.dst < nodes):
            raise ValueError(f"link {ln.src}->{ln.dst} references an unknown node")
        if ln.tau < 0 or ln.extra < 0:
            raise ValueError("link delays must be nonnegative")
        if ln.src != ln.dst:
            d[ln.dst, ln.src] = min(d[ln.dst, ln.src], ln.weight)
    for k in range(nodes):
        d = np.minimum(d, d[:, k][:, None] + d[k, :][None, :])
    return StructureMask(d, dims)


def mask_check_membership(t: FirOperator, m: StructureMask, row_sizes="x", col_sizes="x",
                          offset: int = 0, atol: float = 1e-12) -> MembershipResult:
    """Check ``t`` against the mask expanded with the given node partitions."""
    lags = m.entry_lags(row_sizes, col_sizes, offset)
    if lags.shape != t.shape:
        raise OperatorError(f"operator is {t.shape} but expanded mask is {lags.shape}")
    rnode = np.repeat(np.arange(m.nodes), m._sizes(row_sizes))
    cnode = np.repeat(np.arange(m.nodes), m._sizes(col_sizes))
    ks = np.arange(len(t))[:, None, None]
    bad = (ks < lags[None]) & (np.abs(t.coeffs) > atol)
    out = [Violation((int(rnode[i]), int(cnode[j])), (int(i), int(j)), int(k), float(abs(t.coeffs[k, i, j])))
           for k, i, j in zip(*np.nonzero(bad))]
    return MembershipResult(not out, out)


@dataclass
class AssumptionReport:
    closure_ok: bool
    closure_violations: list[tuple[int, int, int]]
    contains_plant_ok: bool
    plant_violations: dict[str, list[Violation]]
    d21_full_row_rank: bool

    @property
    def ok(self) -> bool:
        return self.closure_ok and self.contains_plant_ok and self.d21_full_row_rank

    def lines(self) -> list[str]:
        out = [f"closure (triangle inequality): {'ok' if self.closure_ok else 'VIOLATED'}"]
        for i, k, j in self.closure_violations[:10]:
            out.append(f"  d[{i}][{j}] > d[{i}][{k}] + d[{k}][{j}]")
        out.append(f"structure contains A, B2, C2: {'ok' if self.contains_plant_ok else 'VIOLATED'}")
        for name, vs in self.plant_violations.items():
            for v in vs[:5]:
                out.append(f"  {name} block {v.block} lag {v.lag}: |{v.magnitude:.3g}|")
        out.append(f"D21 trivial left null space: {'ok' if self.d21_full_row_rank else 'VIOLATED'}")
        return out


def mask_check_assumptions(m: StructureMask, p) -> AssumptionReport:
    """Closure of the mask, membership of the plant's A, B2, C2, and the D21 rank test."""
    m = m if m.dims is not None else m.with_dims(p.dims)
    tri = m.triangle_violations()
    checks = {
        "A": mask_check_membership(p.A, m, "x", "x"),
        "B2": mask_check_membership(p.B2, m, "x", "u"),
        "C2": mask_check_membership(p.C2, m, "y", "x"),
    }
    d21 = p.D21.lag(0)
    rank_ok = d21.shape[0] == 0 or np.linalg.matrix_rank(d21.T) == d21.shape[0]
    return AssumptionReport(
        closure_ok=not tri,
        closure_violations=tri,
        contains_plant_ok=all(c.ok for c in checks.values()),
        plant_violations={k: c.violations for k, c in checks.items() if not c.ok},
        d21_full_row_rank=bool(rank_ok),
    )


def random_member(rng: np.random.Generator, m: StructureMask, row_sizes: Sequence[int] | str,
                  col_sizes: Sequence[int] | str, order: int, scale: float = 1.0) -> FirOperator:
    """Random FIR operator obeying the mask (used by property tests)."""
    lags = m.entry_lags(row_sizes, col_sizes)
    c = rng.uniform(-scale, scale, size=(order + 1,) + lags.shape)
    c[np.arange(order + 1)[:, None, None] < lags[None]] = 0.0
    return FirOperator(c)
