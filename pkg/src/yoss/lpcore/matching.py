"""Reduction of l-infinity-induced model matching over FIR variables to an LP.

Every entry ``phi`` of an affine FIR expression that is neither constant nor a
single signed decision coefficient gets a pair ``phi+ - phi- = phi`` of
nonnegative columns; the induced norm bound becomes one inequality per output
row, ``sum_k sum_j (phi+ + phi-) <= bound``.  Decision coefficients are split
the same way, so the LP has only nonnegative columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..oplib import FirOperator, norm_linf_induced
from .affine import AffineFir, VariableSpace
from .simplex import LinearProgram, LPResult, lp_solve

__all__ = ["HorizonError", "NormConstraint", "MatchingProblem", "MatchingLP", "MatchingSolution",
           "mm_build", "mm_solve"]


class HorizonError(ValueError):
    """The truncation horizon would cut off reachable lags of an expression."""


@dataclass
class NormConstraint:
    """``||expr|| <= scale * bound`` where ``bound`` is a number or a scalar variable name."""

    expr: AffineFir
    bound: float | str
    scale: float = 1.0
    label: str = ""


@dataclass
class MatchingProblem:
    """Minimise ``weight * ||objective|| + sum_s linear[s] * s`` subject to norm constraints.

    ``scalars`` maps scalar variable names to ``(lo, hi)`` (``hi`` may be inf).
    With ``horizon=None`` every norm is exact.  With an integer horizon, norms
    are taken over lags ``0..horizon``; unless ``truncate`` is set, an
    expression reaching past the horizon is an error.
    """

    space: VariableSpace
    objective: AffineFir | None = None
    weight: float = 1.0
    constraints: list[NormConstraint] = field(default_factory=list)
    scalars: dict[str, tuple[float, float]] = field(default_factory=dict)
    linear: dict[str, float] = field(default_factory=dict)
    horizon: int | None = None
    truncate: bool = False

    @classmethod
    def model_matching(cls, constant: FirOperator, blocks, horizon: int | None = None) -> "MatchingProblem":
        """``min ||T1 + sum_b L_b R_b M_b||`` for blocks ``(R_b, L_b, M_b)``.

        Each ``R_b`` is given as ``(name, rows, cols, order, min_lag)``.
        """
        space = VariableSpace()
        made = [(space.add(*spec)[0], left, right) for spec, left, right in blocks]
        expr = AffineFir.constant(constant)
        for var, left, right in made:
            expr = expr + AffineFir.of_variable(var, space.size).lmul(left).rmul(right)
        return cls(space, objective=expr.with_nv(space.size), horizon=horizon)

    def norm_items(self) -> list[tuple[AffineFir, object, float, str]]:
        items = []
        if self.objective is not None:
            items.append((self.objective, None, 1.0, "objective"))
        items += [(c.expr, c.bound, c.scale, c.label or f"constraint {k}")
                  for k, c in enumerate(self.constraints)]
        return items

    def validate(self) -> None:
        for expr, bound, _, label in self.norm_items():
            if expr.nv > self.space.size:
                raise ValueError(f"{label} refers to unknown decision slots")
            if isinstance(bound, str) and bound not in self.scalars:
                raise ValueError(f"{label} bound refers to unknown scalar {bound!r}")
            if self.horizon is not None and not self.truncate and expr.degree() > self.horizon:
                raise HorizonError(f"{label} reaches lag {expr.degree()} beyond horizon {self.horizon}")
        for name in self.linear:
            if name not in self.scalars:
                raise ValueError(f"objective refers to unknown scalar {name!r}")

    def cut(self, expr: AffineFir) -> AffineFir:
        expr = expr.with_nv(self.space.size)
        if self.horizon is not None:
            expr = expr.truncate(self.horizon)
        return expr


@dataclass
class MatchingLP(LinearProgram):
    """LP produced by :func:`mm_build` with its column layout."""

    nv: int = 0
    scalar_cols: dict[str, int] = field(default_factory=dict)
    gamma_col: int | None = None


def _entries(expr: AffineFir):
    """Classify nonzero entries: constants, single-coefficient, general."""
    K, r, c, nv = expr.lin.shape
    lin = expr.lin.reshape(K * r * c, nv)
    const = expr.const.reshape(-1)
    nnz = (lin != 0.0).sum(axis=1)
    rows = np.tile(np.repeat(np.arange(r), c), K)
    return lin, const, nnz, rows


def mm_build(p: MatchingProblem) -> MatchingLP:
    p.validate()
    nv = p.space.size
    names = list(p.scalars)
    ns = len(names)
    has_obj = p.objective is not None
    base = 2 * nv + ns + int(has_obj)
    scol = {s: 2 * nv + k for k, s in enumerate(names)}
    gcol = 2 * nv + ns if has_obj else None

    ineq_rows: list[dict[int, float]] = []
    ineq_rhs: list[float] = []
    eq_coefs: list[tuple[np.ndarray, np.ndarray]] = []  # (lin row, const) per split entry
    eq_rhs: list[float] = []
    ncols = base

    for expr, bound, scale, _ in p.norm_items():
        expr = p.cut(expr)
        lin, const, nnz, rowid = _entries(expr)
        row_terms = [dict() for _ in range(expr.rows)]
        row_const = np.zeros(expr.rows)
        for e in np.flatnonzero((nnz > 0) | (const != 0.0)):
            i = rowid[e]
            terms = row_terms[i]
            if nnz[e] == 0:
                row_const[i] += abs(const[e])
            elif nnz[e] == 1 and const[e] == 0.0:
                j = int(np.flatnonzero(lin[e])[0])
                a = abs(lin[e, j])
                terms[j] = terms.get(j, 0.0) + a
                terms[nv + j] = terms.get(nv + j, 0.0) + a
            else:
                eq_coefs.append((lin[e], ncols))
                eq_rhs.append(const[e])
                terms[ncols] = 1.0
                terms[ncols + 1] = 1.0
                ncols += 2
        for i in range(expr.rows):
            terms = row_terms[i]
            if bound is None:
                terms[gcol] = terms.get(gcol, 0.0) - 1.0
                rhs = -row_const[i]
            elif isinstance(bound, str):
                terms[scol[bound]] = terms.get(scol[bound], 0.0) - scale
                rhs = -row_const[i]
            else:
                rhs = scale * float(bound) - row_const[i]
            ineq_rows.append(terms)
            ineq_rhs.append(rhs)

    lb = np.zeros(ncols)
    extra_G, extra_h = [], []
    for s in names:
        lo, hi = p.scalars[s]
        lb[scol[s]] = lo
        if np.isfinite(hi):
            extra_G.append({scol[s]: 1.0})
            extra_h.append(hi)

    G = np.zeros((len(ineq_rows) + len(extra_G), ncols))
    for k, terms in enumerate(ineq_rows + extra_G):
        for j, a in terms.items():
            G[k, j] += a
    h = np.array(ineq_rhs + extra_h, dtype=float)
    E = np.zeros((len(eq_coefs), ncols))
    for k, (a, col) in enumerate(eq_coefs):
        E[k, col] = 1.0
        E[k, col + 1] = -1.0
        E[k, :nv] = -a
        E[k, nv:2 * nv] = a
    f = np.array(eq_rhs, dtype=float)

    c = np.zeros(ncols)
    if has_obj:
        c[gcol] = p.weight
    for s, w in p.linear.items():
        c[scol[s]] += w

    colnames = ([f"v{j}+" for j in range(nv)] + [f"v{j}-" for j in range(nv)] + names
                + (["gamma"] if has_obj else [])
                + [f"phi{k}{sgn}" for k in range((ncols - base) // 2) for sgn in "+-"])
    return MatchingLP(c=c, G=G, h=h, E=E, f=f, lb=lb, names=colnames,
                      nv=nv, scalar_cols=scol, gamma_col=gcol)


@dataclass
class MatchingSolution:
    status: str
    value: float
    lp_value: float
    blocks: dict[str, FirOperator]
    scalars: dict[str, float]
    decision: np.ndarray | None
    lp: LPResult
    num_rows: int = 0
    num_cols: int = 0

    @property
    def ok(self) -> bool:
        return self.status == "optimal"

    def norm_of(self, expr: AffineFir, horizon: int | None = None) -> float:
        t = expr.evaluate(self.decision)
        return norm_linf_induced(t if horizon is None else t.truncate(horizon))


def mm_solve(p: MatchingProblem, **lp_options) -> MatchingSolution:
    """Build, solve, and reconstruct.  ``value`` is recomputed from the blocks."""
    lp = mm_build(p)
    res = lp_solve(lp, **lp_options)
    shape = (lp.E.shape[0] + lp.G.shape[0], lp.num_vars)
    if not res.ok:
        return MatchingSolution(res.status, np.nan, np.nan, {}, {}, None, res, *shape)
    v = res.x[: lp.nv] - res.x[lp.nv: 2 * lp.nv]
    scal = {s: float(res.x[j]) for s, j in lp.scalar_cols.items()}
    value = sum(w * scal[s] for s, w in p.linear.items())
    if p.objective is not None:
        t = p.cut(p.objective).evaluate(v)
        value += p.weight * norm_linf_induced(t)
    return MatchingSolution(res.status, float(value), res.value, p.space.values(v), scal, v, res, *shape)
