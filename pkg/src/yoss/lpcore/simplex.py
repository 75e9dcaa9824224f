"""Dense two-phase revised simplex.

The basis inverse is held as a dense matrix, updated by elementary row
operations after each pivot and recomputed from the original data every
``refactor`` pivots.  Pricing is Dantzig's most-negative reduced cost; after a
run of degenerate pivots the solver switches to Bland's smallest-index rule
until it makes progress again, which rules out cycling.  ``rule="bland"``
uses Bland's rule throughout.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

__all__ = ["LinearProgram", "LPResult", "LPError", "lp_solve", "lp_dump"]

log = logging.getLogger(__name__)

OPTIMAL, INFEASIBLE, UNBOUNDED, NUMERICAL = "optimal", "infeasible", "unbounded", "numerical"


class LPError(RuntimeError):
    """Numerical failure inside the simplex (never raised for infeasible/unbounded)."""


@dataclass
class LinearProgram:
    """``min c.v  s.t.  G v <= h,  E v = f,  v >= lb``.

    ``lb`` defaults to zeros; ``-inf`` marks a free variable.
    """

    c: np.ndarray
    G: np.ndarray | None = None
    h: np.ndarray | None = None
    E: np.ndarray | None = None
    f: np.ndarray | None = None
    lb: np.ndarray | None = None
    names: list[str] | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = self.c.size
        self.G = np.zeros((0, n)) if self.G is None else np.atleast_2d(np.asarray(self.G, dtype=float))
        self.h = np.zeros(0) if self.h is None else np.asarray(self.h, dtype=float).reshape(-1)
        self.E = np.zeros((0, n)) if self.E is None else np.atleast_2d(np.asarray(self.E, dtype=float))
        self.f = np.zeros(0) if self.f is None else np.asarray(self.f, dtype=float).reshape(-1)
        self.lb = np.zeros(n) if self.lb is None else np.asarray(self.lb, dtype=float).reshape(-1)
        if self.G.size == 0:
            self.G = self.G.reshape(-1, n)
        if self.E.size == 0:
            self.E = self.E.reshape(-1, n)
        if (self.G.shape[1] != n or self.E.shape[1] != n or self.lb.size != n
                or self.G.shape[0] != self.h.size or self.E.shape[0] != self.f.size):
            raise ValueError("linear program has inconsistent dimensions")
        for name in ("c", "G", "h", "E", "f"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} has non-finite entries")
        if np.any(np.isnan(self.lb)) or np.any(self.lb == np.inf):
            raise ValueError("lower bounds must be finite or -inf")

    @property
    def num_vars(self) -> int:
        return self.c.size

    def residuals(self, v: np.ndarray) -> dict[str, float]:
        return {
            "ineq": float(max(0.0, np.max(self.G @ v - self.h))) if self.h.size else 0.0,
            "eq": float(np.max(np.abs(self.E @ v - self.f))) if self.f.size else 0.0,
            "bound": float(max(0.0, np.max(self.lb - v))) if v.size else 0.0,
        }


@dataclass
class LPResult:
    status: str
    value: float = np.nan
    x: np.ndarray | None = None
    iterations: int = 0
    message: str = ""
    residuals: dict[str, float] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def _standardize(lp: LinearProgram):
    """Return ``(A, b, c, mi, recover)`` for ``min c x, A x = b, x >= 0``.

    Columns: original variables (shifted to zero lower bound), negative parts
    of free variables, then one slack per inequality row.
    """
    n = lp.num_vars
    free = np.isneginf(lp.lb)
    shift = np.where(free, 0.0, lp.lb)
    neg_cols = np.flatnonzero(free)
    G, E = lp.G, lp.E
    mi, me = G.shape[0], E.shape[0]
    nstruct = n + neg_cols.size
    A = np.zeros((mi + me, nstruct + mi))
    A[:mi, :n] = G
    A[mi:, :n] = E
    A[:mi, n:nstruct] = -G[:, neg_cols]
    A[mi:, n:nstruct] = -E[:, neg_cols]
    A[:mi, nstruct:] = np.eye(mi)
    b = np.concatenate([lp.h - G @ shift, lp.f - E @ shift])
    c = np.zeros(nstruct + mi)
    c[:n] = lp.c
    c[n:nstruct] = -lp.c[neg_cols]

    def recover(xs: np.ndarray) -> np.ndarray:
        x = shift + xs[:n]
        x[neg_cols] -= xs[n:nstruct]
        return x

    return A, b, c, mi, recover


class _Revised:
    """Revised simplex state over ``A x = b, x >= 0`` with a feasible start basis."""

    def __init__(self, A, b, basis, tol, piv_tol, rule, max_iter, refactor):
        self.A = A
        self.b = b
        self.m, self.n = A.shape
        self.basis = np.asarray(basis, dtype=int)
        self.tol = tol
        self.piv_tol = piv_tol
        self.rule = rule
        self.max_iter = max_iter
        self.refactor = refactor
        self.feas = 1e-9 * max(1.0, float(np.abs(b).max(initial=0.0)))
        self.iterations = 0
        self.reinvert()

    def reinvert(self) -> None:
        B = self.A[:, self.basis]
        self.Binv = np.linalg.inv(B)
        self.xB = self.Binv @ self.b
        small = (self.xB < 0) & (self.xB > -1e-9)
        self.xB[small] = 0.0
        self.since = 0

    def run(self, c: np.ndarray, allowed: np.ndarray) -> str:
        degenerate = 0
        bland = self.rule == "bland"
        A = self.A
        dtol = self.tol * max(1.0, float(np.abs(c).max(initial=0.0)))
        confirmed = False
        while True:
            if self.iterations >= self.max_iter:
                return "iteration_limit"
            if self.since >= self.refactor:
                self.reinvert()
            y = c[self.basis] @ self.Binv
            d = c - y @ A
            d[~allowed] = 0.0
            d[self.basis] = 0.0
            if bland:
                cand = np.flatnonzero(d < -dtol)
                if cand.size == 0:
                    return OPTIMAL
                q = int(cand[0])
            else:
                q = int(np.argmin(d))
                if d[q] >= -dtol:
                    return OPTIMAL
            alpha = self.Binv @ A[:, q]
            amax = float(np.abs(alpha).max(initial=0.0))
            pos = np.flatnonzero(alpha > self.piv_tol * max(1.0, amax))
            if pos.size == 0:
                # confirm with a fresh inverse before declaring unboundedness
                if not confirmed:
                    self.reinvert()
                    confirmed = True
                    continue
                return UNBOUNDED
            confirmed = False
            xb = np.maximum(self.xB[pos], 0.0)
            ap = alpha[pos]
            if bland:
                ratios = xb / ap
                theta = ratios.min()
                tie = ratios <= theta + 1e-12 * (1.0 + theta)
                tie &= ap >= 1e-3 * ap[tie].max()
                ties = pos[tie]
                r = int(ties[np.argmin(self.basis[ties])])
            else:
                # Harris two-pass: relax bounds slightly, then take the largest pivot
                bound = ((xb + self.feas) / ap).min()
                ok = xb / ap <= bound
                r = int(pos[ok][np.argmax(ap[ok])])
            theta = max(self.xB[r], 0.0) / alpha[r]
            self._pivot(r, q, alpha, theta)
            if theta <= 1e-12:
                degenerate += 1
                if degenerate > 50 and self.rule != "bland":
                    bland = True
            else:
                degenerate = 0
                bland = self.rule == "bland"

    def _pivot(self, r: int, q: int, alpha: np.ndarray, theta: float) -> None:
        self.xB -= theta * alpha
        self.xB[r] = theta
        neg = self.xB < 0
        if neg.any():
            self.xB[neg & (self.xB > -1e-9)] = 0.0
        Binv = self.Binv
        Binv[r] /= alpha[r]
        a = alpha.copy()
        a[r] = 0.0
        nz = np.flatnonzero(a)
        if nz.size:
            Binv[nz] -= np.outer(a[nz], Binv[r])
        self.basis[r] = q
        self.iterations += 1
        self.since += 1


def _start_basis(A: np.ndarray, b: np.ndarray, mi: int, nstd: int):
    """Crash basis: slacks for inequality rows, singleton structural columns
    for equality rows, artificials where neither yields a feasible start.

    Returns the augmented matrix (artificial columns appended) and basis.
    """
    m = A.shape[0]
    basis = np.full(m, -1)
    eq = np.arange(mi, m)
    if eq.size:
        sub = A[eq, : nstd - mi] != 0.0
        single = np.flatnonzero(sub.sum(axis=0) == 1)
        for j in single:
            i = int(eq[np.flatnonzero(sub[:, j])[0]])
            if basis[i] >= 0:
                continue
            a = A[i, j]
            if abs(a) < 1e-7 or (b[i] != 0.0 and np.sign(b[i]) != np.sign(a)):
                continue
            basis[i] = j
    # equality rows are decoupled from one another in this basis
    x_eq = np.zeros(m)
    for i in eq:
        if basis[i] >= 0:
            x_eq[i] = b[i] / A[i, basis[i]]
    used = basis[eq][basis[eq] >= 0]
    slack_val = b[:mi] - A[:mi, used] @ x_eq[eq][basis[eq] >= 0] if mi else np.zeros(0)
    art_cols = []
    for i in range(mi):
        if slack_val[i] >= 0:
            basis[i] = nstd - mi + i
        else:
            art_cols.append((i, -1.0))
    for i in eq:
        if basis[i] < 0:
            art_cols.append((int(i), 1.0 if b[i] >= 0 else -1.0))
    if art_cols:
        art = np.zeros((m, len(art_cols)))
        for k, (i, s) in enumerate(art_cols):
            art[i, k] = s
            basis[i] = nstd + k
        A = np.hstack([A, art])
    return A, basis, len(art_cols)


def lp_solve(lp: LinearProgram, rule: str = "dantzig", tol: float = 1e-9, piv_tol: float = 1e-9,
             feas_tol: float = 1e-8, max_iter: int | None = None, refactor: int = 100) -> LPResult:
    """Solve ``lp`` with the two-phase simplex.

    Returns status ``optimal``, ``infeasible``, ``unbounded`` or ``numerical``
    (the last if the final point violates a constraint by more than
    ``feas_tol`` or the iteration limit is hit).
    """
    if rule not in ("dantzig", "bland"):
        raise ValueError(f"unknown pricing rule {rule!r}")
    A, b, c, mi, recover = _standardize(lp)
    m, nstd = A.shape
    if max_iter is None:
        max_iter = 50 * (m + nstd) + 1000
    if m == 0:
        if np.any(c < -tol):
            return LPResult(UNBOUNDED, message="no constraints and a descent direction")
        x = recover(np.zeros(nstd))
        return LPResult(OPTIMAL, float(lp.c @ x), x, 0, residuals=lp.residuals(x))

    Aa, basis, na = _start_basis(A, b, mi, nstd)
    try:
        s = _Revised(Aa, b, basis, tol, piv_tol, rule, max_iter, refactor)
    except np.linalg.LinAlgError:
        return LPResult(NUMERICAL, message="singular crash basis")
    ntot = nstd + na
    bscale = max(1.0, float(np.abs(b).max(initial=0.0)))

    if na:
        c1 = np.zeros(ntot)
        c1[nstd:] = 1.0
        status = s.run(c1, np.ones(ntot, dtype=bool))
        if status != OPTIMAL:
            return LPResult(NUMERICAL, iterations=s.iterations, message=f"phase 1 ended with {status}")
        s.reinvert()
        infeas = float(s.xB[s.basis >= nstd].sum())
        if infeas > feas_tol * bscale:
            return LPResult(INFEASIBLE, iterations=s.iterations, message=f"phase 1 optimum {infeas:.3g} > 0")
        # pivot basic artificials (at zero) out where a structural column allows
        for r in np.flatnonzero(s.basis >= nstd):
            row = s.Binv[r] @ Aa[:, :nstd]
            row[s.basis[s.basis < nstd]] = 0.0
            j = int(np.argmax(np.abs(row)))
            if abs(row[j]) > 1e-7:
                s._pivot(int(r), j, s.Binv @ Aa[:, j], 0.0)
        s.reinvert()

    c2 = np.zeros(ntot)
    c2[:nstd] = c
    allowed = np.zeros(ntot, dtype=bool)
    allowed[:nstd] = True
    status = s.run(c2, allowed)
    if status == UNBOUNDED:
        return LPResult(UNBOUNDED, iterations=s.iterations, message="objective unbounded below")
    if status != OPTIMAL:
        return LPResult(NUMERICAL, iterations=s.iterations, message=f"phase 2 ended with {status}")
    s.reinvert()
    if np.any(s.xB < -feas_tol * bscale):
        # the fresh inverse disagrees with the updated one; polish from here
        s.xB = np.maximum(s.xB, 0.0)
        status = s.run(c2, allowed)
        s.reinvert()
    xs = np.zeros(ntot)
    xs[s.basis] = np.maximum(s.xB, 0.0)
    x = recover(xs[:nstd])
    res = lp.residuals(x)
    scale = max(1.0, float(np.abs(lp.h).max(initial=0.0)), float(np.abs(lp.f).max(initial=0.0)))
    if max(res.values()) > feas_tol * scale or np.any(xs[nstd:] > feas_tol * bscale):
        return LPResult(NUMERICAL, float(lp.c @ x), x, s.iterations,
                        message=f"final residuals too large: {res}", residuals=res)
    return LPResult(OPTIMAL, float(lp.c @ x), x, s.iterations, residuals=res)


def lp_dump(lp: LinearProgram) -> str:
    """Plain-text canonical form: objective, then one constraint per line."""
    names = lp.names or [f"v{i}" for i in range(lp.num_vars)]

    def terms(row):
        return " ".join(f"{a:+.17g}*{names[j]}" for j, a in enumerate(row) if a != 0.0) or "0"

    lines = [f"min {terms(lp.c)}"]
    lines += [f"{terms(g)} <= {hh:.17g}" for g, hh in zip(lp.G, lp.h)]
    lines += [f"{terms(e)} = {ff:.17g}" for e, ff in zip(lp.E, lp.f)]
    lines += [f"{names[j]} >= {lb:.17g}" for j, lb in enumerate(lp.lb) if np.isfinite(lb)]
    lines += [f"{names[j]} free" for j, lb in enumerate(lp.lb) if not np.isfinite(lb)]
    return "\n".join(lines) + "\n"
