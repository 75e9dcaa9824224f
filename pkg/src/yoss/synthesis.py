"""Youla-style parameterisation over the plant state space, bounds, and realizations.

A stabilising full-information controller is ``u = Z (I + Q)^{-1} [x; y]``
with masked FIR blocks

    Q = [[Lambda Q11, Lambda Q12], [Q21, Lambda Q22]],   Z = [Z1, Z2]

such that ``||E_{Q,Z}|| < 1``, where

    E_{Q,Z} = [[Lambda A, 0], [C2, 0]] + [[Lambda A - I, 0], [C2, -I]] Q + [[Lambda B2], [0]] Z.

Output feedback replaces ``x`` by the observer estimate.  The closed loop
from ``w`` to ``z`` is then ``H + U [Q; Z] V`` plus a term of order
``||E_{Q,Z}||``, and the optimal gain is bracketed by two LPs.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .estimator import ObserverDesign, estimator_residual
from .lpcore import AffineFir, MatchingProblem, NormConstraint, VariableSpace, mm_solve
from .oplib import (BlockOperator, FirOperator, OperatorError, block_assemble, hstack, op_delay,
                    op_inverse_truncated, op_mul, op_neumann_inverse, vstack)
from .plant import GeneralizedPlant
from .structure import StructureMask, mask_check_membership

__all__ = ["YoulaPair", "ControllerRealization", "BoundsPoint", "BoundsTrace", "SynthesisInfeasible",
           "closed_loop_terms", "pair_residual", "fullinfo_synthesize", "controller_from_pair_fullinfo",
           "outputfb_bounds", "algorithm1_run", "controller_realize_output", "nonsubspace_synthesize",
           "closed_loop_affine", "closed_loop_full", "NonsubspaceDesign"]

log = logging.getLogger(__name__)


class SynthesisInfeasible(RuntimeError):
    def __init__(self, message: str, achieved: float = np.nan):
        super().__init__(message)
        self.achieved = achieved


def _I(n: int) -> FirOperator:
    return FirOperator.identity(n)


def _Z(r: int, c: int) -> FirOperator:
    return FirOperator.zeros(r, c)


def _mask(p: GeneralizedPlant) -> StructureMask:
    return p.mask if p.mask.dims is not None else p.mask.with_dims(p.dims)


# ---------------------------------------------------------------------------
# Youla pair


@dataclass(frozen=True, eq=False)
class YoulaPair:
    """``Q`` on ``[x; y]`` (delays included) and ``Z`` from ``[x; y]`` to ``u``."""

    Q: BlockOperator
    Z: BlockOperator
    eps: float
    order: int

    @property
    def Qf(self) -> FirOperator:
        return self.Q.flatten()

    @property
    def Zf(self) -> FirOperator:
        return self.Z.flatten()

    def gain(self, horizon: int) -> FirOperator:
        """``K = Z (I + Q)^{-1}`` truncated to ``horizon``."""
        n = self.Qf.rows
        return op_mul(self.Zf, op_inverse_truncated(_I(n) + self.Qf, horizon), horizon)


def _pair_from_blocks(p: GeneralizedPlant, blocks: dict[str, FirOperator], eps: float, order: int) -> YoulaPair:
    n, pp = p.n, p.p
    Q = block_assemble([[blocks["Q11"], blocks["Q12"]], [blocks["Q21"], blocks["Q22"]]])
    Z = block_assemble([[blocks["Z1"], blocks["Z2"]]])
    if Q.shape != (n + pp, n + pp):
        raise OperatorError("inconsistent Q blocks")
    return YoulaPair(Q, Z, float(eps), order)


def pair_zero(p: GeneralizedPlant) -> YoulaPair:
    z = {"Q11": _Z(p.n, p.n), "Q12": _Z(p.n, p.p), "Q21": _Z(p.p, p.n), "Q22": _Z(p.p, p.p),
         "Z1": _Z(p.m, p.n), "Z2": _Z(p.m, p.p)}
    return _pair_from_blocks(p, z, pair_residual(p, _Z(p.n + p.p, p.n + p.p), _Z(p.m, p.n + p.p)).norm(), 0)


def _pair_variables(p: GeneralizedPlant, order: int, space: VariableSpace, max_lag: int | None = None):
    """Masked blocks of ``Q`` and ``Z`` with their delay offsets.

    ``order`` is the FIR order of each undelayed block; ``max_lag`` optionally
    caps the absolute lag (used by the truncated lower-bound problem).
    """
    mk = _mask(p)
    spec = [("Q11", "x", "x", 1), ("Q12", "x", "y", 1), ("Q21", "y", "x", 0), ("Q22", "y", "y", 1),
            ("Z1", "u", "x", 0), ("Z2", "u", "y", 0)]
    out = {}
    for name, rk, ck, off in spec:
        top = order + off if max_lag is None else min(order + off, max_lag)
        lags = mk.entry_lags(rk, ck, off)
        if top < off:
            top = off
            lags = np.full(lags.shape, np.inf)
        rs, cs = mk.dims.total(rk), mk.dims.total(ck)
        out[name] = space.add(name, rs, cs, top, lags)[0]
    return out


def _pair_expr(vars_, nv) -> tuple[AffineFir, AffineFir]:
    e = {k: AffineFir.of_variable(v, nv) for k, v in vars_.items()}
    Q = AffineFir.block([[e["Q11"], e["Q12"]], [e["Q21"], e["Q22"]]])
    Z = AffineFir.hstack([e["Z1"], e["Z2"]])
    return Q, Z


def _E_parts(p: GeneralizedPlant):
    n, pp, m = p.n, p.p, p.m
    lamA = op_delay(p.A)
    E0 = block_assemble([[lamA, _Z(n, pp)], [p.C2, _Z(pp, pp)]]).flatten()
    M1 = block_assemble([[lamA - _I(n), _Z(n, pp)], [p.C2, -_I(pp)]]).flatten()
    M2 = vstack([op_delay(p.B2), _Z(pp, m)])
    return E0, M1, M2


def pair_residual(p: GeneralizedPlant, Q, Z):
    """``E_{Q,Z}`` for constant (FirOperator) or affine ``Q``, ``Z``."""
    E0, M1, M2 = _E_parts(p)
    return E0 + M1 @ Q + M2 @ Z


def _check_pair_membership(p: GeneralizedPlant, pair: YoulaPair) -> list[str]:
    mk = _mask(p)
    kinds = {(0, 0): ("x", "x", 1), (0, 1): ("x", "y", 1), (1, 0): ("y", "x", 0), (1, 1): ("y", "y", 1)}
    bad = []
    for (i, j), (rk, ck, off) in kinds.items():
        if not mask_check_membership(pair.Q[i, j], mk, rk, ck, off):
            bad.append(f"Q{i + 1}{j + 1}")
    for j, ck in enumerate(("x", "y")):
        if not mask_check_membership(pair.Z[0, j], mk, "u", ck):
            bad.append(f"Z{j + 1}")
    return bad


def fullinfo_synthesize(p: GeneralizedPlant, order: int = 2, eps_target: float = 0.5, rho1: float = 0.9,
                        **lp_options) -> YoulaPair:
    """Minimise ``||E_{Q,Z}||`` over masked FIR ``(Q, Z)``; accept if ``<= eps_target``."""
    if not 0.0 <= eps_target <= rho1 < 1.0:
        raise ValueError("need 0 <= eps_target <= rho1 < 1")
    space = VariableSpace()
    vars_ = _pair_variables(p, order, space)
    Q, Z = _pair_expr(vars_, space.size)
    E = pair_residual(p, Q, Z)
    sol = mm_solve(MatchingProblem(space, objective=E), **lp_options)
    if not sol.ok:
        raise RuntimeError(f"full-information LP ended with status {sol.status}: {sol.lp.message}")
    if sol.value > eps_target:
        raise SynthesisInfeasible(f"best ||E_QZ|| = {sol.value:.6g} at order {order} exceeds {eps_target}",
                                  sol.value)
    pair = _pair_from_blocks(p, sol.blocks, sol.value, order)
    bad = _check_pair_membership(p, pair)
    if bad:
        raise AssertionError(f"blocks {bad} violate the structure mask")
    return pair


# ---------------------------------------------------------------------------
# realizations


@dataclass(frozen=True, eq=False)
class ControllerRealization:
    """``x_K = A_K x_K + B_K y``, ``u = C_K x_K + D_K y``."""

    A: BlockOperator
    B: BlockOperator
    C: BlockOperator
    D: BlockOperator
    kind: str
    labels: tuple[str, ...]

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    def flat(self) -> dict[str, FirOperator]:
        return {k: getattr(self, k).flatten() for k in "ABCD"}

    def well_posed(self, rcond_min: float = 1e-10) -> bool:
        a0 = self.A.flatten().lag(0)
        if a0.size == 0:
            return True
        return 1.0 / np.linalg.cond(np.eye(a0.shape[0]) - a0) >= rcond_min

    def equals(self, other: "ControllerRealization", atol: float = 1e-12) -> bool:
        return all(getattr(self, k).flatten().equals(getattr(other, k).flatten(), atol) for k in "ABCD")


def controller_from_pair_fullinfo(pair: YoulaPair) -> ControllerRealization:
    """``A_K = -Q``, ``B_K = I``, ``C_K = Z``, ``D_K = 0`` on ``[x; y]``."""
    Q, Z = pair.Q, pair.Z
    rp, cp = Q.row_partition, Q.col_partition
    A = block_assemble([[-Q[i, j] for j in range(len(cp))] for i in range(len(rp))])
    B = block_assemble([[_I(rp[i]) if i == j else _Z(rp[i], cp[j]) for j in range(len(cp))]
                        for i in range(len(rp))])
    m = Z.shape[0]
    D = block_assemble([[_Z(m, c) for c in cp]])
    return ControllerRealization(A, B, Z, D, "full-information", ("xi1", "xi2"))


def controller_realize_output(pair: YoulaPair, obs: ObserverDesign, p: GeneralizedPlant,
                              check: bool = True) -> ControllerRealization:
    """Observer plus ``(Q, Z)`` loop; internal state ``[xhat, xi1, xi2]``."""
    n, pp, m = p.n, p.p, p.m
    if pair.Q.shape != (n + pp, n + pp) or pair.Z.shape != (m, n + pp):
        raise OperatorError("pair dimensions do not match the plant")
    EL = estimator_residual(p, obs.qL, obs.zL, obs.variant)
    G = op_mul(_I(n) + op_delay(obs.qL), op_delay(p.B2))
    Z1, Z2 = pair.Z[0, 0], pair.Z[0, 1]
    Q = pair.Q
    A = block_assemble([
        [op_delay(EL), op_mul(G, Z1), op_mul(G, Z2)],
        [_I(n), -Q[0, 0], -Q[0, 1]],
        [_Z(pp, n), -Q[1, 0], -Q[1, 1]],
    ])
    B = block_assemble([[-op_delay(obs.zL)], [_Z(n, pp)], [_I(pp)]])
    C = block_assemble([[_Z(m, n), Z1, Z2]])
    D = block_assemble([[_Z(m, pp)]])
    k = ControllerRealization(A, B, C, D, "output-feedback", ("xhat", "xi1", "xi2"))
    if check:
        bad = realization_violations(k, p)
        if bad:
            raise OperatorError(f"realization blocks violate the structure: {bad}")
    return k


def realization_violations(k: ControllerRealization, p: GeneralizedPlant) -> list[str]:
    """Blocks of ``k`` that fail mask membership (state kinds from labels)."""
    mk = _mask(p)
    kind_of = {"xhat": "x", "xi1": "x", "xi2": "y", "u": "u", "x": "x", "y": "y"}
    states = [kind_of[lbl] for lbl in k.labels]
    inp = ["y"] if k.kind != "full-information" else ["x", "y"]
    bad = []
    for name, rows, cols in (("A", states, states), ("B", states, inp), ("C", ["u"], states), ("D", ["u"], inp)):
        blk = getattr(k, name)
        for i, rk in enumerate(rows):
            for j, ck in enumerate(cols):
                if not mask_check_membership(blk[i, j], mk, rk, ck):
                    bad.append(f"{name}[{i},{j}]")
    return bad


# ---------------------------------------------------------------------------
# closed-loop pieces and bounds


@dataclass(frozen=True, eq=False)
class ClosedLoopTerms:
    H: FirOperator
    U: FirOperator
    V: FirOperator
    M: FirOperator

    @property
    def norm_U(self) -> float:
        return self.U.norm()

    @property
    def norm_V(self) -> float:
        return self.V.norm()


def closed_loop_terms(p: GeneralizedPlant, obs: ObserverDesign) -> ClosedLoopTerms:
    """``H``, ``U``, ``V`` (and ``M = R1 Lambda B1 + R2 D21``) for a fixed observer."""
    lamA, lamB1 = op_delay(p.A), op_delay(p.B1)
    M = (op_mul(obs.R1, lamB1) + op_mul(obs.R2, p.D21)).truncate(obs.horizon).trim()
    H = (op_mul(p.C1, lamB1) + op_mul(op_mul(p.C1, lamA), M) + p.D11).trim()
    U = hstack([p.C1, _Z(p.r, p.p), p.D12]).trim()
    V = (vstack([lamB1, p.D21]) + op_mul(vstack([lamA - _I(p.n), p.C2]), M)).trim()
    return ClosedLoopTerms(H, U, V, M)


def closed_loop_affine(terms: ClosedLoopTerms, pair: YoulaPair) -> FirOperator:
    """``H + U [Q; Z] V`` for a given pair."""
    QZ = vstack([pair.Qf, pair.Zf])
    return (terms.H + op_mul(op_mul(terms.U, QZ), terms.V)).trim()


def closed_loop_full(p: GeneralizedPlant, terms: ClosedLoopTerms, pair: YoulaPair, horizon: int) -> FirOperator:
    """Affine part plus ``U [I + Q; Z] E (I - E)^{-1} V`` with a truncated Neumann series."""
    base = closed_loop_affine(terms, pair)
    E = pair_residual(p, pair.Qf, pair.Zf).trim()
    if E.is_zero():
        return base
    inv, _ = op_neumann_inverse(E, horizon, tol=1e-12)
    IQZ = vstack([_I(p.n + p.p) + pair.Qf, pair.Zf])
    corr = op_mul(op_mul(op_mul(terms.U, IQZ, horizon), op_mul(E, inv, horizon), horizon), terms.V, horizon)
    return (base + corr).trim()


@dataclass
class BoundsPoint:
    rho2: float
    N: int
    gamma_upper: float
    gamma_lower: float
    eps: float
    status_upper: str
    status_lower: str
    seconds: float
    upper_lp_value: float = np.nan
    lower_lp_value: float = np.nan

    @property
    def gap(self) -> float:
        return self.gamma_upper - self.gamma_lower


@dataclass
class BoundsTrace:
    rho1: float
    points: list[BoundsPoint] = field(default_factory=list)
    best_pair: YoulaPair | None = None
    best_upper: float = np.inf
    stop_reason: str = ""
    certified_lower: float = np.nan

    def ordering_violations(self, tol: float = 1e-7) -> list[BoundsPoint]:
        return [pt for pt in self.points
                if np.isfinite(pt.gamma_upper) and pt.gamma_lower > pt.gamma_upper + tol]

    @property
    def final(self) -> BoundsPoint | None:
        return self.points[-1] if self.points else None

    def csv(self) -> str:
        lines = ["rho2,N,gamma_lower,gamma_upper,epsilon,seconds"]
        for pt in self.points:
            lines.append(f"{pt.rho2:.6g},{pt.N},{pt.gamma_lower:.10g},{pt.gamma_upper:.10g},"
                         f"{pt.eps:.10g},{pt.seconds:.3f}")
        return "\n".join(lines) + "\n"


@dataclass
class BoundResult:
    gamma: float
    pair: YoulaPair | None
    eps: float
    status: str
    lp_value: float
    seconds: float
    rows: int = 0
    cols: int = 0


def outputfb_bounds(p: GeneralizedPlant, obs: ObserverDesign, N: int, rho1: float, rho2: float,
                    side: str = "upper", terms: ClosedLoopTerms | None = None,
                    lower_method: str = "fir", lower_horizon: int | None = None,
                    **lp_options) -> BoundResult:
    """Solve the upper- or lower-bound LP at FIR order ``N``.

    Both sides minimise ``||H + U [Q; Z] V|| + eps rho2 / (1 - rho1)`` with
    ``||E_{Q,Z}|| <= eps <= rho1``; the upper side adds
    ``||U|| ||[I + Q; Z]|| ||V|| <= rho2``.  For the lower side,
    ``lower_method="fir"`` keeps the same FIR pairs of order ``N`` and exact
    norms, while ``"truncated"`` measures every norm over lags
    ``0..lower_horizon`` (default ``N``) with coefficients up to that lag,
    which relaxes the problem over all stable pairs.
    """
    if not 0.0 <= rho1 < 1.0:
        raise ValueError("rho1 must lie in [0, 1)")
    if rho2 <= 0:
        raise ValueError("rho2 must be positive")
    if side not in ("upper", "lower"):
        raise ValueError("side must be 'upper' or 'lower'")
    if lower_method not in ("fir", "truncated"):
        raise ValueError("lower_method must be 'fir' or 'truncated'")
    t0 = time.perf_counter()
    terms = terms or closed_loop_terms(p, obs)
    space = VariableSpace()
    horizon = None
    if side == "lower" and lower_method == "truncated":
        horizon = N if lower_horizon is None else lower_horizon
        vars_ = _pair_variables(p, horizon, space, max_lag=horizon)
    else:
        vars_ = _pair_variables(p, N, space)
    Q, Z = _pair_expr(vars_, space.size)
    QZ = AffineFir.vstack([Q, Z])
    obj = QZ.lmul(terms.U).rmul(terms.V) + terms.H
    E = pair_residual(p, Q, Z)
    cons = [NormConstraint(E, "eps", label="model matching")]
    if side == "upper":
        IQZ = AffineFir.vstack([Q + _I(p.n + p.p), Z])
        scale = terms.norm_U * terms.norm_V
        cap = rho2 / scale if scale > 0 else np.inf
        if np.isfinite(cap):
            cons.append(NormConstraint(IQZ, cap, label="[I+Q; Z] norm"))
    prob = MatchingProblem(space, objective=obj, constraints=cons, scalars={"eps": (0.0, rho1)},
                           linear={"eps": rho2 / (1.0 - rho1)}, horizon=horizon, truncate=horizon is not None)
    sol = mm_solve(prob, **lp_options)
    secs = time.perf_counter() - t0
    if not sol.ok:
        return BoundResult(np.inf if side == "upper" else np.nan, None, np.nan, sol.status, np.nan, secs,
                           sol.num_rows, sol.num_cols)
    eps = sol.scalars["eps"]
    pair = _pair_from_blocks(p, sol.blocks, eps, N)
    # recompute from the reconstructed pair rather than trusting the LP value
    if side == "upper":
        achieved = pair_residual(p, pair.Qf, pair.Zf).norm()
        pair = YoulaPair(pair.Q, pair.Z, achieved, N)
        gamma = closed_loop_affine(terms, pair).norm() + max(achieved, eps) * rho2 / (1.0 - rho1)
    else:
        gamma = sol.value
    return BoundResult(float(gamma), pair, float(eps), sol.status, sol.lp_value, secs, sol.num_rows, sol.num_cols)


def _pair_rho2(terms: ClosedLoopTerms, pair: YoulaPair, n_xy: int) -> float:
    """``||U|| ||[I + Q; Z]|| ||V||`` for a given pair."""
    IQZ = vstack([_I(n_xy) + pair.Qf, pair.Zf])
    return terms.norm_U * IQZ.norm() * terms.norm_V


def algorithm1_run(p: GeneralizedPlant, obs: ObserverDesign, rho1: float = 0.9,
                   N_schedule=(4, 8, 16, 30), gap_target: float = 0.1, rho2_step: float = 1.0,
                   rho2_growth: float = 1.0, rho2_init: float | None = None, init_order: int = 2,
                   max_init_order: int = 8, max_steps: int = 1000, time_budget: float | None = None,
                   lower_method: str = "fir", certify: bool = True, progress=None,
                   **lp_options) -> BoundsTrace:
    """Alternate upper and lower bound LPs while increasing ``rho2``.

    Initialisation finds a full-information pair by model matching (raising
    the FIR order up to ``max_init_order``) and starts ``rho2`` at the
    smallest integer satisfying the norm constraint at that pair.  At every
    order in ``N_schedule`` the bounds are evaluated and ``rho2`` is advanced
    to ``max(rho2 + rho2_step, rho2 * rho2_growth)`` until the gap is at most
    ``gap_target``; the search then moves to the next order (keeping
    ``rho2``).  It stops after the last order or when ``time_budget``
    seconds are used.

    With ``certify``, a truncated-norm lower bound (valid for every stable
    pair, not only FIR pairs of a given order) is computed once at the first
    order; the run also stops as soon as an upper bound is within
    ``gap_target`` of it.
    """
    if gap_target <= 0:
        raise ValueError("gap_target must be positive")
    if rho2_step <= 0 or rho2_growth < 1.0:
        raise ValueError("rho2 must strictly increase between iterations")
    schedule = [int(N) for N in N_schedule]
    if not schedule or any(b < a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("N_schedule must be a nonempty nondecreasing sequence")
    t_start = time.perf_counter()
    terms = closed_loop_terms(p, obs)
    trace = BoundsTrace(rho1)

    init = None
    for order in range(init_order, max_init_order + 1):
        try:
            init = fullinfo_synthesize(p, order, eps_target=rho1, rho1=rho1, **lp_options)
            break
        except SynthesisInfeasible:
            continue
    if init is None:
        raise SynthesisInfeasible(f"no stabilising pair with ||E|| <= {rho1} up to order {max_init_order}")
    need = _pair_rho2(terms, init, p.n + p.p)
    rho2 = float(max(1, math.ceil(need - 1e-12))) if rho2_init is None else float(rho2_init)
    trace.best_pair = init
    trace.best_upper = closed_loop_affine(terms, init).norm() + init.eps * rho2 / (1.0 - rho1)
    log.info("initial pair of order %d, eps %.3g, rho2 = %g", init.order, init.eps, rho2)
    if certify:
        cert = outputfb_bounds(p, obs, schedule[0], rho1, rho2, "lower", terms, lower_method="truncated",
                               **lp_options)
        trace.certified_lower = cert.gamma if cert.status == "optimal" else np.nan

    def out_of_time() -> bool:
        return time_budget is not None and time.perf_counter() - t_start > time_budget

    steps = 0
    for stage, N in enumerate(schedule):
        last = stage == len(schedule) - 1
        lower_cache: BoundResult | None = None
        while True:
            up = outputfb_bounds(p, obs, N, rho1, rho2, "upper", terms, **lp_options)
            # with eps = 0 optimal, a larger weight on eps leaves the lower optimum unchanged
            if lower_cache is not None and lower_cache.eps <= 1e-12:
                lo = BoundResult(lower_cache.gamma, lower_cache.pair, lower_cache.eps, lower_cache.status,
                                 lower_cache.lp_value, 0.0)
            else:
                lo = outputfb_bounds(p, obs, N, rho1, rho2, "lower", terms, lower_method=lower_method,
                                     **lp_options)
                lower_cache = lo if lo.status == "optimal" else None
            pt = BoundsPoint(rho2, N, up.gamma, lo.gamma, up.eps if up.pair is not None else np.nan,
                             up.status, lo.status, up.seconds + lo.seconds, up.lp_value, lo.lp_value)
            trace.points.append(pt)
            steps += 1
            if progress is not None:
                progress(pt)
            if up.pair is not None and up.gamma < trace.best_upper:
                trace.best_upper, trace.best_pair = up.gamma, up.pair
            if np.isfinite(pt.gamma_upper) and pt.gamma_upper - trace.certified_lower <= gap_target:
                trace.stop_reason = "certified gap"
                return trace
            if lo.status not in ("optimal",):
                trace.stop_reason = f"lower-bound LP status {lo.status}"
                return trace
            if np.isfinite(pt.gamma_upper) and pt.gap <= gap_target:
                if last:
                    trace.stop_reason = "gap"
                    return trace
                break
            if out_of_time():
                trace.stop_reason = "time budget"
                return trace
            if steps >= max_steps:
                trace.stop_reason = "step limit"
                return trace
            rho2 = max(rho2 + rho2_step, float(math.ceil(rho2 * rho2_growth)))
        if out_of_time():
            trace.stop_reason = "time budget"
            return trace
    trace.stop_reason = "schedule exhausted"
    return trace


# ---------------------------------------------------------------------------
# structures without multiplicative closure


@dataclass(frozen=True, eq=False)
class NonsubspaceDesign:
    controller: ControllerRealization
    pair: YoulaPair
    qL: FirOperator
    zL: FirOperator
    eps_L: float
    small_gain: float

    @property
    def certified(self) -> bool:
        return self.small_gain < 1.0


def _masked_part(expr: AffineFir, lags: np.ndarray) -> AffineFir:
    """Entries of ``expr`` at lags the mask forbids (everything else zeroed)."""
    K = len(expr)
    forbid = np.arange(K)[:, None, None] < lags[None]
    return AffineFir(np.where(forbid, expr.const, 0.0), np.where(forbid[..., None], expr.lin, 0.0))


def nonsubspace_synthesize(p: GeneralizedPlant, N: int = 2, eps_target: float = 0.5,
                           eps_L_target: float = 0.5, pair: YoulaPair | None = None,
                           **lp_options) -> NonsubspaceDesign:
    """Controller for masks that are only closed under addition.

    The observer minimises ``||(I + Q_L) Lambda A + Z_L C2 - Q_L||`` with
    ``Z_L`` masked and ``(I + Q_L) Lambda B2`` forced into the mask.  The pair
    minimises ``||E_{Q,Z}||`` (or is supplied).  The result is certified when
    ``eps_L ||I + Q|| < 1``; the realization has internal state
    ``[xhat, xi1, xi2, u]`` and uses the estimate ``(I - E_L) xhat``.
    """
    mk = _mask(p)
    n, pp, m = p.n, p.p, p.m
    space = VariableSpace()
    _, qv = space.add("qL", n, n, N, 0)
    _, zv = space.add("zL", n, pp, N, mk.entry_lags("x", "y"))
    qv, zv = qv.with_nv(space.size), zv.with_nv(space.size)
    resid = qv.rmul(op_delay(p.A)) + op_delay(p.A) + zv.rmul(p.C2) - qv
    gate = (qv + _I(n)).rmul(op_delay(p.B2))
    forced = _masked_part(gate, mk.entry_lags("x", "u"))
    sol = mm_solve(MatchingProblem(space, objective=resid,
                                   constraints=[NormConstraint(forced, 0.0, label="(I+Q_L) Lambda B2 in S")]),
                   **lp_options)
    if not sol.ok:
        raise SynthesisInfeasible(f"observer LP ended with status {sol.status}")
    qL, zL, eps_L = sol.blocks["qL"], sol.blocks["zL"], float(sol.value)
    if eps_L > eps_L_target:
        raise SynthesisInfeasible(f"observer residual {eps_L:.6g} exceeds {eps_L_target}", eps_L)
    if pair is None:
        space = VariableSpace()
        vars_ = _pair_variables(p, N, space)
        Q, Z = _pair_expr(vars_, space.size)
        psol = mm_solve(MatchingProblem(space, objective=pair_residual(p, Q, Z)), **lp_options)
        if not psol.ok:
            raise SynthesisInfeasible(f"pair LP ended with status {psol.status}")
        if psol.value > eps_target:
            raise SynthesisInfeasible(f"best ||E_QZ|| = {psol.value:.6g} exceeds {eps_target}", psol.value)
        pair = _pair_from_blocks(p, psol.blocks, psol.value, N)
    small_gain = eps_L * (_I(n + pp) + pair.Qf).norm()
    G = op_mul(_I(n) + qL, op_delay(p.B2)).trim()
    Qb, Z1, Z2 = pair.Q, pair.Z[0, 0], pair.Z[0, 1]
    A = block_assemble([
        [_Z(n, n), _Z(n, n), _Z(n, pp), G],
        [_I(n), -Qb[0, 0], -Qb[0, 1], _Z(n, m)],
        [_Z(pp, n), -Qb[1, 0], -Qb[1, 1], _Z(pp, m)],
        [_Z(m, n), Z1, Z2, _Z(m, m)],
    ])
    B = block_assemble([[-zL], [_Z(n, pp)], [_I(pp)], [_Z(m, pp)]])
    C = block_assemble([[_Z(m, n), _Z(m, n), _Z(m, pp), _I(m)]])
    D = block_assemble([[_Z(m, pp)]])
    k = ControllerRealization(A, B, C, D, "non-subspace", ("xhat", "xi1", "xi2", "u"))
    return NonsubspaceDesign(k, pair, qL, zL, eps_L, float(small_gain))
