"""Closed-loop simulation of a plant with a (noisy) controller realization.

The controller runs as

    x_K = A_K x_K + B_K y + n_x,    u = C_K x_K + D_K y + n_u

where ``n_x`` and ``n_u`` model communication noise between subcontrollers.
The lag-0 part of the interconnection is solved exactly at every step.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .oplib import FirOperator, OperatorError, Signal, block_assemble
from .plant import GeneralizedPlant
from .synthesis import ControllerRealization

__all__ = ["NoiseSpec", "RunReport", "ClosedLoopRun", "AuditReport", "closedloop_simulate", "empirical_gain",
           "closedloop_impulse", "realizability_audit", "signals_csv", "unstable_wrapper", "DivergenceError", "BLOWUP"]

BLOWUP = 1e9


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    """Injected noise on controller states (``x``) and controls (``u``)."""

    amp_x: float = 0.0
    amp_u: float = 0.0
    seed_x: int = 0
    seed_u: int = 1
    distribution: str = "sign"

    def __post_init__(self):
        if self.amp_x < 0 or self.amp_u < 0:
            raise ValueError("noise amplitudes must be nonnegative")
        if self.distribution not in ("sign", "interval"):
            raise ValueError("distribution must be 'sign' or 'interval'")

    def draw(self, amp: float, seed: int, T: int, dim: int) -> np.ndarray:
        if amp == 0.0 or dim == 0:
            return np.zeros((T, dim))
        rng = np.random.default_rng(seed)
        if self.distribution == "sign":
            return amp * rng.choice([-1.0, 1.0], size=(T, dim))
        return rng.uniform(-amp, amp, size=(T, dim))


@dataclass
class RunReport:
    sup: dict[str, float]
    diverged: bool
    horizon: int
    threshold: float = BLOWUP
    gains: dict[str, float] = field(default_factory=dict)

    def peak(self) -> float:
        return max(self.sup.values()) if self.sup else 0.0


@dataclass
class ClosedLoopRun:
    report: RunReport
    signals: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.signals[name]


def _tap(op: FirOperator, hist: np.ndarray, t: int, start: int = 0) -> np.ndarray:
    """``sum_{k >= start} op(k) hist[t - k]`` over available history."""
    out = np.zeros(op.rows)
    for k in range(start, min(len(op), t + 1)):
        ck = op.coeffs[k]
        if ck.any():
            out += ck @ hist[t - k]
    return out


def _samples(s, dim: int, T: int, name: str) -> np.ndarray:
    if s is None:
        return np.zeros((T, dim))
    a = s.samples if isinstance(s, Signal) else np.asarray(s, dtype=float).reshape(-1, dim)
    if a.shape[1] != dim:
        raise OperatorError(f"{name} has dim {a.shape[1]}, expected {dim}")
    if a.shape[0] < T:
        a = np.vstack([a, np.zeros((T - a.shape[0], dim))])
    return a[:T]


def _check_dims(p: GeneralizedPlant, k: ControllerRealization) -> dict[str, FirOperator]:
    f = k.flat()
    nk = f["A"].rows
    if f["A"].cols != nk or f["B"].shape != (nk, p.p) or f["C"].shape != (p.m, nk) or f["D"].shape != (p.m, p.p):
        raise OperatorError(f"controller dimensions do not fit a plant with p={p.p}, m={p.m}")
    return f


def closedloop_simulate(p: GeneralizedPlant, k: ControllerRealization, w=None, x0=None,
                        noise: NoiseSpec | None = None, T: int = 500, threshold: float = BLOWUP,
                        rcond_min: float = 1e-10) -> ClosedLoopRun:
    """Simulate plant and controller jointly over ``t = 0..T-1``."""
    f = _check_dims(p, k)
    AK, BK, CK, DK = f["A"], f["B"], f["C"], f["D"]
    nk = AK.rows
    noise = noise or NoiseSpec()
    ws = _samples(w, p.q, T, "w")
    nx = noise.draw(noise.amp_x, noise.seed_x, T, nk)
    nu = noise.draw(noise.amp_u, noise.seed_u, T, p.m)
    # lag-0 loop on [x_K; u]: plant has no u -> y feedthrough, so y(t) is known first
    a0 = AK.lag(0) if nk else np.zeros((0, 0))
    loop = np.block([[np.eye(nk) - a0, np.zeros((nk, p.m))], [-CK.lag(0), np.eye(p.m)]])
    if nk and 1.0 / np.linalg.cond(loop) < rcond_min:
        raise OperatorError("algebraic loop of the interconnection is singular")
    loop_inv = np.linalg.inv(loop)

    x = np.zeros((T, p.n))
    y = np.zeros((T, p.p))
    z = np.zeros((T, p.r))
    u = np.zeros((T, p.m))
    xk = np.zeros((T, nk))
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        if x0.shape[0] != p.n:
            raise OperatorError(f"x0 has dim {x0.shape[0]}, expected {p.n}")
    diverged = False
    last = T
    for t in range(T):
        if t > 0:
            x[t] = _tap(p.A, x, t - 1) + _tap(p.B1, ws, t - 1) + _tap(p.B2, u, t - 1)
        if t == 0 and x0 is not None:
            x[t] += x0
        y[t] = _tap(p.C2, x, t) + _tap(p.D21, ws, t)
        rhs_k = _tap(AK, xk, t, 1) + _tap(BK, y, t) + nx[t]
        rhs_u = _tap(CK, xk, t, 1) + _tap(DK, y, t) + nu[t]
        sol = loop_inv @ np.concatenate([rhs_k, rhs_u])
        xk[t], u[t] = sol[:nk], sol[nk:]
        z[t] = _tap(p.C1, x, t) + _tap(p.D11, ws, t) + _tap(p.D12, u, t)
        worst = max(np.abs(x[t]).max(initial=0), np.abs(xk[t]).max(initial=0), np.abs(u[t]).max(initial=0))
        if not np.isfinite(worst) or worst >= threshold:
            diverged = True
            last = t + 1
            break
    sig = {"x": x[:last], "y": y[:last], "z": z[:last], "u": u[:last], "xK": xk[:last], "w": ws[:last]}
    if "xhat" in k.labels and k.kind == "output-feedback":
        sig["e"] = xk[:last, : p.n] - x[:last]
    sup = {name: float(np.abs(v).max(initial=0.0)) for name, v in sig.items() if name != "w"}
    if diverged:
        sup = {name: (v if np.isfinite(v) else np.inf) for name, v in sup.items()}
    return ClosedLoopRun(RunReport(sup, diverged, T, threshold), sig)


def closedloop_impulse(p: GeneralizedPlant, k: ControllerRealization, T: int) -> FirOperator:
    """Impulse response of the closed loop from ``w`` to ``z`` over ``T`` lags."""
    out = np.zeros((T, p.r, p.q))
    for j in range(p.q):
        run = closedloop_simulate(p, k, w=Signal.impulse(p.q, T, j), T=T)
        if run.report.diverged:
            raise DivergenceError(f"closed loop diverges (channel w{j})")
        out[:, :, j] = run["z"]
    return FirOperator(out)


def empirical_gain(p: GeneralizedPlant, k: ControllerRealization, T: int = 500) -> float:
    """Row-sum norm of the truncated ``w -> z`` impulse response (a lower estimate)."""
    return closedloop_impulse(p, k, T).norm()


@dataclass
class AuditReport:
    amplification: dict[str, dict[float, float]]
    diverged: list[tuple[str, float, int]]
    nonlinear: list[str]
    tolerance: float

    @property
    def passed(self) -> bool:
        return not self.diverged and not self.nonlinear

    def lines(self) -> list[str]:
        out = []
        for ch, per in self.amplification.items():
            vals = ", ".join(f"{a:g}: {g:.6g}" for a, g in sorted(per.items()))
            out.append(f"{ch}: amplification {{{vals}}}")
        out += [f"divergence on {ch} at amplitude {a:g} (seed {s})" for ch, a, s in self.diverged]
        out += [f"nonlinear growth on {ch}" for ch in self.nonlinear]
        out.append("PASS" if self.passed else "FAIL")
        return out


def realizability_audit(p: GeneralizedPlant, k: ControllerRealization, trials: int = 3,
                        amplitudes=(0.1, 1.0, 10.0), T: int = 500, tolerance: float = 0.05,
                        threshold: float = BLOWUP, seed: int = 0) -> AuditReport:
    """Inject noise on each channel alone and compare sup-norm amplification across amplitudes."""
    amps = sorted(float(a) for a in amplitudes)
    if not amps or amps[0] <= 0:
        raise ValueError("amplitudes must be positive")
    amp: dict[str, dict[float, float]] = {"n_x": {}, "n_u": {}}
    diverged = []
    for ch in amp:
        for a in amps:
            worst = 0.0
            for trial in range(trials):
                s = seed + 2 * trial
                spec = NoiseSpec(amp_x=a if ch == "n_x" else 0.0, amp_u=a if ch == "n_u" else 0.0,
                                 seed_x=s, seed_u=s + 1)
                rep = closedloop_simulate(p, k, noise=spec, T=T, threshold=threshold).report
                if rep.diverged:
                    diverged.append((ch, a, s))
                    worst = np.inf
                    break
                worst = max(worst, rep.peak() / a)
            amp[ch][a] = worst
    nonlinear = []
    for ch, per in amp.items():
        vals = np.array([per[a] for a in amps])
        if not np.all(np.isfinite(vals)):
            continue
        ref = max(vals.max(), 1e-300)
        if (vals.max() - vals.min()) > tolerance * ref:
            nonlinear.append(ch)
    return AuditReport(amp, diverged, nonlinear, tolerance)


def unstable_wrapper(k: ControllerRealization, pole: float = 2.0, channel: int = 0) -> ControllerRealization:
    """Input-output equivalent realization with a hidden unstable mode.

    Adds a state ``s = pole Lambda s + y_channel`` and feeds ``(I - pole Lambda) s - y_channel``
    (identically zero without noise) into the first control; injected noise on
    ``s`` excites the unstable mode.
    """
    f = k.flat()
    nk, p_, m = f["A"].rows, f["B"].cols, f["C"].rows
    K = max(len(f[n]) for n in "ABCD") + 1

    def pad(t: FirOperator) -> np.ndarray:
        c = np.zeros((K,) + t.shape)
        c[: len(t)] = t.coeffs
        return c

    A = np.zeros((K, nk + 1, nk + 1))
    A[:, :nk, :nk] = pad(f["A"])
    A[1, nk, nk] = pole
    B = np.zeros((K, nk + 1, p_))
    B[:, :nk] = pad(f["B"])
    B[0, nk, channel] = 1.0
    C = np.zeros((K, m, nk + 1))
    C[:, :, :nk] = pad(f["C"])
    C[0, 0, nk] = 1.0
    C[1, 0, nk] = -pole
    D = pad(f["D"])
    D[0, 0, channel] -= 1.0
    one = lambda a: block_assemble([[FirOperator(a)]])  # noqa: E731
    return ControllerRealization(one(A), one(B), one(C), one(D), k.kind + "+hidden-mode", ("flat",))


def signals_csv(signals: dict[str, np.ndarray], names=None) -> str:
    """One row per time step, one column per signal component."""
    names = list(names or signals)
    T = min(len(signals[n]) for n in names)
    header = ["t"] + [f"{n}{i}" for n in names for i in range(signals[n].shape[1])]
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for t in range(T):
        wr.writerow([t] + [repr(float(v)) for n in names for v in signals[n][t]])
    return buf.getvalue()
