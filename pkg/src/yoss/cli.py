"""Command-line front end: aggregate, estimate, synthesize, bounds, simulate, verify.

Exit codes: 0 ok, 2 parse error, 3 infeasible, 4 verification failure,
5 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .estimator import EstimatorInfeasible, ObserverDesign, design_summary, estimator_from_coefficients, \
    estimator_synthesize
from .formats import ProjectError, fir_from_json, fir_to_json, load_controller, load_project, save_controller, \
    _mask_to_json
from .lpcore import LPError
from .oplib import OperatorError
from .plant import plant_validate, spectral_radius
from .sim import DivergenceError, NoiseSpec, closedloop_simulate, empirical_gain, realizability_audit, signals_csv
from .synthesis import (SynthesisInfeasible, algorithm1_run, closed_loop_affine, closed_loop_terms,
                        controller_realize_output, nonsubspace_synthesize, pair_residual, realization_violations)

__all__ = ["main", "EXIT_OK", "EXIT_PARSE", "EXIT_INFEASIBLE", "EXIT_VERIFY", "EXIT_NUMERICAL"]

EXIT_OK, EXIT_PARSE, EXIT_INFEASIBLE, EXIT_VERIFY, EXIT_NUMERICAL = 0, 2, 3, 4, 5

log = logging.getLogger("yoss")


class NumericalFailure(RuntimeError):
    pass


def _outdir(proj, args) -> Path:
    d = Path(args.out or proj.output_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=1, sort_keys=False) + "\n", encoding="utf-8")
    print(f"wrote {path}")


def _observer(proj, p) -> ObserverDesign:
    c = proj.synthesis
    return estimator_synthesize(p, c.observer_order, c.observer_eps, c.observer_variant)


def _observer_json(d: ObserverDesign) -> dict:
    return {"qL": fir_to_json(d.qL), "zL": fir_to_json(d.zL), "eps": d.eps, "variant": d.variant,
            "horizon": d.horizon, "tail": d.tail, "residual": d.residual_formula}


def _observer_from_json(p, data) -> ObserverDesign:
    return estimator_from_coefficients(p, fir_from_json(data["qL"], "observer.qL"),
                                       fir_from_json(data["zL"], "observer.zL"), data["variant"],
                                       int(data["horizon"]))


def _schedule(proj, args) -> list[int]:
    if args.schedule:
        return [int(s) for s in args.schedule.split(",")]
    return list(proj.synthesis.N_schedule)


def _run_bounds(proj, p, obs, args):
    c = proj.synthesis
    budget = args.time_budget if getattr(args, "time_budget", None) is not None else c.time_budget

    def show(pt):
        print(f"rho2={pt.rho2:g} N={pt.N} lower={pt.gamma_lower:.6g} upper={pt.gamma_upper:.6g} "
              f"eps={pt.eps:.3g} ({pt.seconds:.2f} s)", flush=True)

    trace = algorithm1_run(p, obs, c.rho1, _schedule(proj, args), c.gap_target, c.rho2_step, c.rho2_growth,
                           max_steps=c.max_steps, time_budget=budget, lower_method=c.lower_method,
                           progress=None if args.quiet else show)
    bad = [pt for pt in trace.points if "numerical" in (pt.status_upper, pt.status_lower)]
    if bad:
        raise NumericalFailure(f"LP numerical failure at rho2={bad[0].rho2:g}, N={bad[0].N}")
    return trace


# ---------------------------------------------------------------------------
# commands


def cmd_aggregate(args) -> int:
    proj = load_project(args.project)
    p = proj.plant()
    rep = plant_validate(p)
    ops = {k: fir_to_json(v) for k, v in p.operators().items()}
    data = {"operators": ops, "mask": _mask_to_json(p.mask.d),
            "dims": {k: list(p.dims.sizes(k)) for k in "xyuwz"},
            "spectral_radius": spectral_radius(p), "report": rep.lines(), "ok": rep.ok}
    _write_json(_outdir(proj, args) / "plant.json", data)
    for line in rep.lines():
        print(line)
    return EXIT_OK if rep.ok else EXIT_VERIFY


def cmd_estimate(args) -> int:
    proj = load_project(args.project)
    p = proj.plant()
    d = _observer(proj, p)
    print(f"observer order {max(d.qL.order, d.zL.order)}: ||E_L|| = {d.eps:.3g} (variant {d.variant})")
    _write_json(_outdir(proj, args) / "observer.json", {**_observer_json(d), "summary": design_summary(d)})
    return EXIT_OK


def cmd_bounds(args) -> int:
    proj = load_project(args.project)
    p = proj.plant()
    obs = _observer(proj, p)
    t0 = time.perf_counter()
    trace = _run_bounds(proj, p, obs, args)
    out = _outdir(proj, args) / "bounds.csv"
    out.write_text(trace.csv(), encoding="utf-8")
    print(f"wrote {out}")
    fin = trace.final
    print(f"final: N={fin.N} rho2={fin.rho2:g} lower={fin.gamma_lower:.6g} upper={fin.gamma_upper:.6g} "
          f"gap={fin.gap:.3g}; stop: {trace.stop_reason}; {time.perf_counter() - t0:.1f} s")
    return EXIT_OK


def cmd_synthesize(args) -> int:
    proj = load_project(args.project)
    p = proj.plant()
    c = proj.synthesis
    outdir = _outdir(proj, args)
    if args.route == "nonsubspace":
        des = nonsubspace_synthesize(p, c.pair_order, c.pair_eps, c.observer_eps)
        if not des.certified:
            raise SynthesisInfeasible(f"small-gain check failed: eps_L ||I + Q|| = {des.small_gain:.3g}")
        cert = {"route": "nonsubspace", "eps_L": des.eps_L, "small_gain": des.small_gain, "eps": des.pair.eps}
        obs_json = {"qL": fir_to_json(des.qL), "zL": fir_to_json(des.zL), "eps": des.eps_L, "variant": "B"}
        save_controller(outdir / "controller.json", des.controller, des.pair,
                        {"certificate": cert, "observer": obs_json})
        print(f"wrote {outdir / 'controller.json'}")
        return EXIT_OK
    obs = _observer(proj, p)
    trace = _run_bounds(proj, p, obs, args)
    (outdir / "bounds.csv").write_text(trace.csv(), encoding="utf-8")
    pair = trace.best_pair
    k = controller_realize_output(pair, obs, p)
    fin = trace.final
    cert = {"route": "output-feedback", "gamma_upper": trace.best_upper, "gamma_lower": fin.gamma_lower,
            "rho1": c.rho1, "rho2": max(pt.rho2 for pt in trace.points), "N": pair.order, "eps": pair.eps}
    save_controller(outdir / "controller.json", k, pair, {"certificate": cert, "observer": _observer_json(obs)})
    print(f"wrote {outdir / 'controller.json'} (gamma_upper {trace.best_upper:.6g})")
    return EXIT_OK


def _noise_and_init(proj, p):
    s = proj.simulation
    rng = np.random.default_rng(s.seed)
    w = rng.uniform(-s.w_amplitude, s.w_amplitude, size=(s.T, p.q))
    x0 = rng.normal(size=p.n)
    return w, x0


def cmd_simulate(args) -> int:
    proj = load_project(args.project)
    p = proj.plant()
    k, _, _ = load_controller(args.controller)
    s = proj.simulation
    w, x0 = _noise_and_init(proj, p)
    noise = NoiseSpec(args.noise, args.noise, s.seed + 1, s.seed + 2)
    run = closedloop_simulate(p, k, w=w, x0=x0, noise=noise, T=s.T, threshold=s.threshold)
    outdir = _outdir(proj, args)
    rep = run.report
    data = {"sup": rep.sup, "diverged": rep.diverged, "horizon": rep.horizon, "threshold": rep.threshold}
    if not rep.diverged:
        data["empirical_gain"] = empirical_gain(p, k, s.T)
    _write_json(outdir / "run.json", data)
    (outdir / "signals.csv").write_text(signals_csv(run.signals, ["w", "x", "y", "u", "z", "xK"]), encoding="utf-8")
    print(f"wrote {outdir / 'signals.csv'}")
    return EXIT_VERIFY if rep.diverged else EXIT_OK


def verify_controller(p, k, pair, extra, sim) -> list[tuple[str, bool, str]]:
    """Checks behind ``verify``: (name, passed, detail)."""
    checks = []
    bad = realization_violations(k, p)
    checks.append(("mask membership", not bad, ", ".join(bad) or "all blocks in the structure"))
    checks.append(("well-posed", k.well_posed(), "I - A_K(0) invertible"))
    aud = realizability_audit(p, k, sim.trials, sim.amplitudes, sim.T, sim.tolerance, sim.threshold, sim.seed)
    checks.append(("realizability audit", aud.passed, "; ".join(aud.lines())))
    rng = np.random.default_rng(sim.seed)
    run = closedloop_simulate(p, k, x0=rng.normal(size=p.n), T=sim.T, threshold=sim.threshold)
    peak = max(float(np.abs(v).max(initial=0)) for v in run.signals.values())
    tail = max(float(np.abs(v[-1]).max(initial=0)) for v in run.signals.values())
    ok = not run.report.diverged and tail <= 1e-6 * max(peak, 1e-300)
    checks.append(("stabilization", ok, f"final/peak = {tail / max(peak, 1e-300):.3g}"))
    cert = extra.get("certificate")
    if pair is not None:
        E = pair_residual(p, pair.Qf, pair.Zf).norm()
        checks.append(("pair residual", E <= pair.eps + 1e-9 and E < 1.0, f"||E_QZ|| = {E:.3g}"))
    if cert and "gamma_upper" in cert and pair is not None and "observer" in extra and ok:
        obs = _observer_from_json(p, extra["observer"])
        terms = closed_loop_terms(p, obs)
        g = closed_loop_affine(terms, pair).norm() + pair.eps * cert["rho2"] / (1.0 - cert["rho1"])
        checks.append(("certificate recheck", g <= cert["gamma_upper"] + 1e-6,
                       f"recomputed {g:.8g} vs certified {cert['gamma_upper']:.8g}"))
        emp = empirical_gain(p, k, sim.T)
        checks.append(("empirical gain", emp <= cert["gamma_upper"] + 1e-6,
                       f"{emp:.8g} <= {cert['gamma_upper']:.8g}"))
    return checks


def cmd_verify(args) -> int:
    proj = load_project(args.project)
    p = proj.plant()
    k, pair, extra = load_controller(args.controller)
    checks = verify_controller(p, k, pair, extra, proj.simulation)
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in checks) else EXIT_VERIFY


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="yoss", description="Structured controller synthesis over networks.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help_, controller=False):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("project")
        if controller:
            sp.add_argument("controller")
        sp.add_argument("--out", help="output directory (default: the project's outputs.dir)")
        sp.set_defaults(func=fn)
        return sp

    add("aggregate", cmd_aggregate, "build the generalized plant and report assumptions")
    add("estimate", cmd_estimate, "synthesize the structured observer")
    for name, fn, help_ in (("bounds", cmd_bounds, "run the bound iteration and write bounds.csv"),
                            ("synthesize", cmd_synthesize, "synthesize a controller realization")):
        sp = add(name, fn, help_)
        sp.add_argument("--schedule", help="comma-separated FIR orders overriding N_schedule")
        sp.add_argument("--time-budget", type=float, dest="time_budget")
        sp.add_argument("-q", "--quiet", action="store_true")
        if name == "synthesize":
            sp.add_argument("--route", choices=("output", "nonsubspace"), default="output")
    sp = add("simulate", cmd_simulate, "closed-loop simulation with signal CSVs", controller=True)
    sp.add_argument("--noise", type=float, default=0.0, help="controller noise amplitude")
    add("verify", cmd_verify, "audit a controller file", controller=True)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ProjectError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (EstimatorInfeasible, SynthesisInfeasible) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NumericalFailure, LPError, OperatorError, DivergenceError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except RuntimeError as exc:  # LP status other than optimal
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
