"""JSON project and controller files.

Matrices are row-major nested lists, FIR operators are lists of matrices
indexed by lag, and masks are node-level lists with the string ``"inf"`` for
absent links.  Unknown keys are rejected with the offending path.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .oplib import BlockOperator, FirOperator, block_assemble
from .plant import GeneralizedPlant, Subsystem, plant_from_subsystems
from .structure import Link, StructureMask
from .synthesis import ControllerRealization, YoulaPair

__all__ = ["ProjectError", "Project", "SynthesisConfig", "SimulationConfig", "load_project", "parse_project",
           "controller_to_json", "controller_from_json", "save_controller", "load_controller",
           "fir_to_json", "fir_from_json"]

PROJECT_FORMAT = "yoss-project/1"
CONTROLLER_FORMAT = "yoss-controller/1"


class ProjectError(ValueError):
    """Malformed project or controller file; ``path`` locates the field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass
class SynthesisConfig:
    N_schedule: list[int] = field(default_factory=lambda: [4, 8, 16, 30])
    rho1: float = 0.9
    gap_target: float = 0.1
    rho2_step: float = 1.0
    rho2_growth: float = 1.0
    max_steps: int = 1000
    time_budget: float | None = None
    lower_method: str = "fir"
    observer_order: int = 2
    observer_eps: float = 0.1
    observer_variant: str = "A"
    pair_order: int = 2
    pair_eps: float = 0.5


@dataclass
class SimulationConfig:
    T: int = 500
    seed: int = 0
    trials: int = 3
    amplitudes: list[float] = field(default_factory=lambda: [0.1, 1.0, 10.0])
    tolerance: float = 0.05
    threshold: float = 1e9
    w_amplitude: float = 1.0


@dataclass
class Project:
    name: str
    subsystems: list[Subsystem]
    links: list[Link]
    mask: StructureMask | None
    synthesis: SynthesisConfig
    simulation: SimulationConfig
    output_dir: str = "out"

    def plant(self) -> GeneralizedPlant:
        return plant_from_subsystems(self.subsystems, self.links, self.mask)


# ---------------------------------------------------------------------------
# primitive converters


def _matrix(x, path: str) -> np.ndarray:
    try:
        a = np.asarray(x, dtype=float)
    except (TypeError, ValueError):
        raise ProjectError(path, "expected a numeric matrix (list of rows)") from None
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ProjectError(path, f"expected a matrix, got an array of rank {a.ndim}")
    if not np.all(np.isfinite(a)):
        raise ProjectError(path, "matrix entries must be finite")
    return a


def fir_to_json(t: FirOperator) -> list:
    return [[[float(v) for v in row] for row in t.coeffs[k]] for k in range(len(t))]


def fir_from_json(x, path: str = "") -> FirOperator:
    if not isinstance(x, list) or not x:
        raise ProjectError(path, "expected a nonempty list of lag matrices")
    mats = [_matrix(m, f"{path}[{k}]") for k, m in enumerate(x)]
    if len({m.shape for m in mats}) != 1:
        raise ProjectError(path, "lag matrices have different shapes")
    return FirOperator(np.stack(mats))


def block_to_json(b: BlockOperator) -> dict:
    return {"row_partition": list(b.row_partition), "col_partition": list(b.col_partition),
            "blocks": [[fir_to_json(b[i, j]) for j in range(len(b.col_partition))]
                       for i in range(len(b.row_partition))]}


def block_from_json(x, path: str) -> BlockOperator:
    _keys(x, path, {"row_partition", "col_partition", "blocks"}, {"row_partition", "col_partition", "blocks"})
    grid = [[fir_from_json(t, f"{path}.blocks[{i}][{j}]") for j, t in enumerate(row)]
            for i, row in enumerate(x["blocks"])]
    try:
        b = block_assemble(grid)
    except Exception as exc:  # shape errors from assembly
        raise ProjectError(path, str(exc)) from None
    if list(b.row_partition) != list(x["row_partition"]) or list(b.col_partition) != list(x["col_partition"]):
        raise ProjectError(path, "partitions do not match the block sizes")
    return b


def _mask_to_json(d: np.ndarray) -> list:
    return [["inf" if math.isinf(v) else int(v) for v in row] for row in d]


def _mask_from_json(x, path: str) -> np.ndarray:
    if not isinstance(x, list):
        raise ProjectError(path, "expected a square list of lags")
    rows = []
    for i, row in enumerate(x):
        if not isinstance(row, list):
            raise ProjectError(f"{path}[{i}]", "expected a list")
        out = []
        for j, v in enumerate(row):
            if v == "inf":
                out.append(math.inf)
            elif isinstance(v, (int, float)) and not isinstance(v, bool) and v >= 0:
                out.append(float(v))
            else:
                raise ProjectError(f"{path}[{i}][{j}]", "expected a nonnegative lag or \"inf\"")
        rows.append(out)
    d = np.array(rows, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ProjectError(path, "mask must be square")
    return d


def _keys(x, path: str, allowed: set[str], required: set[str] = frozenset()) -> None:
    if not isinstance(x, dict):
        raise ProjectError(path, "expected an object")
    unknown = sorted(set(x) - allowed)
    if unknown:
        raise ProjectError(f"{path}.{unknown[0]}" if path else unknown[0], "unknown key")
    missing = sorted(required - set(x))
    if missing:
        raise ProjectError(path, f"missing required key {missing[0]!r}")


def _load_json(text: str, source: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProjectError(f"{source}:{exc.lineno}:{exc.colno}", exc.msg) from None


# ---------------------------------------------------------------------------
# projects

_NODE_MATS = ("A", "B1", "B2", "C1", "C2", "D11", "D12", "D21")
_NODE_LINKS = ("B3", "C3", "D31")


def _config(cls, x, path: str):
    defaults = cls()
    allowed = set(defaults.__dataclass_fields__)
    _keys(x, path, allowed)
    kw = {}
    for k, v in x.items():
        ref = getattr(defaults, k)
        p = f"{path}.{k}"
        if isinstance(ref, list):
            if not isinstance(v, list) or not all(isinstance(e, (int, float)) and not isinstance(e, bool) for e in v):
                raise ProjectError(p, "expected a list of numbers")
            kw[k] = [type(ref[0])(e) for e in v] if ref else list(v)
        elif isinstance(ref, str):
            if not isinstance(v, str):
                raise ProjectError(p, "expected a string")
            kw[k] = v
        elif v is None and ref is None:
            kw[k] = None
        elif isinstance(v, (int, float)) and not isinstance(v, bool):
            kw[k] = type(ref)(v) if ref is not None else float(v)
        else:
            raise ProjectError(p, "expected a number")
    return cls(**kw)


def parse_project(data, source: str = "<project>") -> Project:
    top = {"format", "name", "nodes", "links", "mask", "synthesis", "simulation", "outputs"}
    _keys(data, "", top, {"format", "nodes"})
    if data["format"] != PROJECT_FORMAT:
        raise ProjectError("format", f"expected {PROJECT_FORMAT!r}")
    nodes = data["nodes"]
    if not isinstance(nodes, list) or not nodes:
        raise ProjectError("nodes", "expected a nonempty list")
    subs = []
    for i, nd in enumerate(nodes):
        path = f"nodes[{i}]"
        _keys(nd, path, {"name", *_NODE_MATS, *_NODE_LINKS}, {"A"})
        kw = {k: _matrix(nd[k], f"{path}.{k}") for k in _NODE_MATS if k in nd}
        for k in _NODE_LINKS:
            if k in nd:
                if not isinstance(nd[k], dict):
                    raise ProjectError(f"{path}.{k}", "expected an object keyed by neighbour index")
                sub = {}
                for key, m in nd[k].items():
                    try:
                        j = int(key)
                    except ValueError:
                        raise ProjectError(f"{path}.{k}.{key}", "neighbour keys must be node indices") from None
                    if not 0 <= j < len(nodes):
                        raise ProjectError(f"{path}.{k}.{key}", "unknown node")
                    sub[j] = _matrix(m, f"{path}.{k}.{key}")
                kw[k] = sub
        subs.append(Subsystem(**kw))
    links = []
    for i, ln in enumerate(data.get("links", [])):
        path = f"links[{i}]"
        _keys(ln, path, {"from", "to", "delay", "extra"}, {"from", "to"})
        for k in ("from", "to", "delay", "extra"):
            if k in ln and (not isinstance(ln[k], int) or isinstance(ln[k], bool) or ln[k] < 0):
                raise ProjectError(f"{path}.{k}", "expected a nonnegative integer")
        for k in ("from", "to"):
            if ln[k] >= len(nodes):
                raise ProjectError(f"{path}.{k}", f"node {ln[k]} does not exist")
        links.append(Link(ln["from"], ln["to"], ln.get("delay", 1), ln.get("extra", 0)))
    mask = None
    if "mask" in data:
        d = _mask_from_json(data["mask"], "mask")
        if d.shape[0] != len(nodes):
            raise ProjectError("mask", f"mask has {d.shape[0]} nodes, project has {len(nodes)}")
        mask = StructureMask(d)
    syn = _config(SynthesisConfig, data.get("synthesis", {}), "synthesis")
    sim = _config(SimulationConfig, data.get("simulation", {}), "simulation")
    out = data.get("outputs", {})
    _keys(out, "outputs", {"dir"})
    proj = Project(str(data.get("name", source)), subs, links, mask, syn, sim, str(out.get("dir", "out")))
    try:
        proj.plant()
    except Exception as exc:  # dimension or link errors from aggregation
        raise ProjectError("nodes", str(exc)) from None
    return proj


def load_project(path) -> Project:
    path = Path(path)
    return parse_project(_load_json(path.read_text(encoding="utf-8"), str(path)), str(path))


# ---------------------------------------------------------------------------
# controllers


def controller_to_json(k: ControllerRealization, pair: YoulaPair | None = None, extra: dict | None = None) -> dict:
    out = {"format": CONTROLLER_FORMAT, "kind": k.kind, "labels": list(k.labels)}
    for name in "ABCD":
        out[name] = block_to_json(getattr(k, name))
    if pair is not None:
        out["pair"] = {"Q": block_to_json(pair.Q), "Z": block_to_json(pair.Z), "eps": pair.eps,
                       "order": pair.order}
    out.update(extra or {})
    return out


def controller_from_json(data, source: str = "<controller>") -> tuple[ControllerRealization, YoulaPair | None, dict]:
    allowed = {"format", "kind", "labels", "A", "B", "C", "D", "pair", "observer", "certificate"}
    _keys(data, "", allowed, {"format", "kind", "labels", "A", "B", "C", "D"})
    if data["format"] != CONTROLLER_FORMAT:
        raise ProjectError("format", f"expected {CONTROLLER_FORMAT!r}")
    blocks = {n: block_from_json(data[n], n) for n in "ABCD"}
    k = ControllerRealization(blocks["A"], blocks["B"], blocks["C"], blocks["D"], str(data["kind"]),
                              tuple(data["labels"]))
    pair = None
    if "pair" in data:
        pd = data["pair"]
        _keys(pd, "pair", {"Q", "Z", "eps", "order"}, {"Q", "Z", "eps", "order"})
        pair = YoulaPair(block_from_json(pd["Q"], "pair.Q"), block_from_json(pd["Z"], "pair.Z"),
                         float(pd["eps"]), int(pd["order"]))
    extra = {key: data[key] for key in ("observer", "certificate") if key in data}
    return k, pair, extra


def save_controller(path, k: ControllerRealization, pair: YoulaPair | None = None, extra: dict | None = None) -> None:
    Path(path).write_text(json.dumps(controller_to_json(k, pair, extra), indent=1) + "\n", encoding="utf-8")


def load_controller(path):
    path = Path(path)
    return controller_from_json(_load_json(path.read_text(encoding="utf-8"), str(path)), str(path))
