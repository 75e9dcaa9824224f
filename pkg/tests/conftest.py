from pathlib import Path

import numpy as np
import pytest

from yoss.oplib import FirOperator
from yoss.plant import Subsystem, plant_from_subsystems
from yoss.structure import Link

ROOT = Path(__file__).resolve().parents[1]
PROJECT = ROOT / "projects" / "two_node_nested.yoss"
CONTROLLER = ROOT / "projects" / "two_node_nested.controller.json"

A = [[0.5, 0.0], [0.3, 1.2]]
B1 = [[1.0], [-0.5]]
B2 = [[0.5], [1.0]]
B3 = [[1.0], [0.1]]
C1 = [[1.0, 2.0]]
C2 = [[0.1, 1.0]]
C3 = [[0.2, 0.1]]

# observer coefficients printed with the two-node example (4 decimals)
PRINTED_QL = [
    [[0.4680, -0.3197, 0, 0], [0.1685, -0.1151, 0, 0], [0, 0, 0.4785, -0.2148], [0, 0, 0.1722, -0.0780]],
    [[0.1381, -0.3836, 0, 0], [0.0497, -0.1381, 0, 0], [0.0941, -0.9590, 0.1570, -0.4361],
     [-0.0048, -0.2376, 0.0564, -0.1567]],
    [[0, 0, 0, 0], [0, 0, 0, 0], [-0.0397, -0.0094, 0, 0], [-0.0143, -0.0034, 0, 0]],
]
PRINTED_ZL = [
    [[-0.3197, 0], [-1.3151, 0], [0, -0.2148], [0, -1.2780]],
    [[0, 0], [0, 0], [-1.0590, -0.1784], [-0.2476, -0.0631]],
    [[0.4604, 0], [0.1657, 0], [1.0957, 0.5233], [0.2653, 0.1880]],
]


def build_nested_plant():
    s1 = Subsystem(A=A, B1=B1, B2=B2, C1=C1, D12=[[1.0]], C2=C2, D21=[[1.0]], C3={1: C3})
    s2 = Subsystem(A=A, B2=B2, C1=C1, D12=[[1.0]], C2=C2, D21=[[1.0]], B3={0: B3})
    return plant_from_subsystems([s1, s2], [Link(0, 1, 1)])


@pytest.fixture(scope="session")
def nested_plant():
    return build_nested_plant()


@pytest.fixture(scope="session")
def printed_observer():
    return FirOperator.from_list(PRINTED_QL), FirOperator.from_list(PRINTED_ZL)


@pytest.fixture(scope="session")
def nested_observer(nested_plant):
    from yoss.estimator import estimator_synthesize
    return estimator_synthesize(nested_plant, 2)


@pytest.fixture(scope="session")
def nested_pair(nested_plant):
    from yoss.synthesis import fullinfo_synthesize
    return fullinfo_synthesize(nested_plant, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def scalar(*coeffs) -> FirOperator:
    return FirOperator(np.array(coeffs, dtype=float).reshape(-1, 1, 1))
