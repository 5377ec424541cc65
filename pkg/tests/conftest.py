import numpy as np
import pytest

from strake.geomkit import naca4_loop
from strake.medial import build_shell
from strake.partition import WakeParams, build_topology
from strake.runspec import parse_runspec

BOX = (-5.0, 7.0, -5.0, 5.0)

# Reference aerofoil run: NACA0012 open TE, H topology, T=0.05, P=4, n=5, r_TE=2, L_w=2.
REFERENCE_SPEC = {
    "geometry": {"naca4": {"digits": "0012", "te": "open"}},
    "domain": {"box": {"xmin": BOX[0], "xmax": BOX[1], "ymin": BOX[2], "ymax": BOX[3]}},
    "shell": {"thickness": 0.05},
    "topology": "H",
    "wake": {"length": 2.0, "half_angle_deg": 3.0, "columns": 8},
    "sizing": {"h_wall": 0.01, "h_far": 0.5},
    "order": {"P": 4},
    "split": {"n": 5, "ratio": 2.0, "wake_ratio_te": 2.0},
}


@pytest.fixture(scope="session")
def naca_loop():
    return naca4_loop("0012", "open")


@pytest.fixture(scope="session")
def naca_shell(naca_loop):
    return build_shell(naca_loop, 0.05)


@pytest.fixture(scope="session")
def h_graph(naca_shell):
    return build_topology(naca_shell, "H", WakeParams(2.0, 3.0, 8), domain=BOX)


@pytest.fixture(scope="session")
def reference_run():
    from strake.pipeline import run

    return run(parse_runspec(REFERENCE_SPEC), "final", write=False)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# Acceptance verdicts, filled by tests/test_acceptance.py and echoed at the end of the run.
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
