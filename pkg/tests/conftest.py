import numpy as np
import pytest

from dcfsec.estimator import solve_steady_state
from dcfsec.netmodel import (
    DetectorSettings, ProcessModel, Scenario, SensorModel, Topology, build_paper_scenario,
)


@pytest.fixture(scope="session")
def paper():
    return build_paper_scenario(0)


@pytest.fixture(scope="session")
def paper_steady(paper):
    return solve_steady_state(paper)


def ring_scenario(N=3, n=2, m=1, seed=0, a_scale=1.02, extra=(), epsilon=None, C=None):
    """Small directed ring (edges i <- i-1) with optional extra edges."""
    rng = np.random.default_rng(seed)
    A = a_scale * np.linalg.qr(rng.standard_normal((n, n)))[0]
    edges = [(i % N + 1, i) for i in range(1, N + 1)] + list(extra)
    if C is None:
        C = [rng.standard_normal((m, n)) for _ in range(N)]
    sensors = [SensorModel(k + 1, C[k], 0.5 * np.eye(np.atleast_2d(C[k]).shape[0])) for k in range(N)]
    topo = Topology(N, tuple(edges))
    eps = epsilon if epsilon is not None else 0.5 / topo.max_in_degree
    return Scenario(ProcessModel(A, 0.01 * np.eye(n), 0.01 * np.eye(n)), tuple(sensors), topo, eps,
                    DetectorSettings(), seed)


# lines collected by the acceptance suite and echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
