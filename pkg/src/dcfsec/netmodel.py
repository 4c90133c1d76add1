"""Plant, sensors and directed communication topology.

Node labels are 1-based everywhere in the public API, matching channel
names such as ``(14, 2)``: an edge ``(i, j)`` carries data from sensor
``j`` to sensor ``i``.  Arrays indexed by node use ``label - 1``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .matana import DEFAULT_TOL, ToleranceProfile, null_space_basis, numeric_rank

__all__ = [
    "ScenarioError",
    "ProcessModel",
    "SensorModel",
    "Topology",
    "DetectorSettings",
    "Scenario",
    "laplacian_of",
    "is_strongly_connected",
    "PAPER_A",
    "unstable_eigenvector",
    "build_paper_scenario",
    "build_random_scenario",
    "simulate_plant",
    "PlantTrace",
]


class ScenarioError(ValueError):
    """Raised when a scenario violates a modelling assumption."""


PAPER_A = np.array(
    [
        [1, -0.0004, 0, 0.0093, 0, 0],
        [0, 1.0034, -0.0010, 0.0016, 0.0090, 0.0003],
        [0, -0.0038, 1.0032, -0.0004, 0.0008, 0.0094],
        [0, -0.0786, 0.0063, 0.8730, 0.0083, -0.0048],
        [0, 0.6544, -0.2380, 0.3101, 0.9034, 0.0664],
        [0, -0.7149, 0.6137, -0.0751, 0.1579, 0.8770],
    ]
)


def _check_psd(M, name, strict=False, tol=1e-10):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ScenarioError(f"{name} must be square")
    if not np.allclose(M, M.T, atol=1e-12 * max(1.0, np.abs(M).max())):
        raise ScenarioError(f"{name} must be symmetric")
    lam = np.linalg.eigvalsh(0.5 * (M + M.T)).min() if M.size else 0.0
    if strict and lam <= 0:
        raise ScenarioError(f"{name} must be positive definite (min eigenvalue {lam:.3e})")
    if not strict and lam < -tol:
        raise ScenarioError(f"{name} must be positive semidefinite (min eigenvalue {lam:.3e})")
    return M


@dataclass(frozen=True)
class ProcessModel:
    A: np.ndarray
    Q: np.ndarray
    Pi0: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ScenarioError("A must be square")
        Q = _check_psd(self.Q, "Q")
        Pi0 = _check_psd(self.Pi0, "Pi0")
        if Q.shape != (n, n) or Pi0.shape != (n, n):
            raise ScenarioError("Q and Pi0 must match the dimension of A")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "Pi0", Pi0)

    @property
    def n(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class SensorModel:
    id: int
    C: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        if C.shape[0] < 1:
            raise ScenarioError(f"sensor {self.id}: C needs at least one row")
        R = _check_psd(self.R, f"R_{self.id}", strict=True)
        if R.shape != (C.shape[0], C.shape[0]):
            raise ScenarioError(f"sensor {self.id}: R must be {C.shape[0]}x{C.shape[0]}")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "R", R)

    @property
    def m(self) -> int:
        return self.C.shape[0]


def laplacian_of(edges: Iterable[Sequence[int]], N: int) -> np.ndarray:
    """Laplacian with ``L[i, i] = d_i`` and ``L[i, j] = -1`` for ``(i, j)`` in E."""
    L = np.zeros((N, N))
    seen = set()
    for i, j in edges:
        i, j = int(i), int(j)
        if not (1 <= i <= N and 1 <= j <= N):
            raise ScenarioError(f"edge ({i}, {j}) references a node outside 1..{N}")
        if i == j:
            raise ScenarioError(f"self-loop ({i}, {j}) not allowed")
        if (i, j) in seen:
            raise ScenarioError(f"duplicate edge ({i}, {j})")
        seen.add((i, j))
        L[i - 1, j - 1] = -1.0
        L[i - 1, i - 1] += 1.0
    return L


def is_strongly_connected(edges: Iterable[Sequence[int]], N: int) -> bool:
    """Forward and backward BFS from node 1 must both reach every node."""
    fwd = {k: [] for k in range(1, N + 1)}
    bwd = {k: [] for k in range(1, N + 1)}
    for i, j in edges:
        fwd[j].append(i)  # data flows j -> i
        bwd[i].append(j)

    def reach(adj):
        seen, stack = {1}, [1]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == N

    return N >= 1 and reach(fwd) and reach(bwd)


@dataclass(frozen=True)
class Topology:
    """Directed graph; ``edges`` are ``(receiver, sender)`` pairs."""

    N: int
    edges: tuple

    def __post_init__(self):
        edges = tuple(sorted((int(i), int(j)) for i, j in self.edges))
        laplacian_of(edges, self.N)  # validates
        object.__setattr__(self, "edges", edges)

    @property
    def laplacian(self) -> np.ndarray:
        return laplacian_of(self.edges, self.N)

    @property
    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.N, self.N), dtype=int)
        for i, j in self.edges:
            A[i - 1, j - 1] = 1
        return A

    def in_neighbors(self, i: int) -> list[int]:
        return [j for (r, j) in self.edges if r == i]

    def out_neighbors(self, i: int) -> list[int]:
        return [r for (r, j) in self.edges if j == i]

    def in_degree(self, i: int) -> int:
        return len(self.in_neighbors(i))

    def out_degree(self, i: int) -> int:
        return len(self.out_neighbors(i))

    @property
    def max_in_degree(self) -> int:
        return int(self.adjacency.sum(axis=1).max()) if self.N else 0

    def strongly_connected(self) -> bool:
        return is_strongly_connected(self.edges, self.N)

    def has_edge(self, i: int, j: int) -> bool:
        return (i, j) in set(self.edges)


@dataclass(frozen=True)
class DetectorSettings:
    window_local: int = 1
    window_edge: int = 1
    confidence: float = 0.95

    def __post_init__(self):
        if self.window_local < 1 or self.window_edge < 1:
            raise ScenarioError("detector windows must be >= 1")
        if not (0.0 < self.confidence < 1.0):
            raise ScenarioError("confidence must lie in (0, 1)")


@dataclass(frozen=True)
class Scenario:
    process: ProcessModel
    sensors: tuple
    topology: Topology
    epsilon: float
    detector: DetectorSettings = field(default_factory=DetectorSettings)
    seed: int | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        sensors = tuple(self.sensors)
        object.__setattr__(self, "sensors", sensors)
        if len(sensors) != self.topology.N:
            raise ScenarioError(f"{len(sensors)} sensors for {self.topology.N} nodes")
        for k, s in enumerate(sensors, start=1):
            if s.id != k:
                raise ScenarioError(f"sensor ids must be 1..N in order (got {s.id} at {k})")
            if s.C.shape[1] != self.process.n:
                raise ScenarioError(f"sensor {s.id}: C has {s.C.shape[1]} columns, expected {self.process.n}")
        dmax = self.topology.max_in_degree
        upper = 1.0 / dmax if dmax else np.inf
        if not (0.0 < self.epsilon < upper):
            raise ScenarioError(
                f"consensus gain epsilon={self.epsilon} outside (0, 1/max d_i) = (0, {upper:.4g})"
            )

    @property
    def n(self) -> int:
        return self.process.n

    @property
    def N(self) -> int:
        return self.topology.N

    def C(self, i: int) -> np.ndarray:
        return self.sensors[i - 1].C

    def R(self, i: int) -> np.ndarray:
        return self.sensors[i - 1].R

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)

    # -- serialisation ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "N": self.N,
            "A": self.process.A.tolist(),
            "Q": self.process.Q.tolist(),
            "Pi0": self.process.Pi0.tolist(),
            "sensors": [{"id": s.id, "C": s.C.tolist(), "R": s.R.tolist()} for s in self.sensors],
            "edges": [list(e) for e in self.topology.edges],
            "epsilon": self.epsilon,
            "detector": {
                "window_local": self.detector.window_local,
                "window_edge": self.detector.window_edge,
                "confidence": self.detector.confidence,
            },
            "seed": self.seed,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        try:
            process = ProcessModel(np.array(d["A"], float), np.array(d["Q"], float), np.array(d["Pi0"], float))
            sensors = [SensorModel(int(s["id"]), np.array(s["C"], float), np.array(s["R"], float)) for s in d["sensors"]]
            topo = Topology(int(d.get("N", len(sensors))), tuple(tuple(e) for e in d["edges"]))
            det = DetectorSettings(**d.get("detector", {}))
            return cls(process, tuple(sensors), topo, float(d["epsilon"]), det, d.get("seed"), d.get("meta", {}))
        except KeyError as exc:
            raise ScenarioError(f"scenario is missing field {exc}") from None

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        return cls.from_dict(json.loads(text))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json(sort_keys=True).encode()).hexdigest()


# -- scenario builders ---------------------------------------------------

def unstable_eigenvector(A) -> tuple[float, np.ndarray]:
    """Dominant real eigenpair of ``A``; unit norm, first nonzero entry positive."""
    w, V = np.linalg.eig(np.asarray(A, dtype=float))
    k = int(np.argmax(np.abs(w)))
    if abs(w[k].imag) > 1e-12:
        raise ScenarioError("dominant eigenvalue is complex")
    v = np.real(V[:, k])
    v = v / np.linalg.norm(v)
    first = v[np.flatnonzero(np.abs(v) > 1e-12)[0]]
    return float(w[k].real), v * np.sign(first)


def _sensor_hiding(rng, direction, m, n, tol):
    P = np.eye(n) - np.outer(direction, direction)
    for _ in range(100):
        C = rng.standard_normal((m, n)) @ P
        if numeric_rank(C, tol) == min(m, n - 1):
            return C
    raise ScenarioError("could not draw a full-rank sensor orthogonal to the target direction")


# Hamiltonian cycle that contains the reference channels
# 10->2, 2->14 (node 2's sole out-neighbour), 27->17 and 20->19.
_PAPER_CYCLE = [2, 14, 15, 16, 27, 17, 18, 20, 19, 21, 22, 23, 24, 25, 26,
                28, 29, 30, 1, 3, 4, 5, 6, 7, 8, 9, 11, 12, 13, 10]
_PAPER_EXTRA_INTO_2 = [14, 18, 24, 25]
_PAPER_VULNERABLE = (2, 20, 27)


def build_paper_scenario(seed: int = 0, n_chords: int = 30, tol: ToleranceProfile = DEFAULT_TOL) -> Scenario:
    """The 30-sensor double-inverted-pendulum network.

    The plant, noise levels, gains and thresholds are fixed; sensor
    matrices, noise scales and the chord edges are drawn from ``seed``.
    Sensors 2, 20 and 27 are constructed so that their null space is the
    dominant (unstable) eigenvector of ``A``.
    """
    rng = np.random.default_rng(seed)
    N, n, m = 30, 6, 5
    A = PAPER_A.copy()
    lam, v = unstable_eigenvector(A)

    edges = set()
    cyc = _PAPER_CYCLE
    for a, b in zip(cyc, cyc[1:] + cyc[:1]):
        edges.add((b, a))
    for j in _PAPER_EXTRA_INTO_2:
        edges.add((2, j))
    # chords: never out of 2/20/27 (unique out-neighbours), never into 2
    frozen_src = {2, 20, 27}
    added = 0
    attempts = 0
    while added < n_chords and attempts < 10_000:
        attempts += 1
        i, j = (int(x) for x in rng.integers(1, N + 1, size=2))
        if i == j or i == 2 or j in frozen_src or (i, j) in edges:
            continue
        if sum(1 for (r, _) in edges if r == i) >= 4:
            continue
        edges.add((i, j))
        added += 1
    topo = Topology(N, tuple(edges))
    if not topo.strongly_connected():  # pragma: no cover - cycle guarantees it
        raise ScenarioError("reference topology is not strongly connected")

    sensors = []
    for i in range(1, N + 1):
        if i in _PAPER_VULNERABLE:
            C = _sensor_hiding(rng, v, m, n, tol)
        else:
            C = rng.standard_normal((m, n))
        nu = 1.0 - rng.random()  # (0, 1]
        sensors.append(SensorModel(i, C, nu * np.eye(m)))

    process = ProcessModel(A, 0.01 * np.eye(n), 0.01 * np.eye(n))
    meta = {
        "name": "paper",
        "unstable_eigenvalue": lam,
        "unstable_eigenvector": v.tolist(),
        "vulnerable_by_construction": list(_PAPER_VULNERABLE),
        "n_chords": n_chords,
    }
    return Scenario(process, tuple(sensors), topo, 0.05, DetectorSettings(1, 1, 0.95), seed, meta)


def build_random_scenario(seed: int, N: int = 6, n: int = 3, m: int = 2, extra_edges: int = 3,
                          epsilon: float | None = None, a_scale: float = 1.0) -> Scenario:
    """Small random strongly connected network (directed ring plus chords)."""
    rng = np.random.default_rng(seed)
    edges = {((k % N) + 1, k) for k in range(1, N + 1)} if N > 1 else set()
    tries = 0
    while len(edges) < N + extra_edges and tries < 1000 and N > 2:
        tries += 1
        i, j = (int(x) for x in rng.integers(1, N + 1, size=2))
        if i != j:
            edges.add((i, j))
    topo = Topology(N, tuple(edges))
    A = a_scale * rng.standard_normal((n, n)) / np.sqrt(n)
    sensors = [SensorModel(i, rng.standard_normal((m, n)), (0.1 + rng.random()) * np.eye(m)) for i in range(1, N + 1)]
    dmax = max(topo.max_in_degree, 1)
    eps = epsilon if epsilon is not None else 0.5 / dmax
    return Scenario(ProcessModel(A, 0.01 * np.eye(n), 0.01 * np.eye(n)), tuple(sensors), topo, eps, seed=seed)


# -- plant simulation ----------------------------------------------------

@dataclass
class PlantTrace:
    x: np.ndarray  # (H + 1, n)
    y: np.ndarray  # (H, N, m_max), zero padded
    w: np.ndarray  # (H, n)
    v: np.ndarray  # (H, N, m_max)


def simulate_plant(scenario: Scenario, horizon: int, rng: np.random.Generator, noise_free: bool = False) -> PlantTrace:
    """One realisation of ``x(k+1) = A x + w`` and ``y_i = C_i x + v_i``.

    Draw order is fixed (x0, then w, then v per node) so a given generator
    state always yields the same trajectory.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    n, N = scenario.n, scenario.N
    mmax = max(s.m for s in scenario.sensors)
    A, Q, Pi0 = scenario.process.A, scenario.process.Q, scenario.process.Pi0
    x0 = rng.multivariate_normal(np.zeros(n), Pi0, method="cholesky") if not noise_free else np.zeros(n)
    w = rng.multivariate_normal(np.zeros(n), Q, size=horizon, method="cholesky")
    v = np.zeros((horizon, N, mmax))
    for k, s in enumerate(scenario.sensors):
        v[:, k, : s.m] = rng.multivariate_normal(np.zeros(s.m), s.R, size=horizon, method="cholesky")
    if noise_free:
        w = np.zeros_like(w)
        x0 = np.zeros(n)
    x = np.zeros((horizon + 1, n))
    x[0] = x0
    for k in range(horizon):
        x[k + 1] = A @ x[k] + w[k]
    y = v.copy()
    for idx, s in enumerate(scenario.sensors):
        y[:, idx, : s.m] += x[:horizon] @ s.C.T
    return PlantTrace(x, y, w, v)
