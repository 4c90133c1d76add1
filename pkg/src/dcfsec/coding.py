"""Channel coding defence and the choice of channels to encode.

A channel ``(i, j)`` is encoded by sending ``M_ij(k)^-1 x_hat_j`` and
decoding with ``M_ij(k)``.  Both ends derive ``M_ij(k)`` from a shared seed,
so the schedule is a pure function of ``(seed, i, j, k // dwell)``.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field

import numpy as np

from .matana import DEFAULT_TOL, ToleranceProfile, null_space_basis, numeric_rank, range_intersection_nontrivial
from .netmodel import Scenario
from .vulnerability import theorem1_check

__all__ = [
    "CodingConditionError",
    "AllocationInfeasible",
    "theorem4_condition",
    "lemma4_condition",
    "design_coding_matrix",
    "CodingSchedule",
    "coding_matrix_at",
    "encode",
    "decode",
    "allocate_min_rank",
    "allocate_min_intersection",
    "NodeAllocation",
    "AllocationResult",
    "algorithm1_allocate",
]

MODES = ("theorem4", "lemma4")
REDRAW_BUDGET = 64
MAX_CONDITION = 1e6


class CodingConditionError(RuntimeError):
    """No admissible coding matrix was found within the redraw budget."""


class AllocationInfeasible(RuntimeError):
    """Neither allocation route can secure some node."""

    def __init__(self, message, result=None, nodes=()):
        super().__init__(message)
        self.result = result
        self.nodes = tuple(nodes)


# -- design conditions ---------------------------------------------------

def theorem4_condition(M, tol: ToleranceProfile = DEFAULT_TOL) -> bool:
    """``I - M`` has full rank."""
    M = np.asarray(M, dtype=float)
    return numeric_rank(np.eye(M.shape[0]) - M, tol) == M.shape[0]


def lemma4_condition(M, xi_i, xi_j, tol: ToleranceProfile = DEFAULT_TOL) -> bool:
    """No nonzero ``[x1; 0]`` lies in the range of the stacked decoding map.

    With ``Theta = [[Xi_i, -Xi_j, 0], [M Xi_i, (I - M) Xi_j, -Xi_i]]`` this
    holds iff the top block annihilates the null space of the bottom block.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    xi_i = np.asarray(xi_i, dtype=float).reshape(n, -1)
    xi_j = np.asarray(xi_j, dtype=float).reshape(n, -1)
    li, lj = xi_i.shape[1], xi_j.shape[1]
    top = np.hstack([xi_i, -xi_j, np.zeros((n, li))])
    bottom = np.hstack([M @ xi_i, (np.eye(n) - M) @ xi_j, -xi_i])
    if top.shape[1] == 0:
        return True
    K = null_space_basis(bottom, tol).basis
    if K.shape[1] == 0:
        return True
    return bool(np.linalg.norm(top @ K, 2) <= tol.subspace_tol * max(1.0, np.linalg.norm(bottom, 2)))


def _admissible(M, mode, xi_i, xi_j, tol):
    if not np.all(np.isfinite(M)) or np.linalg.cond(M) > MAX_CONDITION:
        return False
    if mode == "theorem4":
        return theorem4_condition(M, tol)
    return lemma4_condition(M, xi_i, xi_j, tol)


def design_coding_matrix(mode: str, i: int, j: int, xi_i, xi_j, rng: np.random.Generator,
                         budget: int = REDRAW_BUDGET, tol: ToleranceProfile = DEFAULT_TOL) -> np.ndarray:
    """Rejection-sample a Gaussian matrix meeting the chosen design condition."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    n = np.asarray(xi_i).shape[0]
    for _ in range(budget):
        M = rng.standard_normal((n, n))
        if _admissible(M, mode, xi_i, xi_j, tol):
            return M
    raise CodingConditionError(f"no admissible coding matrix for channel ({i}, {j}) in {budget} draws")


# -- schedules -----------------------------------------------------------

def _stream(seed: int, *key) -> np.random.Generator:
    h = hashlib.sha256(repr((int(seed),) + tuple(key)).encode()).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(h[:16], "little")))


def _well_conditioned(rng, n):
    # orthogonal factors with singular values in [1, 2]
    U, _ = np.linalg.qr(rng.standard_normal((n, n)))
    V, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return U @ np.diag(rng.uniform(1.0, 2.0, n)) @ V.T


@dataclass(frozen=True)
class CodingSchedule:
    """Time-varying coding matrices for a set of encoded channels.

    ``policy="perturbed"`` (default) draws one well-conditioned base matrix
    per channel and adds ``perturbation * G(k)`` with a fresh standard-normal
    ``G`` every epoch; ``policy="iid"`` redraws the whole matrix each epoch.
    An epoch lasts ``dwell`` steps and ``dwell`` must stay below ``n``.
    """

    channels: tuple
    seed: int
    n: int
    dwell: int = 1
    mode: str = "theorem4"
    policy: str = "perturbed"
    perturbation: float = 0.1
    null_bases: dict = field(default_factory=dict, compare=False, hash=False, repr=False)

    def __post_init__(self):
        chans = tuple(sorted((int(i), int(j)) for i, j in self.channels))
        if len(set(chans)) != len(chans):
            raise ValueError("duplicate encoded channel")
        object.__setattr__(self, "channels", chans)
        if not (1 <= self.dwell < self.n):
            raise ValueError(f"dwell must satisfy 1 <= dwell < n = {self.n} (got {self.dwell})")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.policy not in ("perturbed", "iid"):
            raise ValueError("policy must be 'perturbed' or 'iid'")
        if self.perturbation < 0:
            raise ValueError("perturbation must be >= 0")
        if self.mode == "lemma4":
            missing = [c for c in chans if c not in self.null_bases]
            if missing:
                raise ValueError(f"lemma4 mode needs null bases for channels {missing}")

    @classmethod
    def for_scenario(cls, scenario: Scenario, channels, seed: int, tol: ToleranceProfile = DEFAULT_TOL,
                     **kw) -> "CodingSchedule":
        chans = tuple(sorted((int(i), int(j)) for i, j in channels))
        bad = sorted(set(chans) - set(scenario.topology.edges))
        if bad:
            raise ValueError(f"encoded channels {bad} are not edges of the topology")
        bases = {(i, j): (null_space_basis(scenario.C(i), tol).basis, null_space_basis(scenario.C(j), tol).basis)
                 for i, j in chans}
        return cls(chans, int(seed), scenario.n, null_bases=bases, **kw)

    def to_dict(self) -> dict:
        return {
            "channels": [list(c) for c in self.channels],
            "seed": self.seed,
            "dwell": self.dwell,
            "mode": self.mode,
            "policy": self.policy,
            "perturbation": self.perturbation,
        }

    @classmethod
    def from_dict(cls, d: dict, scenario: Scenario) -> "CodingSchedule":
        kw = {k: d[k] for k in ("dwell", "mode", "policy", "perturbation") if k in d}
        return cls.for_scenario(scenario, [tuple(c) for c in d["channels"]], int(d["seed"]), **kw)

    def is_encoded(self, edge) -> bool:
        return tuple(edge) in self.channels

    def _check(self, M, edge, tol):
        xi_i, xi_j = self.null_bases.get(edge, (None, None))
        return _admissible(M, self.mode, xi_i, xi_j, tol)

    def base_matrix(self, edge, tol: ToleranceProfile = DEFAULT_TOL) -> np.ndarray:
        i, j = edge
        for attempt in range(REDRAW_BUDGET):
            M = _well_conditioned(_stream(self.seed, "base", i, j, attempt), self.n)
            if self._check(M, edge, tol):
                return M
        raise CodingConditionError(f"no admissible base matrix for channel {edge}")


_CACHE: dict = {}
_CACHE_LIMIT = 200_000


def coding_matrix_at(schedule: CodingSchedule, edge, k: int, tol: ToleranceProfile = DEFAULT_TOL) -> np.ndarray:
    """``M_ij(k)``; identical on both ends of the channel by construction."""
    edge = (int(edge[0]), int(edge[1]))
    if edge not in schedule.channels:
        raise KeyError(f"channel {edge} is not encoded")
    if k < 0:
        raise ValueError("time index must be non-negative")
    epoch = k // schedule.dwell
    key = (schedule.seed, schedule.n, schedule.mode, schedule.policy, schedule.perturbation, edge, epoch)
    hit = _CACHE.get(key)
    if hit is not None:
        return hit.copy()
    i, j = edge
    base = schedule.base_matrix(edge, tol) if schedule.policy == "perturbed" else None
    for attempt in range(REDRAW_BUDGET):
        rng = _stream(schedule.seed, "epoch", i, j, epoch, attempt)
        G = rng.standard_normal((schedule.n, schedule.n))
        M = base + schedule.perturbation * G / np.sqrt(schedule.n) if base is not None else G
        if schedule._check(M, edge, tol):
            if len(_CACHE) >= _CACHE_LIMIT:
                _CACHE.clear()
            _CACHE[key] = M
            return M.copy()
    raise CodingConditionError(f"redraw budget exhausted for channel {edge} at epoch {epoch}")


def encode(edge, x_hat, k: int, schedule: CodingSchedule) -> np.ndarray:
    """Sender side: ``M(k)^-1 x_hat``."""
    return np.linalg.solve(coding_matrix_at(schedule, edge, k), np.asarray(x_hat, dtype=float))


def decode(edge, received, k: int, schedule: CodingSchedule) -> np.ndarray:
    """Receiver side: ``M(k) received``."""
    return coding_matrix_at(schedule, edge, k) @ np.asarray(received, dtype=float)


# -- allocation ----------------------------------------------------------

def _rank_ok(C_i, stack, n, tol):
    return numeric_rank(np.vstack([C_i] + stack), tol) == n


def _intersection_ok(A, xi, C_i, stack, n, tol):
    Cbar = np.vstack([C_i] + stack)
    if numeric_rank(Cbar, tol) >= n:
        return False
    xbar = null_space_basis(Cbar, tol).basis
    return not range_intersection_nontrivial(xbar, A @ xi, tol)


def _search(candidates, ok, exact_limit):
    """Smallest subset satisfying ``ok``; exhaustive when small, greedy otherwise."""
    if len(candidates) <= exact_limit:
        for size in range(len(candidates) + 1):
            for combo in itertools.combinations(candidates, size):
                if ok(list(combo)):
                    return list(combo), True
        return None, True
    chosen, rest = [], list(candidates)
    while not ok(chosen) and rest:
        chosen.append(rest.pop(0))
    if not ok(chosen):
        return None, False
    for s in list(chosen):  # prune to a minimal set
        trial = [c for c in chosen if c != s]
        if ok(trial):
            chosen = trial
    return chosen, False


def _greedy_rank_order(C_i, cands, Cs, tol):
    # order candidates by the rank gain they bring on their own
    base = numeric_rank(C_i, tol)
    gain = {s: numeric_rank(np.vstack([C_i, Cs[s]]), tol) - base for s in cands}
    return sorted(cands, key=lambda s: (-gain[s], s))


def allocate_min_rank(scenario: Scenario, i: int, exact_limit: int = 15, tol: ToleranceProfile = DEFAULT_TOL):
    """Fewest out-channels ``(s, i)`` to encode so the stacked ``C`` has rank ``n``.

    Returns ``(channels or None, exact)``.
    """
    n = scenario.n
    C_i = scenario.C(i)
    cands = sorted(scenario.topology.out_neighbors(i))
    Cs = {s: scenario.C(s) for s in cands}
    if len(cands) > exact_limit:
        cands = _greedy_rank_order(C_i, cands, Cs, tol)
    subset, exact = _search(cands, lambda S: _rank_ok(C_i, [Cs[s] for s in S], n, tol), exact_limit)
    return (None if subset is None else sorted((s, i) for s in subset)), exact


def allocate_min_intersection(scenario: Scenario, i: int, exact_limit: int = 15,
                              tol: ToleranceProfile = DEFAULT_TOL):
    """Fewest out-channels so the stack stays rank deficient but its null space misses ``range(A Xi)``."""
    n = scenario.n
    A = scenario.process.A
    C_i = scenario.C(i)
    xi = null_space_basis(C_i, tol).basis
    cands = sorted(scenario.topology.out_neighbors(i))
    Cs = {s: scenario.C(s) for s in cands}
    subset, exact = _search(cands, lambda S: _intersection_ok(A, xi, C_i, [Cs[s] for s in S], n, tol), exact_limit)
    return (None if subset is None else sorted((s, i) for s in subset)), exact


@dataclass
class NodeAllocation:
    node: int
    channels: tuple
    route: str        # "rank", "intersection", "secure" or "infeasible"
    exact: bool = True

    def to_dict(self):
        return {"node": self.node, "channels": [list(c) for c in self.channels], "route": self.route,
                "exact": self.exact}


@dataclass
class AllocationResult:
    nodes: dict
    tolerances: dict = field(default_factory=dict)

    @property
    def channels(self) -> list:
        return sorted({c for a in self.nodes.values() for c in a.channels})

    @property
    def count(self) -> int:
        return len(self.channels)

    @property
    def infeasible_nodes(self) -> list:
        return sorted(i for i, a in self.nodes.items() if a.route == "infeasible")

    @property
    def feasible(self) -> bool:
        return not self.infeasible_nodes

    def to_dict(self) -> dict:
        return {
            "channels": [list(c) for c in self.channels],
            "count": self.count,
            "feasible": self.feasible,
            "infeasible_nodes": self.infeasible_nodes,
            "nodes": {str(i): a.to_dict() for i, a in sorted(self.nodes.items()) if a.route != "secure"},
            "tolerances": self.tolerances,
        }


def algorithm1_allocate(scenario: Scenario, exact_limit: int = 15, tol: ToleranceProfile = DEFAULT_TOL,
                        interrupt: bool = True) -> AllocationResult:
    """Per-node allocation; nodes without an all-channel certificate are skipped.

    For each remaining node the smaller of the two routes is kept (the rank
    route on ties).  When both routes fail for some node,
    :class:`AllocationInfeasible` is raised (``interrupt=True``) or the node
    is marked infeasible.
    """
    A = scenario.process.A
    nodes = {}
    for i in range(1, scenario.N + 1):
        if not theorem1_check(A, scenario.C(i), tol).vulnerable:
            nodes[i] = NodeAllocation(i, (), "secure")
            continue
        r, ex_r = allocate_min_rank(scenario, i, exact_limit, tol)
        s, ex_s = allocate_min_intersection(scenario, i, exact_limit, tol)
        if r is None and s is None:
            nodes[i] = NodeAllocation(i, (), "infeasible", ex_r and ex_s)
            if interrupt:
                raise AllocationInfeasible(
                    f"node {i}: neither encoding route secures it", AllocationResult(nodes, tol.as_dict()), [i]
                )
            continue
        if s is None or (r is not None and len(r) <= len(s)):
            nodes[i] = NodeAllocation(i, tuple(r), "rank", ex_r)
        else:
            nodes[i] = NodeAllocation(i, tuple(s), "intersection", ex_s)
    return AllocationResult(nodes, tol.as_dict())
