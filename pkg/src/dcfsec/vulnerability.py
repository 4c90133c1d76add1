"""Static insecurity analysis of the consensus filter.

Attacked channel sets are given as collections of ``(receiver, sender)``
pairs; every function also accepts the equivalent 0/1 adjacency matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
import scipy.linalg

from .matana import (
    DEFAULT_TOL,
    SubspaceBasis,
    ToleranceProfile,
    _residual_null,
    intersection_basis,
    largest_invariant_subspace,
    null_space_basis,
    numeric_rank,
    orth_basis,
    spectral_radius,
)
from .netmodel import Scenario, Topology

__all__ = [
    "DecouplingViolation",
    "DimensionCapExceeded",
    "Theorem1Result",
    "Theorem3Result",
    "Lemma2Result",
    "Theorem2Result",
    "Lemma3Result",
    "as_channel_set",
    "theorem1_check",
    "intersection_certificate",
    "lemma1_bound",
    "lemma1_reduction",
    "stack_unattacked",
    "lemma2_check",
    "theorem2_check",
    "theorem2_bruteforce",
    "theorem3_check",
    "lemma3_check",
    "lemma3_component",
    "VulnerabilityReport",
    "build_report",
]


class DecouplingViolation(ValueError):
    """The structural hypothesis of the partial-channel decoupled check fails."""


class DimensionCapExceeded(ValueError):
    """The stacked free-coordinate space is larger than the configured cap."""


def as_channel_set(attacked, N: int | None = None) -> frozenset:
    """Normalise an attacked-channel description to a set of ``(i, j)`` pairs.

    A numpy array is read as an ``N x N`` 0/1 adjacency matrix; any other
    iterable as a collection of pairs.
    """
    if attacked is None:
        return frozenset()
    if isinstance(attacked, np.ndarray):
        if attacked.ndim != 2 or attacked.shape[0] != attacked.shape[1] or (N is not None and attacked.shape[0] != N):
            raise ValueError("attacked adjacency must be a square N x N array")
        i, j = np.nonzero(attacked)
        return frozenset((int(a) + 1, int(b) + 1) for a, b in zip(i, j))
    return frozenset((int(i), int(j)) for i, j in attacked)


def _unit_sign(v):
    nz = np.flatnonzero(np.abs(v) > 1e-12 * max(1.0, np.abs(v).max()))
    return v if nz.size == 0 or v[nz[0]] > 0 else -v


# -- Theorem 1 -----------------------------------------------------------

@dataclass
class Theorem1Result:
    vulnerable: bool
    rank_deficient: bool
    intersection: bool
    xi: np.ndarray          # (n, l) null basis of C_i
    x_star: np.ndarray | None = None
    y_star: np.ndarray | None = None

    def to_dict(self):
        return {
            "vulnerable": self.vulnerable,
            "rank_deficient": self.rank_deficient,
            "intersection": self.intersection,
            "null_basis": self.xi.tolist(),
            "x_star": None if self.x_star is None else self.x_star.tolist(),
            "y_star": None if self.y_star is None else self.y_star.tolist(),
        }


def intersection_certificate(A, xi_left, xi_right, tol: ToleranceProfile = DEFAULT_TOL):
    """``(x, y)`` with ``xi_left x = A xi_right y != 0``, or ``None``.

    ``y`` has unit norm and its first nonzero entry is positive.
    """
    A = np.asarray(A, dtype=float)
    AX = A @ xi_right
    if xi_left.shape[1] == 0 or xi_right.shape[1] == 0:
        return None
    common = intersection_basis(xi_left, AX, tol)
    if common.is_empty:
        return None
    u = common.basis[:, 0]
    y, *_ = np.linalg.lstsq(AX, u, rcond=None)
    if np.linalg.norm(y) == 0:
        return None
    y = _unit_sign(y / np.linalg.norm(y))
    target = AX @ y
    x, *_ = np.linalg.lstsq(xi_left, target, rcond=None)
    return x, y


def theorem1_check(A, C, tol: ToleranceProfile = DEFAULT_TOL) -> Theorem1Result:
    """All-channel insecurity: ``rank(C) < n`` and ``range(Xi)`` meets ``range(A Xi)``."""
    A = np.asarray(A, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n = A.shape[0]
    xi = null_space_basis(C, tol).basis
    deficient = numeric_rank(C, tol) < n
    if not deficient:
        return Theorem1Result(False, False, False, xi)
    cert = intersection_certificate(A, xi, xi, tol)
    if cert is None:
        return Theorem1Result(False, True, False, xi)
    return Theorem1Result(True, True, True, xi, cert[0], cert[1])


# -- Lemma 1 -------------------------------------------------------------

def lemma1_reduction(C, tol: ToleranceProfile = DEFAULT_TOL):
    """Full-row-rank row selection ``C_red = D C`` (column-pivoted QR on ``C^T``)."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    m = C.shape[0]
    r = numeric_rank(C, tol)
    if r == m:
        return C.copy(), np.eye(m)
    _, _, piv = scipy.linalg.qr(C.T, pivoting=True, mode="economic")
    rows = np.sort(piv[:r])
    D = np.zeros((r, m))
    D[np.arange(r), rows] = 1.0
    return C[rows], D


def lemma1_bound(C, Sigma, tol: ToleranceProfile = DEFAULT_TOL) -> float:
    """``2 ||C_red^T (C_red C_red^T)^-1 D||_2 sqrt(tr Sigma)``."""
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    if np.linalg.eigvalsh(0.5 * (Sigma + Sigma.T)).min() <= 0:
        raise ValueError("Sigma must be positive definite")
    Cr, D = lemma1_reduction(C, tol)
    if Cr.shape[0] == 0:
        return 0.0
    G = Cr.T @ np.linalg.solve(Cr @ Cr.T, D)
    return float(2.0 * np.linalg.norm(G, 2) * np.sqrt(np.trace(Sigma)))


# -- partial-channel stacks ----------------------------------------------

def stack_unattacked(scenario: Scenario, attacked, i: int, tol: ToleranceProfile = DEFAULT_TOL):
    """``C_i`` stacked with ``C_s`` for every out-neighbour ``s`` whose channel ``(s, i)`` is clean.

    Returns ``(C_stack, Xi_stack, members)``.
    """
    att = as_channel_set(attacked, scenario.N)
    members = [s for s in scenario.topology.out_neighbors(i) if (s, i) not in att]
    C = np.vstack([scenario.C(s) for s in members] + [scenario.C(i)])
    return C, null_space_basis(C, tol).basis, members


@dataclass
class Lemma2Result:
    vulnerable: bool
    rank_deficient: bool
    xi: np.ndarray
    xi_stack: np.ndarray
    x_star: np.ndarray | None = None
    y_star: np.ndarray | None = None
    attacked_in: tuple = ()
    attacked_out: tuple = ()
    covering: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "vulnerable": self.vulnerable,
            "rank_deficient": self.rank_deficient,
            "stack_null_dim": int(self.xi_stack.shape[1]),
            "x_star": None if self.x_star is None else self.x_star.tolist(),
            "y_star": None if self.y_star is None else self.y_star.tolist(),
            "attacked_in": [list(e) for e in self.attacked_in],
            "attacked_out": [list(e) for e in self.attacked_out],
            "covering": {str(s): list(e) for s, e in self.covering.items()},
        }


def lemma2_check(scenario: Scenario, attacked, i: int, tol: ToleranceProfile = DEFAULT_TOL) -> Lemma2Result:
    """Decoupled partial-channel check for node ``i``.

    Requires at least one attacked in-channel of ``i`` and, for every clean
    out-channel ``(s, i)``, some attacked in-channel ``(s, t)`` of ``s``;
    otherwise raises :class:`DecouplingViolation` (use :func:`theorem2_check`).
    """
    att = as_channel_set(attacked, scenario.N)
    topo = scenario.topology
    _check_subset(att, topo)
    att_in = tuple(sorted(e for e in att if e[0] == i))
    if not att_in:
        raise DecouplingViolation(f"no in-channel of node {i} is attacked")
    covering = {}
    for s in topo.out_neighbors(i):
        if (s, i) in att:
            continue
        opts = sorted((s, t) for t in topo.in_neighbors(s) if t != i and (s, t) in att)
        if not opts:
            raise DecouplingViolation(f"clean out-neighbour {s} of node {i} has no attacked in-channel")
        covering[s] = opts[0]
    att_out = tuple(sorted((u, i) for u in topo.out_neighbors(i) if (u, i) in att))
    A = scenario.process.A
    n = scenario.n
    xi = null_space_basis(scenario.C(i), tol).basis
    Cs, xs, _ = stack_unattacked(scenario, att, i, tol)
    deficient = numeric_rank(Cs, tol) < n
    if not deficient:
        return Lemma2Result(False, False, xi, xs, None, None, att_in, att_out, covering)
    cert = intersection_certificate(A, xs, xi, tol)
    if cert is None:
        return Lemma2Result(False, True, xi, xs, None, None, att_in, att_out, covering)
    return Lemma2Result(True, True, xi, xs, cert[0], cert[1], att_in, att_out, covering)


def _check_subset(att, topo: Topology):
    bad = sorted(set(att) - set(topo.edges))
    if bad:
        raise ValueError(f"attacked channels {bad} are not edges of the topology")


# -- Theorem 2 -----------------------------------------------------------

@dataclass
class Theorem2Result:
    vulnerable: bool
    invariant_dim: int
    reachable_dim: int
    free_dim: int
    iterations: int
    stack_null_dims: tuple

    def to_dict(self):
        return {
            "vulnerable": self.vulnerable,
            "invariant_dim": self.invariant_dim,
            "reachable_dim": self.reachable_dim,
            "free_dim": self.free_dim,
            "iterations": self.iterations,
            "stack_null_dims": list(self.stack_null_dims),
        }


def _theorem2_matrices(scenario: Scenario, att, tol):
    N, n, eps = scenario.N, scenario.n, scenario.epsilon
    A = scenario.process.A
    Ag = np.zeros((N, N))
    for i, j in att:
        Ag[i - 1, j - 1] = 1.0
    stacks = [stack_unattacked(scenario, att, i, tol)[1] for i in range(1, N + 1)]
    D = scipy.linalg.block_diag(*stacks) if stacks else np.zeros((0, 0))
    D = D.reshape(N * n, -1)
    Phi1 = np.kron(np.eye(N) - eps * (scenario.topology.laplacian + Ag), A) @ D
    blocks = []
    for i in range(1, N + 1):
        xi = null_space_basis(scenario.C(i), tol).basis
        row = Ag[i - 1][None, :]
        blocks.append(np.kron(row, A @ xi))  # (n, N * l_i)
    Phi2 = eps * scipy.linalg.block_diag(*blocks) if blocks else np.zeros((0, 0))
    Phi2 = Phi2.reshape(N * n, -1)
    return D, Phi1, Phi2, tuple(s.shape[1] for s in stacks)


def theorem2_check(scenario: Scenario, attacked, tol: ToleranceProfile = DEFAULT_TOL,
                   dim_cap: int = 600) -> Theorem2Result:
    """Global partial-channel check via a controlled-invariant fixpoint.

    The free coordinates ``alpha`` stack each node's coordinates in the null
    space of its clean-out-channel stack.  ``V*`` is the largest subspace
    with ``Phi1 V* ⊆ D V* + range(Phi2)``; an attack can start iff ``V*``
    contains a nonzero ``alpha`` with ``D alpha ∈ range(Phi2)`` (the first
    step from ``alpha(0) = 0``).
    """
    att = as_channel_set(attacked, scenario.N)
    _check_subset(att, scenario.topology)
    D, Phi1, Phi2, dims = _theorem2_matrices(scenario, att, tol)
    q = D.shape[1]
    if q > dim_cap:
        raise DimensionCapExceeded(f"free-coordinate dimension {q} exceeds cap {dim_cap}")
    if q == 0:
        return Theorem2Result(False, 0, 0, 0, 0, dims)
    scale = max(np.linalg.norm(Phi1, 2), 1.0)
    cutoff = tol.subspace_tol * scale
    B = np.eye(q)
    it = 0
    for it in range(1, q + 2):
        W = orth_basis(np.hstack([D @ B, Phi2]), tol).basis
        R = Phi1 @ B
        R = R - W @ (W.T @ R)
        Kc = _residual_null(R, cutoff)
        if Kc.shape[1] == B.shape[1]:
            break
        B = orth_basis(B @ Kc, tol).basis if Kc.shape[1] else np.zeros((q, 0))
        if B.shape[1] == 0:
            break
    inv_dim = B.shape[1]
    reach = 0
    if inv_dim:
        W2 = orth_basis(Phi2, tol).basis
        R = D @ B
        R = R - W2 @ (W2.T @ R)
        reach = _residual_null(R, cutoff).shape[1]
    return Theorem2Result(reach > 0, inv_dim, reach, q, it, dims)


def theorem2_bruteforce(scenario: Scenario, attacked, horizon: int = 6,
                        tol: ToleranceProfile = DEFAULT_TOL) -> bool:
    """Finite-horizon oracle: stack ``horizon`` steps from ``alpha(0) = 0``.

    True iff some feasible sequence has ``alpha(1) != 0``.  Intended for
    small instances only.
    """
    att = as_channel_set(attacked, scenario.N)
    D, Phi1, Phi2, _ = _theorem2_matrices(scenario, att, tol)
    q, p = D.shape[1], Phi2.shape[1]
    if q == 0:
        return False
    rows = D.shape[0]
    H = horizon
    # unknowns: alpha(1..H) then alpha_check(0..H-1)
    M = np.zeros((H * rows, H * q + H * p))
    for k in range(H):
        r = slice(k * rows, (k + 1) * rows)
        M[r, k * q:(k + 1) * q] = D
        if k >= 1:
            M[r, (k - 1) * q:k * q] = -Phi1
        M[r, H * q + k * p:H * q + (k + 1) * p] = -Phi2
    Nb = null_space_basis(M, tol).basis
    if Nb.shape[1] == 0:
        return False
    # Nb is orthonormal, so the projection's singular values lie in [0, 1]
    return bool(np.linalg.svd(Nb[:q], compute_uv=False).max() > 1e-6)


# -- Theorem 3 / Lemma 3 -------------------------------------------------

@dataclass
class Theorem3Result:
    vulnerable: bool
    rank_deficient: bool
    a_unstable: bool
    invariant_nontrivial: bool
    unstable_in_invariant: bool
    invariant_basis: np.ndarray
    x0: np.ndarray | None = None
    eigenvalue: complex | None = None

    def to_dict(self):
        lam = self.eigenvalue
        return {
            "vulnerable": self.vulnerable,
            "rank_deficient": self.rank_deficient,
            "a_unstable": self.a_unstable,
            "invariant_nontrivial": self.invariant_nontrivial,
            "unstable_in_invariant": self.unstable_in_invariant,
            "invariant_dim": int(self.invariant_basis.shape[1]),
            "x0": None if self.x0 is None else self.x0.tolist(),
            "eigenvalue": None if lam is None else ([lam.real, lam.imag] if isinstance(lam, complex) else float(lam)),
        }


def _unstable_direction(A, W):
    """Dominant mode of ``A`` restricted to ``range(W)``."""
    Ar = W.T @ A @ W
    w, V = np.linalg.eig(Ar)
    k = int(np.argmax(np.abs(w)))
    lam = w[k]
    v = V[:, k]
    if abs(lam.imag) <= 1e-12 * max(1.0, abs(lam)):
        lam = float(lam.real)
        d = W @ np.real(v)
    else:
        lam = complex(lam)
        d = W @ np.real(v)
        if np.linalg.norm(d) < 1e-12:
            d = W @ np.imag(v)
    d = _unit_sign(d / np.linalg.norm(d))
    return lam, d


def _theorem3_on(A, C, tol):
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    deficient = numeric_rank(C, tol) < n
    a_unst = spectral_radius(A) > 1.0
    if not deficient:
        return Theorem3Result(False, False, a_unst, False, False, np.zeros((n, 0)))
    W = largest_invariant_subspace(A, null_space_basis(C, tol), tol).basis
    if W.shape[1] == 0:
        return Theorem3Result(False, True, a_unst, False, False, W)
    lam, d = _unstable_direction(A, W)
    unst = abs(lam) > 1.0
    return Theorem3Result(deficient and a_unst and unst, True, a_unst, True, unst, W, d, lam)


def theorem3_check(A, C, tol: ToleranceProfile = DEFAULT_TOL) -> Theorem3Result:
    """Insecurity under both residue and distance tests with every channel attacked."""
    return _theorem3_on(A, np.atleast_2d(np.asarray(C, dtype=float)), tol)


@dataclass
class Lemma3Result(Theorem3Result):
    component: tuple = ()

    def to_dict(self):
        d = super().to_dict()
        d["component"] = list(self.component)
        d["verdict"] = "possibly-insecure" if self.vulnerable else "secure"
        return d


def lemma3_component(topology: Topology, attacked, i: int) -> tuple:
    """Nodes connected to ``i`` through clean channels, ignoring direction."""
    att = as_channel_set(attacked, topology.N)
    adj = {k: set() for k in range(1, topology.N + 1)}
    for a, b in topology.edges:
        if (a, b) not in att:
            adj[a].add(b)
            adj[b].add(a)
    seen, stack = {i}, [i]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return tuple(sorted(seen))


def lemma3_check(scenario: Scenario, attacked, i: int, tol: ToleranceProfile = DEFAULT_TOL) -> Lemma3Result:
    """Necessary conditions only: a positive verdict means possibly insecure."""
    att = as_channel_set(attacked, scenario.N)
    _check_subset(att, scenario.topology)
    comp = lemma3_component(scenario.topology, att, i)
    C = np.vstack([scenario.C(s) for s in comp])
    r = _theorem3_on(scenario.process.A, C, tol)
    return Lemma3Result(**r.__dict__, component=comp)


# -- report --------------------------------------------------------------

@dataclass
class VulnerabilityReport:
    nodes: dict
    attack_sets: list
    tolerances: dict
    steady_state: dict | None = None

    @property
    def vulnerable_nodes(self) -> list:
        return sorted(i for i, d in self.nodes.items() if d["theorem1"]["vulnerable"] or d["theorem3"]["vulnerable"])

    @property
    def any_vulnerable(self) -> bool:
        if self.vulnerable_nodes:
            return True
        for s in self.attack_sets:
            if (s.get("theorem2") or {}).get("vulnerable"):
                return True
            for d in s["nodes"].values():
                if (d.get("lemma2") or {}).get("vulnerable"):
                    return True
        return False

    def to_dict(self) -> dict:
        return {
            "vulnerable_nodes": self.vulnerable_nodes,
            "any_vulnerable": self.any_vulnerable,
            "nodes": {str(i): d for i, d in self.nodes.items()},
            "attack_sets": self.attack_sets,
            "tolerances": self.tolerances,
            "steady_state": self.steady_state,
        }


def build_report(scenario: Scenario, attack_sets: Iterable | None = None, steady=None,
                 tol: ToleranceProfile = DEFAULT_TOL, theorem2_cap: int = 600) -> VulnerabilityReport:
    """Per-node verdicts plus per-attacked-set verdicts for every target node.

    Lemma-1 bounds need the steady-state residue covariances and are only
    reported when ``steady`` is given.
    """
    A = scenario.process.A
    nodes = {}
    for i in range(1, scenario.N + 1):
        t1 = theorem1_check(A, scenario.C(i), tol)
        t3 = theorem3_check(A, scenario.C(i), tol)
        entry = {"theorem1": t1.to_dict(), "theorem3": t3.to_dict()}
        if steady is not None:
            entry["lemma1_bound"] = lemma1_bound(scenario.C(i), steady.sigma_local(scenario, i), tol)
        nodes[i] = entry
    sets_out = []
    for raw in attack_sets or []:
        att = as_channel_set(raw, scenario.N)
        t2 = None
        try:
            t2 = theorem2_check(scenario, att, tol, theorem2_cap).to_dict()
        except DimensionCapExceeded as exc:
            t2 = {"vulnerable": None, "error": str(exc)}
        targets = sorted({e[0] for e in att} | {e[1] for e in att})
        per = {}
        for i in targets:
            d = {"lemma3": lemma3_check(scenario, att, i, tol).to_dict()}
            try:
                d["lemma2"] = lemma2_check(scenario, att, i, tol).to_dict()
            except DecouplingViolation as exc:
                d["lemma2"] = None
                d["lemma2_skipped"] = str(exc)
            per[str(i)] = d
        sets_out.append({"channels": sorted([list(e) for e in att]), "theorem2": t2, "nodes": per})
    ss = None
    if steady is not None:
        ss = {"spectral_radius": steady.spectral_radius, "residual": steady.residual, "iterations": steady.iterations}
    return VulnerabilityReport(nodes, sets_out, tol.as_dict(), ss)
