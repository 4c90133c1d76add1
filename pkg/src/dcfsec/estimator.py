"""Consensus filter, its steady-state covariance/gain fixpoint and nominal runs.

Error convention: ``e_i = x - x_hat_i``.  With fixed gains the stacked
error obeys ``e(k+1) = F e(k) + 1 (x) w(k) - diag(K_i) v(k)`` where
``F = (I_N - eps L) (x) A - diag(K_i C_i)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .matana import DEFAULT_TOL, ToleranceProfile, spectral_radius
from .netmodel import Scenario

__all__ = [
    "FixpointDivergence",
    "SteadyState",
    "FilterState",
    "solve_steady_state",
    "global_transition",
    "optimal_gains",
    "step_filter",
    "NominalTrace",
    "run_nominal",
    "check_detectability",
]


class FixpointDivergence(ArithmeticError):
    """The covariance recursion failed to converge."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


def _blocks(P, N, n):
    return P.reshape(N, n, N, n).transpose(0, 2, 1, 3)  # [i, j] -> P_ij


def optimal_gains(scenario: Scenario, P: np.ndarray) -> list[np.ndarray]:
    """Per-node gains minimising the one-step error covariance given ``P``.

    ``K_i = A[(1 - eps d_i) P_i + eps sum_j P_ji] C_i^T (C_i P_i C_i^T + R_i)^-1``
    where ``P_ji = E[e_j e_i^T]``.
    """
    N, n, eps = scenario.N, scenario.n, scenario.epsilon
    A = scenario.process.A
    B = _blocks(P, N, n)
    topo = scenario.topology
    gains = []
    for i in range(1, N + 1):
        Pi = B[i - 1, i - 1]
        nb = topo.in_neighbors(i)
        cross = sum((B[j - 1, i - 1] for j in nb), np.zeros((n, n)))
        M = (1.0 - eps * len(nb)) * Pi + eps * cross
        C, R = scenario.C(i), scenario.R(i)
        S = C @ Pi @ C.T + R
        gains.append(scipy.linalg.solve(S, (A @ M @ C.T).T, assume_a="pos").T)
    return gains


def global_transition(scenario: Scenario, gains) -> np.ndarray:
    N, n = scenario.N, scenario.n
    F = np.kron(np.eye(N) - scenario.epsilon * scenario.topology.laplacian, scenario.process.A)
    for i, K in enumerate(gains):
        F[i * n:(i + 1) * n, i * n:(i + 1) * n] -= K @ scenario.C(i + 1)
    return F


def _noise_cov(scenario: Scenario, gains) -> np.ndarray:
    N = scenario.N
    W = np.kron(np.ones((N, N)), scenario.process.Q)
    W += scipy.linalg.block_diag(*[K @ scenario.R(i + 1) @ K.T for i, K in enumerate(gains)])
    return W


def _step(scenario, P):
    K = optimal_gains(scenario, P)
    F = global_transition(scenario, K)
    P_next = F @ P @ F.T + _noise_cov(scenario, K)
    return 0.5 * (P_next + P_next.T), K, F


@dataclass(frozen=True)
class SteadyState:
    """Converged covariance, frozen gains and the derived test covariances."""

    P: np.ndarray
    gains: tuple
    F: np.ndarray
    N: int
    n: int
    residual: float = 0.0
    iterations: int = 0
    tolerances: dict = field(default_factory=dict)

    def block(self, i: int, j: int) -> np.ndarray:
        """``P_ij = E[e_i e_j^T]`` for 1-based node labels."""
        n = self.n
        return self.P[(i - 1) * n:i * n, (j - 1) * n:j * n]

    def gain(self, i: int) -> np.ndarray:
        return self.gains[i - 1]

    @property
    def spectral_radius(self) -> float:
        return spectral_radius(self.F)

    def sigma_local(self, scenario: Scenario, i: int) -> np.ndarray:
        C = scenario.C(i)
        return C @ self.block(i, i) @ C.T + scenario.R(i)

    def sigma_edge(self, scenario: Scenario, i: int, j: int) -> np.ndarray:
        """Covariance of ``z_ij = y_i - C_i x_hat_j``."""
        C = scenario.C(i)
        # z_ij = C_i e_j + v_i, and v_i is independent of e_j
        return C @ self.block(j, j) @ C.T + scenario.R(i)

    def sigma_distance(self, i: int, j: int) -> np.ndarray:
        S = self.block(i, i) + self.block(j, j) - self.block(i, j) - self.block(j, i)
        return 0.5 * (S + S.T)

    def to_dict(self, scenario: Scenario | None = None) -> dict:
        out = {
            "N": self.N,
            "n": self.n,
            "P": self.P.tolist(),
            "gains": [K.tolist() for K in self.gains],
            "F": self.F.tolist(),
            "spectral_radius": self.spectral_radius,
            "residual": self.residual,
            "iterations": self.iterations,
            "tolerances": self.tolerances,
        }
        if scenario is not None:
            out["sigma_local"] = {str(i): self.sigma_local(scenario, i).tolist() for i in range(1, self.N + 1)}
            out["sigma_edge"] = {f"{i},{j}": self.sigma_edge(scenario, i, j).tolist() for i, j in scenario.topology.edges}
            out["sigma_distance"] = {f"{i},{j}": self.sigma_distance(i, j).tolist() for i, j in scenario.topology.edges}
        return out

    def to_json(self, scenario: Scenario | None = None, **kw) -> str:
        return json.dumps(self.to_dict(scenario), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "SteadyState":
        P = np.array(d["P"], dtype=float)
        gains = tuple(np.array(K, dtype=float) for K in d["gains"])
        N, n = int(d["N"]), int(d["n"])
        F = np.array(d["F"], dtype=float)
        return cls(P, gains, F, N, n, float(d.get("residual", 0.0)), int(d.get("iterations", 0)), d.get("tolerances", {}))


def solve_steady_state(scenario: Scenario, tol: ToleranceProfile = DEFAULT_TOL,
                       P0: np.ndarray | None = None) -> SteadyState:
    """Iterate gains and global covariance to their joint fixpoint.

    Starts from ``1 (x) Pi0`` (all nodes begin with the same estimate) and
    stops once the relative Frobenius change drops below ``fixpoint_tol``.
    """
    N, n = scenario.N, scenario.n
    P = np.kron(np.ones((N, N)), scenario.process.Pi0) if P0 is None else np.array(P0, dtype=float)
    residual = np.inf
    max_it = tol.fixpoint_max_iters
    for it in range(1, max_it + 1):
        P_new, _, _ = _step(scenario, P)
        if not np.all(np.isfinite(P_new)):
            raise FixpointDivergence("covariance recursion produced non-finite values", np.inf, it)
        scale = np.linalg.norm(P_new)
        residual = np.linalg.norm(P_new - P) / scale if scale > 0 else 0.0
        P = P_new
        if residual < tol.fixpoint_tol:
            return _finish(scenario, P, residual, it, tol)
    raise FixpointDivergence(
        f"covariance fixpoint did not converge in {max_it} iterations (residual {residual:.3e})", residual, max_it
    )


def _finish(scenario, P, residual, iterations, tol):
    K = optimal_gains(scenario, P)
    F = global_transition(scenario, K)
    return SteadyState(P, tuple(K), F, scenario.N, scenario.n, float(residual), iterations, tol.as_dict())


def check_detectability(scenario: Scenario, tol: ToleranceProfile = DEFAULT_TOL) -> tuple[bool, str]:
    """Detectability certified by a converged, stabilising fixpoint."""
    try:
        ss = solve_steady_state(scenario, tol)
    except FixpointDivergence as exc:
        return False, str(exc)
    rho = ss.spectral_radius
    if rho >= 1.0:
        return False, f"closed-loop spectral radius {rho:.6f} >= 1"
    return True, f"closed-loop spectral radius {rho:.6f}"


# -- filter recursion ----------------------------------------------------

@dataclass
class FilterState:
    x_hat: np.ndarray  # (N, n)
    k: int = 0

    @classmethod
    def zeros(cls, N: int, n: int) -> "FilterState":
        return cls(np.zeros((N, n)), 0)


def step_filter(state: FilterState, measurements, received, steady: SteadyState, scenario: Scenario) -> FilterState:
    """One synchronous round of the consensus filter.

    Parameters
    ----------
    measurements : sequence of arrays
        ``y_i(k)`` for every node, in label order.
    received : dict
        ``{(i, j): x_tilde_ij}`` for every edge; the value the receiver
        actually got (possibly attacked and/or decoded).
    """
    N, n = scenario.N, scenario.n
    X = np.asarray(state.x_hat, dtype=float)
    if X.shape != (N, n):
        raise ValueError(f"state has shape {X.shape}, expected {(N, n)}")
    if len(measurements) != N:
        raise ValueError("one measurement vector per node is required")
    A, eps = scenario.process.A, scenario.epsilon
    out = np.empty_like(X)
    for idx in range(N):
        i = idx + 1
        y = np.asarray(measurements[idx], dtype=float)
        C = scenario.C(i)
        if y.shape != (C.shape[0],):
            raise ValueError(f"measurement of node {i} has shape {y.shape}, expected {(C.shape[0],)}")
        disagreement = np.zeros(n)
        for j in scenario.topology.in_neighbors(i):
            try:
                xt = np.asarray(received[(i, j)], dtype=float)
            except KeyError:
                raise ValueError(f"missing received estimate for edge ({i}, {j})") from None
            if xt.shape != (n,):
                raise ValueError(f"received estimate on ({i}, {j}) has wrong shape {xt.shape}")
            disagreement += X[idx] - xt
        out[idx] = A @ X[idx] + steady.gain(i) @ (y - C @ X[idx]) - eps * A @ disagreement
    return FilterState(out, state.k + 1)


@dataclass
class NominalTrace:
    x: np.ndarray        # (H + 1, n)
    y: np.ndarray        # (H, N, m_max)
    x_hat: np.ndarray    # (H + 1, N, n)
    z_local: np.ndarray  # (H, N, m_max)
    z_edge: np.ndarray   # (H, E, m_max), edge order = topology.edges
    mu: np.ndarray       # (H, E, n)


def run_nominal(scenario: Scenario, steady: SteadyState, horizon: int, seed) -> NominalTrace:
    """Attack-free trajectory with every residue, from ``x_hat_i(0) = 0``."""
    from .netmodel import simulate_plant

    rng = np.random.default_rng(seed)
    plant = simulate_plant(scenario, horizon, rng)
    N, n = scenario.N, scenario.n
    mmax = plant.y.shape[2]
    edges = scenario.topology.edges
    X = np.zeros((horizon + 1, N, n))
    zl = np.zeros((horizon, N, mmax))
    ze = np.zeros((horizon, len(edges), mmax))
    mu = np.zeros((horizon, len(edges), n))
    state = FilterState.zeros(N, n)
    for k in range(horizon):
        ys = [plant.y[k, i, : scenario.sensors[i].m] for i in range(N)]
        for i in range(N):
            m = scenario.sensors[i].m
            zl[k, i, :m] = ys[i] - scenario.C(i + 1) @ state.x_hat[i]
        for e, (i, j) in enumerate(edges):
            m = scenario.sensors[i - 1].m
            ze[k, e, :m] = ys[i - 1] - scenario.C(i) @ state.x_hat[j - 1]
            mu[k, e] = state.x_hat[i - 1] - state.x_hat[j - 1]
        received = {(i, j): state.x_hat[j - 1] for i, j in edges}
        state = step_filter(state, ys, received, steady, scenario)
        X[k + 1] = state.x_hat
    return NominalTrace(plant.x, plant.y, X, zl, ze, mu)
