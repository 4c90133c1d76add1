"""False-data sequences for the consensus filter.

Every constructive strategy is driven by the attacker's replica of the
estimate deviation ``Delta_i = x_hat_i^a - x_hat_i``, which (with fixed gains)
obeys ``Delta(k+1) = F Delta(k) + eps (I (x) A) B a(k)``, where ``B`` routes
each channel's injection to its receiver.  Injections are computed from
that replica one step at a time; times are relative to the attack onset.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from .estimator import SteadyState
from .matana import DEFAULT_TOL, ToleranceProfile, null_space_basis, numeric_rank
from .netmodel import Scenario
from .vulnerability import (
    as_channel_set,
    lemma2_check,
    theorem1_check,
    theorem3_check,
)

__all__ = [
    "AttackRefused",
    "AttackPlan",
    "AttackSequence",
    "magnitude_schedule",
    "replay_deviation",
    "synth_theorem1_attack",
    "synth_lemma2_attack",
    "synth_theorem3_attack",
    "synth_rank_only_baseline",
    "synthesize",
    "CodingEstimate",
    "estimate_coding_matrix",
    "estimate_inverse_batch",
    "coding_aware_redesign",
    "rayleigh_leak_bound",
]

STRATEGIES = ("theorem1", "lemma2", "theorem3", "rank_only")


class AttackRefused(ValueError):
    """The requested strategy's preconditions do not hold."""


@dataclass(frozen=True)
class AttackPlan:
    """What to attack and how.

    ``magnitude`` is the constant ``eta`` (theorem1, lemma2), the one-shot
    ``eta~`` (theorem3) or the slope of the linearly growing baseline
    magnitude (rank_only).  ``channels`` may be left empty to let the
    strategy choose its canonical set.
    """

    strategy: str
    target: int
    magnitude: float
    onset: int = 50
    growth: str = "constant"
    channels: tuple = ()
    coding_aware: bool = False
    estimate_window: int | None = None
    estimate_ridge: float = 1e-3
    plaintext_access: bool = True

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.growth not in ("constant", "linear"):
            raise ValueError("growth must be 'constant' or 'linear'")
        if self.onset < 0:
            raise ValueError("onset must be >= 0")
        if self.estimate_ridge < 0:
            raise ValueError("estimate_ridge must be >= 0")
        object.__setattr__(self, "channels", tuple(sorted((int(i), int(j)) for i, j in self.channels)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = [list(e) for e in self.channels]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AttackPlan":
        d = dict(d)
        d["channels"] = tuple(tuple(e) for e in d.get("channels", ()))
        return cls(**d)


def magnitude_schedule(magnitude: float, growth: str = "constant") -> Callable[[int], float]:
    if growth == "constant":
        return lambda k: float(magnitude)
    if growth == "linear":
        return lambda k: float(magnitude) * (k + 1)
    raise ValueError(f"unknown growth law {growth!r}")


@dataclass
class AttackSequence:
    """Precomputed injections ``a_ij(k)`` and the attacker's deviation replica.

    ``injections[k, c]`` is the vector sent on ``channels[c]`` at ``k``
    steps after onset; ``view[k]`` is the replica ``Delta(k)`` (``N x n``).
    """

    plan: AttackPlan
    channels: tuple
    injections: np.ndarray
    view: np.ndarray
    certificate: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return self.injections.shape[0]

    def at(self, k: int) -> np.ndarray:
        if 0 <= k < self.steps:
            return self.injections[k]
        return np.zeros(self.injections.shape[1:])

    def channel_index(self, edge) -> int:
        return self.channels.index(tuple(edge))


def replay_deviation(scenario: Scenario, steady: SteadyState, channels, injections,
                     effective: Callable | None = None) -> np.ndarray:
    """Deviation trajectory driven by ``injections`` (``T x C x n``).

    ``effective(k, c, a)`` may transform what the receiver actually gets
    (e.g. decoding through a coding matrix); identity by default.
    """
    N, n, eps = scenario.N, scenario.n, scenario.epsilon
    A = scenario.process.A
    T = injections.shape[0]
    out = np.zeros((T + 1, N, n))
    rcv = [i - 1 for i, _ in channels]
    for k in range(T):
        nxt = (steady.F @ out[k].ravel()).reshape(N, n)
        for c, r in enumerate(rcv):
            a = injections[k, c]
            if effective is not None:
                a = effective(k, c, a)
            nxt[r] += eps * (A @ a)
        out[k + 1] = nxt
    return out


def _drive(scenario, steady, channels, horizon, rule):
    """Run ``rule(k, Delta) -> (C x n)`` against the deviation dynamics."""
    N, n, eps = scenario.N, scenario.n, scenario.epsilon
    A = scenario.process.A
    C = len(channels)
    inj = np.zeros((horizon, C, n))
    view = np.zeros((horizon + 1, N, n))
    rcv = np.array([i - 1 for i, _ in channels], dtype=int)
    for k in range(horizon):
        a = rule(k, view[k])
        inj[k] = a
        nxt = (steady.F @ view[k].ravel()).reshape(N, n)
        np.add.at(nxt, rcv, eps * a @ A.T)
        view[k + 1] = nxt
    return inj, view


def _in_out(scenario, i):
    topo = scenario.topology
    return [(i, j) for j in topo.in_neighbors(i)], [(u, i) for u in topo.out_neighbors(i)]


def synth_theorem1_attack(scenario: Scenario, steady: SteadyState, target: int, magnitude: float = 1e10,
                          horizon: int = 350, onset: int = 50, growth: str = "constant",
                          tol: ToleranceProfile = DEFAULT_TOL) -> AttackSequence:
    """Every channel of ``target`` attacked; the deviation is pinned to ``Xi x*``.

    In-channels carry ``-Delta_j + eta Xi y* - ((1 - eps d)/(eps d)) Delta_i``,
    out-channels ``-Delta_i`` so neighbours see unaltered estimates.
    """
    A = scenario.process.A
    res = theorem1_check(A, scenario.C(target), tol)
    if not res.vulnerable:
        raise AttackRefused(f"node {target} admits no all-channel certificate")
    ins, outs = _in_out(scenario, target)
    channels = tuple(ins + outs)
    eps = scenario.epsilon
    d = len(ins)
    t = target - 1
    eta = magnitude_schedule(magnitude, growth)
    push = res.xi @ res.y_star
    coef = (1.0 - eps * d) / (eps * d)

    def rule(k, D):
        u = eta(k) * push - coef * D[t]
        rows = [-D[j - 1] + u for _, j in ins] + [-D[t] for _ in outs]
        return np.array(rows)

    inj, view = _drive(scenario, steady, channels, horizon, rule)
    plan = AttackPlan("theorem1", target, magnitude, onset, growth, channels)
    return AttackSequence(plan, channels, inj, view, {"x_star": res.x_star, "y_star": res.y_star, "xi": res.xi})


def synth_lemma2_attack(scenario: Scenario, steady: SteadyState, target: int, magnitude: float = 1e10,
                        channels=None, horizon: int = 350, onset: int = 50, growth: str = "constant",
                        tol: ToleranceProfile = DEFAULT_TOL) -> AttackSequence:
    """Partial-channel attack through a single in-channel of ``target``.

    Default channel set: the in-channel from the smallest-labelled
    in-neighbour plus every out-channel of ``target``.  A clean out-channel
    ``(s, target)`` must be offset by an attacked in-channel ``(s, t)``.
    """
    topo = scenario.topology
    ins, outs = _in_out(scenario, target)
    if channels is None:
        if not ins:
            raise AttackRefused(f"node {target} has no in-neighbours")
        channels = [ins[0]] + outs
    att = as_channel_set(channels, scenario.N)
    res = lemma2_check(scenario, att, target, tol)
    if not res.vulnerable:
        raise AttackRefused(f"partial-channel conditions fail for node {target} on {sorted(att)}")
    dbar = topo.out_degree(target)
    entry = res.attacked_in[0]
    used = [entry] + list(res.attacked_out) + sorted(res.covering.values())
    if len(used) > 1 + dbar:  # pragma: no cover - structural guarantee
        raise AttackRefused("channel budget exceeded")
    channels = tuple(used)
    eps = scenario.epsilon
    d = topo.in_degree(target)
    t = target - 1
    j_star = entry[1]
    others = [j for j in topo.in_neighbors(target) if j != j_star]
    eta = magnitude_schedule(magnitude, growth)
    push = res.xi @ res.y_star
    coef = (1.0 - eps * d) / eps
    cover = {s: e for s, e in res.covering.items()}

    def rule(k, D):
        rows = [-D[j_star - 1] + eta(k) * push - coef * D[t] - sum((D[j - 1] for j in others), np.zeros_like(D[t]))]
        rows += [-D[t] for _ in res.attacked_out]
        rows += [-D[e[1] - 1] - D[t] for _, e in sorted(cover.items())]
        return np.array(rows)

    inj, view = _drive(scenario, steady, channels, horizon, rule)
    plan = AttackPlan("lemma2", target, magnitude, onset, growth, channels)
    return AttackSequence(plan, channels, inj, view,
                          {"x_star": res.x_star, "y_star": res.y_star, "xi_stack": res.xi_stack})


def synth_theorem3_attack(scenario: Scenario, steady: SteadyState, target: int, magnitude: float = 0.01,
                          horizon: int = 350, onset: int = 50,
                          tol: ToleranceProfile = DEFAULT_TOL) -> AttackSequence:
    """One small push along an unstable invariant direction, then pure restoration.

    In-channels get ``-Delta_j + Delta_i`` (plus ``eta~ x0`` at the first
    step), out-channels ``-Delta_i``; the deviation then grows by ``A``
    alone while every residue and distance statistic stays nominal.
    """
    res = theorem3_check(scenario.process.A, scenario.C(target), tol)
    if not res.vulnerable:
        raise AttackRefused(f"node {target} has no unstable invariant direction in its null space")
    ins, outs = _in_out(scenario, target)
    channels = tuple(ins + outs)
    t = target - 1
    x0 = res.x0

    def rule(k, D):
        kick = magnitude * x0 if k == 0 else 0.0
        rows = [-D[j - 1] + D[t] + kick for _, j in ins] + [-D[t] for _ in outs]
        return np.array(rows)

    inj, view = _drive(scenario, steady, channels, horizon, rule)
    plan = AttackPlan("theorem3", target, magnitude, onset, "constant", channels)
    return AttackSequence(plan, channels, inj, view, {"x0": x0, "eigenvalue": res.eigenvalue})


def synth_rank_only_baseline(scenario: Scenario, steady: SteadyState, target: int, magnitude: float = 1.0,
                             horizon: int = 350, onset: int = 50, growth: str = "linear",
                             tol: ToleranceProfile = DEFAULT_TOL) -> AttackSequence:
    """Growing null-space injections without the propagation correction.

    Edge residues at ``target`` stay nominal; the local residue drifts
    because ``A Xi`` leaves ``null(C_target)``.
    """
    C = scenario.C(target)
    if numeric_rank(C, tol) >= scenario.n:
        raise AttackRefused(f"node {target} has a trivial null space")
    v = null_space_basis(C, tol).basis[:, 0]
    ins, outs = _in_out(scenario, target)
    channels = tuple(ins + outs)
    t = target - 1
    g = magnitude_schedule(magnitude, growth)

    def rule(k, D):
        rows = [-D[j - 1] + g(k) * v for _, j in ins] + [-D[t] for _ in outs]
        return np.array(rows)

    inj, view = _drive(scenario, steady, channels, horizon, rule)
    plan = AttackPlan("rank_only", target, magnitude, onset, growth, channels)
    return AttackSequence(plan, channels, inj, view, {"direction": v})


def synthesize(plan: AttackPlan, scenario: Scenario, steady: SteadyState, horizon: int,
               tol: ToleranceProfile = DEFAULT_TOL) -> AttackSequence:
    """Dispatch on ``plan.strategy`` and keep the plan's flags."""
    kw = dict(horizon=horizon, onset=plan.onset, tol=tol)
    if plan.strategy == "theorem1":
        seq = synth_theorem1_attack(scenario, steady, plan.target, plan.magnitude, growth=plan.growth, **kw)
    elif plan.strategy == "lemma2":
        seq = synth_lemma2_attack(scenario, steady, plan.target, plan.magnitude,
                                  channels=plan.channels or None, growth=plan.growth, **kw)
    elif plan.strategy == "theorem3":
        seq = synth_theorem3_attack(scenario, steady, plan.target, plan.magnitude, **kw)
    else:
        seq = synth_rank_only_baseline(scenario, steady, plan.target, plan.magnitude, growth=plan.growth, **kw)
    seq.plan = replace(plan, channels=seq.channels)
    return seq


# -- learning the coding matrix ------------------------------------------

@dataclass
class CodingEstimate:
    """Least-squares estimate of the encoder ``M^-1`` from observed pairs."""

    inverse: np.ndarray | None
    sufficient: bool
    consistent: bool
    residual: float


def estimate_coding_matrix(Upsilon, Gamma, consistency_tol: float = 1e-8,
                           tol: ToleranceProfile = DEFAULT_TOL) -> CodingEstimate:
    """Solve ``X Upsilon = Gamma`` row by row.

    ``Upsilon`` holds plaintext estimates as columns, ``Gamma`` the matching
    encoded vectors.  Fewer than ``n`` independent columns leave ``X``
    undetermined (``sufficient=False``); a relative residual above
    ``consistency_tol`` means no single matrix explains every pair.
    """
    U = np.atleast_2d(np.asarray(Upsilon, dtype=float))
    G = np.atleast_2d(np.asarray(Gamma, dtype=float))
    if U.shape != G.shape:
        raise ValueError("Upsilon and Gamma must have the same shape")
    n = U.shape[0]
    if U.shape[1] < n or numeric_rank(U, tol) < n:
        return CodingEstimate(None, False, False, float("nan"))
    Xt, *_ = np.linalg.lstsq(U.T, G.T, rcond=None)
    X = Xt.T
    scale = np.linalg.norm(G)
    res = float(np.linalg.norm(X @ U - G) / scale) if scale > 0 else 0.0
    return CodingEstimate(X, True, res <= consistency_tol, res)


def estimate_inverse_batch(Upsilon: np.ndarray, Gamma: np.ndarray, ridge: float = 0.0):
    """Batched least squares over a leading run axis.

    ``Upsilon`` and ``Gamma`` are ``(R, n, w)``; returns ``X`` of shape
    ``(R, n, n)`` and the relative residual per run.  ``ridge`` adds
    ``ridge * trace(G) / n`` to the Gram matrix ``G``, which keeps the fit
    usable when the observed estimates are nearly collinear.
    """
    G = Upsilon @ np.swapaxes(Upsilon, 1, 2)              # (R, n, n)
    if ridge > 0:
        n = G.shape[-1]
        scale = ridge * np.trace(G, axis1=1, axis2=2) / n
        G = G + scale[:, None, None] * np.eye(n)
    rhs = Upsilon @ np.swapaxes(Gamma, 1, 2)              # (R, n, n)
    Xt = np.linalg.pinv(G, hermitian=True) @ rhs
    X = np.swapaxes(Xt, 1, 2)
    res = np.linalg.norm(X @ Upsilon - Gamma, axis=(1, 2)) / np.maximum(np.linalg.norm(Gamma, axis=(1, 2)), 1e-300)
    return X, res


def coding_aware_redesign(a, M_tilde=None, *, M_tilde_inverse=None) -> np.ndarray:
    """``a* = M~^-1 a``, given either the estimated matrix or its inverse."""
    a = np.asarray(a, dtype=float)
    if M_tilde_inverse is not None:
        return np.asarray(M_tilde_inverse, dtype=float) @ a
    if M_tilde is None:
        raise ValueError("an estimated coding matrix is required")
    M = np.asarray(M_tilde, dtype=float)
    try:
        return np.linalg.solve(M, a)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError("estimated coding matrix is singular") from exc


def rayleigh_leak_bound(x_hat, encoded) -> float:
    """Lower bound ``||x|| / ||M^-1 x||`` on ``||M||_2`` from one observed pair."""
    x = np.asarray(x_hat, dtype=float)
    t = np.asarray(encoded, dtype=float)
    nx, nt = np.linalg.norm(x), np.linalg.norm(t)
    if nx == 0 or nt == 0:
        raise ValueError("the observed vectors must be nonzero")
    return float(nx / nt)
