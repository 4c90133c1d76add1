"""Chi-square detector bank over local residues, edge residues and estimate distances.

Three test families are maintained:

``local``
    one test per node on ``z_i = y_i - C_i x_hat_i``;
``edge``
    one test per edge ``(i, j)`` on ``z_ij = y_i - C_i x_tilde_ij``;
``mu``
    one test per enabled edge on ``mu_ij = x_hat_i - x_tilde_ij``.

All statistics are windowed sums of quadratic forms, and a test alarms
when its statistic exceeds the chi-square quantile of its degrees of freedom.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .estimator import SteadyState
from .matana import DEFAULT_TOL, ToleranceProfile, chi_square_quantile, numeric_rank
from .netmodel import Scenario

__all__ = [
    "FAMILIES",
    "DetectorConfig",
    "build_detector_config",
    "test_statistic",
    "quadratic_forms",
    "WindowSum",
    "AlarmRecord",
    "AlarmCounts",
    "evaluate_detectors",
    "alarm_rate",
]

FAMILIES = ("local", "edge", "mu")


def _spd_inverse(S):
    L = np.linalg.cholesky(0.5 * (S + S.T))  # raises LinAlgError if not PD
    Linv = np.linalg.inv(L)
    return Linv.T @ Linv


def _pinv_with_rank(S, tol):
    S = 0.5 * (S + S.T)
    r = numeric_rank(S, tol)
    w, V = np.linalg.eigh(S)
    keep = np.argsort(w)[::-1][:r]
    inv = (V[:, keep] / w[keep]) @ V[:, keep].T
    return inv, r


@dataclass(frozen=True)
class DetectorConfig:
    """Thresholds and inverse covariances, padded to common widths.

    Arrays are indexed by test: ``inv_local[t]`` is ``(m_max, m_max)``
    with zeros outside the node's ``m_i`` block, so zero-padded residues
    give the same quadratic form as the unpadded ones.
    """

    window_local: int
    window_edge: int
    confidence: float
    nodes: tuple
    edges: tuple
    mu_edges: tuple
    inv_local: np.ndarray
    inv_edge: np.ndarray
    inv_mu: np.ndarray
    thr_local: np.ndarray
    thr_edge: np.ndarray
    thr_mu: np.ndarray
    df_local: np.ndarray
    df_edge: np.ndarray
    df_mu: np.ndarray
    degenerate_mu: tuple = field(default=())

    @property
    def n_tests(self) -> dict:
        return {"local": len(self.nodes), "edge": len(self.edges), "mu": len(self.mu_edges)}

    def labels(self, family: str) -> list:
        return {"local": list(self.nodes), "edge": list(self.edges), "mu": list(self.mu_edges)}[family]

    def index(self, family: str, label) -> int:
        labels = self.labels(family)
        key = tuple(label) if family != "local" else int(label)
        return labels.index(key)

    def summary(self) -> dict:
        return {
            "window_local": self.window_local,
            "window_edge": self.window_edge,
            "confidence": self.confidence,
            "thresholds": {
                "local": sorted(set(np.round(self.thr_local, 6).tolist())),
                "edge": sorted(set(np.round(self.thr_edge, 6).tolist())),
                "mu": sorted(set(np.round(self.thr_mu, 6).tolist())),
            },
            "mu_edges": [list(e) for e in self.mu_edges],
            "degenerate_mu": [list(e) for e in self.degenerate_mu],
        }


def build_detector_config(scenario: Scenario, steady: SteadyState, mu_edges: Iterable | None = None,
                          tol: ToleranceProfile = DEFAULT_TOL) -> DetectorConfig:
    """Thresholds from the chi-square quantile and covariances from ``steady``.

    ``mu_edges`` selects the edges carrying a distance test; ``None`` enables
    none, ``"all"`` enables every edge.
    """
    det = scenario.detector
    N, n = scenario.N, scenario.n
    edges = tuple(scenario.topology.edges)
    if mu_edges is None:
        mu = ()
    elif isinstance(mu_edges, str) and mu_edges == "all":
        mu = edges
    else:
        mu = tuple(sorted((int(i), int(j)) for i, j in mu_edges))
        unknown = set(mu) - set(edges)
        if unknown:
            raise ValueError(f"distance test requested on non-edges {sorted(unknown)}")
    mmax = max(s.m for s in scenario.sensors)

    inv_local = np.zeros((N, mmax, mmax))
    df_local = np.zeros(N, dtype=int)
    for i in range(1, N + 1):
        m = scenario.sensors[i - 1].m
        inv_local[i - 1, :m, :m] = _spd_inverse(steady.sigma_local(scenario, i))
        df_local[i - 1] = m
    inv_edge = np.zeros((len(edges), mmax, mmax))
    df_edge = np.zeros(len(edges), dtype=int)
    for e, (i, j) in enumerate(edges):
        m = scenario.sensors[i - 1].m
        inv_edge[e, :m, :m] = _spd_inverse(steady.sigma_edge(scenario, i, j))
        df_edge[e] = m
    inv_mu = np.zeros((len(mu), n, n))
    df_mu = np.zeros(len(mu), dtype=int)
    degenerate = []
    for e, (i, j) in enumerate(mu):
        inv, r = _pinv_with_rank(steady.sigma_distance(i, j), tol)
        inv_mu[e] = inv
        df_mu[e] = r
        if r < n:
            degenerate.append((i, j))

    def thresholds(df, window):
        cache = {}
        out = np.empty(len(df))
        for t, d in enumerate(df):
            d = int(d) * window
            if d not in cache:
                cache[d] = chi_square_quantile(d, det.confidence) if d > 0 else np.inf
            out[t] = cache[d]
        return out

    return DetectorConfig(
        det.window_local, det.window_edge, det.confidence,
        tuple(range(1, N + 1)), edges, mu,
        inv_local, inv_edge, inv_mu,
        thresholds(df_local, det.window_local), thresholds(df_edge, det.window_edge), thresholds(df_mu, det.window_edge),
        df_local, df_edge, df_mu, tuple(degenerate),
    )


def test_statistic(window: Sequence, inv_cov) -> float:
    """Sum of ``r^T S^-1 r`` over the residues in ``window``."""
    S = np.asarray(inv_cov, dtype=float)
    total = 0.0
    for r in window:
        r = np.asarray(r, dtype=float)
        if r.shape != (S.shape[0],):
            raise ValueError(f"residue of shape {r.shape} does not match inverse covariance {S.shape}")
        total += float(r @ S @ r)
    return total


def quadratic_forms(r: np.ndarray, inv: np.ndarray) -> np.ndarray:
    """Batched ``r[..., t, :] @ inv[t] @ r[..., t, :]`` over a leading run axis."""
    return np.einsum("...ti,tij,...tj->...t", r, inv, r, optimize=True)


class WindowSum:
    """Rolling sum of the last ``J`` instantaneous statistics.

    ``push`` returns the windowed statistic, or ``None`` until the window
    has filled (no decision is made on a partial window).
    """

    def __init__(self, J: int):
        if J < 1:
            raise ValueError("window must be >= 1")
        self.J = J
        self._buf = deque()
        self._sum = None

    def push(self, q: np.ndarray):
        q = np.asarray(q, dtype=float)
        if self.J == 1:
            return q
        self._buf.append(q)
        self._sum = q.copy() if self._sum is None else self._sum + q
        if len(self._buf) > self.J:
            self._sum = self._sum - self._buf.popleft()
        return self._sum.copy() if len(self._buf) == self.J else None


@dataclass
class AlarmRecord:
    """Boolean alarms of one run, shaped ``(steps, tests)`` per family."""

    local: np.ndarray
    edge: np.ndarray
    mu: np.ndarray

    def family(self, name: str) -> np.ndarray:
        if name not in FAMILIES:
            raise ValueError(f"unknown family {name!r}")
        return getattr(self, name)

    @property
    def steps(self) -> int:
        return self.local.shape[0]


def evaluate_detectors(z_local, z_edge, mu, config: DetectorConfig) -> AlarmRecord:
    """Alarms for one trace.

    Parameters
    ----------
    z_local : array, shape (H, N, m_max)
    z_edge : array, shape (H, E, m_max), edges in ``config.edges`` order
    mu : array, shape (H, E_mu, n) for ``config.mu_edges``, or ``None``
        when no distance test is configured
    """
    z_local = np.asarray(z_local, dtype=float)
    z_edge = np.asarray(z_edge, dtype=float)
    H = z_local.shape[0]
    if z_local.shape[1] != len(config.nodes) or z_edge.shape[1] != len(config.edges):
        raise ValueError("residue arrays do not match the detector configuration")
    out = {}
    for name, arr, inv, thr, J in (
        ("local", z_local, config.inv_local, config.thr_local, config.window_local),
        ("edge", z_edge, config.inv_edge, config.thr_edge, config.window_edge),
    ):
        out[name] = _alarms(arr, inv, thr, J)
    if config.mu_edges:
        if mu is None:
            raise ValueError("distance residues required for the configured mu tests")
        out["mu"] = _alarms(np.asarray(mu, dtype=float), config.inv_mu, config.thr_mu, config.window_edge)
    else:
        out["mu"] = np.zeros((H, 0), dtype=bool)
    return AlarmRecord(out["local"], out["edge"], out["mu"])


def _alarms(arr, inv, thr, J):
    q = quadratic_forms(arr, inv)  # (H, T)
    if J > 1:
        c = np.cumsum(q, axis=0)
        stat = np.full_like(q, -np.inf)
        stat[J - 1] = c[J - 1]
        stat[J:] = c[J:] - c[:-J]
    else:
        stat = q
    return stat > thr


@dataclass
class AlarmCounts:
    """Alarm counts accumulated over runs, shaped ``(steps, tests)``.

    ``groups`` holds per-step counts of runs in which at least one test of
    a named group alarmed; those cannot be rebuilt from per-test counts.
    """

    counts: dict
    runs: int
    groups: dict = field(default_factory=dict)

    @classmethod
    def from_records(cls, records: Sequence[AlarmRecord], groups: dict | None = None) -> "AlarmCounts":
        if not records:
            raise ValueError("at least one run is required")
        counts = {f: sum(r.family(f).astype(np.int64) for r in records) for f in FAMILIES}
        gcounts = {}
        for name, members in (groups or {}).items():
            gcounts[name] = sum(_group_any(r, members).astype(np.int64) for r in records)
        return cls(counts, len(records), gcounts)

    def merge(self, other: "AlarmCounts") -> "AlarmCounts":
        return AlarmCounts(
            {f: self.counts[f] + other.counts[f] for f in FAMILIES},
            self.runs + other.runs,
            {g: self.groups[g] + other.groups[g] for g in self.groups},
        )


def _group_any(record: AlarmRecord, members: dict) -> np.ndarray:
    H = record.steps
    hit = np.zeros(H, dtype=bool)
    for fam, idx in members.items():
        idx = list(idx)
        if idx:
            hit |= record.family(fam)[:, idx].any(axis=1)
    return hit


def alarm_rate(records, family: str, tests: Sequence[int] | None = None, reduce: str = "max") -> np.ndarray:
    """Fraction of runs alarming at each step.

    Parameters
    ----------
    records : sequence of AlarmRecord, or AlarmCounts
    family : one of ``local``, ``edge``, ``mu``, or a group name registered
        in ``AlarmCounts.groups`` (groups are always OR-reduced)
    tests : indices within the family; all tests when omitted
    reduce : ``max`` (highest per-test rate), ``mean`` (pooled over tests)
        or ``any`` (fraction of runs where at least one selected test fired)
    """
    if reduce not in ("max", "mean", "any"):
        raise ValueError(f"unknown reduction {reduce!r}")
    if isinstance(records, AlarmCounts):
        if family in records.groups:
            return records.groups[family] / records.runs
        if family not in FAMILIES:
            raise ValueError(f"unknown family {family!r}")
        c = records.counts[family]
        c = c if tests is None else c[:, list(tests)]
        if reduce == "any":
            raise ValueError("'any' needs per-run records or a registered group")
        if c.shape[1] == 0:
            return np.zeros(c.shape[0])
        return (c.max(axis=1) if reduce == "max" else c.mean(axis=1)) / records.runs
    records = list(records)
    if not records:
        raise ValueError("at least one run is required")
    stack = np.stack([r.family(family) for r in records])  # (R, H, T)
    if tests is not None:
        stack = stack[:, :, list(tests)]
    if stack.shape[2] == 0:
        return np.zeros(stack.shape[1])
    if reduce == "any":
        return stack.any(axis=2).mean(axis=0)
    per_test = stack.mean(axis=0)
    return per_test.max(axis=1) if reduce == "max" else per_test.mean(axis=1)
