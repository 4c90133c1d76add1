"""Monte Carlo experiments: paired nominal/attacked filters and figure data.

Each run gets its own generator spawned from the master seed.  Runs are
processed in fixed-size chunks whose partial results are reduced in chunk
order, so results do not depend on the number of worker threads.
"""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .attacker import AttackPlan, AttackSequence, estimate_inverse_batch, synthesize
from .coding import CodingSchedule, algorithm1_allocate, coding_matrix_at
from .detection import FAMILIES, DetectorConfig, build_detector_config, quadratic_forms
from .estimator import SteadyState, solve_steady_state
from .netmodel import Scenario, build_paper_scenario

__all__ = [
    "ExperimentSpec",
    "SimulationError",
    "MetricsBundle",
    "run_experiment",
    "first_alarm_time",
    "monitored_tests",
    "reproduce_figure",
    "FIGURE_IDS",
    "default_threads",
]

CHUNK = 250


class SimulationError(RuntimeError):
    """A failure inside a batch of runs; ``run_index`` is the first run of the batch."""

    def __init__(self, message: str, run_index: int):
        super().__init__(message)
        self.run_index = run_index


FIGURE_IDS = (3, 4, 5, 6)


def default_threads() -> int:
    env = os.environ.get("DCFSEC_THREADS")
    if env:
        return max(1, int(env))
    return 1


@dataclass
class ExperimentSpec:
    """One Monte Carlo experiment.

    ``horizon`` counts every simulated step including the burn-in; the
    attack (if any) starts at ``burn_in``.  ``mu_edges`` is ``None`` (no
    distance tests), ``"all"``, ``"monitored"`` or an explicit edge list.
    ``tests="monitored"`` evaluates only the tests touching the attack.
    """

    scenario: Scenario
    attack: AttackPlan | None = None
    coding: CodingSchedule | None = None
    mu_edges: object = None
    horizon: int = 400
    runs: int = 1000
    seed: int = 0
    burn_in: int = 50
    tests: str = "all"
    label: str = ""

    def __post_init__(self):
        if self.horizon <= self.burn_in:
            raise ValueError("horizon must exceed the burn-in")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.tests not in ("all", "monitored"):
            raise ValueError("tests must be 'all' or 'monitored'")
        if self.tests == "monitored" and self.attack is None:
            raise ValueError("monitored tests need an attack plan")

    @classmethod
    def from_dict(cls, d: dict, scenario: Scenario) -> "ExperimentSpec":
        """Build from the ``experiment.json`` layout.

        ``coding.channels`` may be the string ``"allocate"`` to encode the
        channels chosen by the allocation procedure.
        """
        d = dict(d)
        unknown = set(d) - {"attack", "coding", "mu_edges", "horizon", "runs", "seed", "burn_in", "tests", "label"}
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        attack = d.pop("attack", None)
        if attack is not None:
            attack = dict(attack)
            attack.setdefault("onset", d.get("burn_in", 50))
            d["attack"] = AttackPlan.from_dict(attack)
        coding = d.pop("coding", None)
        if coding is not None:
            coding = dict(coding)
            if coding.get("channels") == "allocate":
                coding["channels"] = [list(c) for c in algorithm1_allocate(scenario).channels]
            d["coding"] = CodingSchedule.from_dict(coding, scenario)
        mu = d.get("mu_edges")
        if mu is not None and not isinstance(mu, str):
            d["mu_edges"] = [tuple(e) for e in mu]
        return cls(scenario=scenario, **d)

    def resolved(self) -> dict:
        return {
            "label": self.label,
            "scenario_digest": self.scenario.digest(),
            "scenario_seed": self.scenario.seed,
            "attack": None if self.attack is None else self.attack.to_dict(),
            "coding": None if self.coding is None else self.coding.to_dict(),
            "mu_edges": self.mu_edges if isinstance(self.mu_edges, (str, type(None))) else [list(e) for e in self.mu_edges],
            "horizon": self.horizon,
            "runs": self.runs,
            "seed": self.seed,
            "burn_in": self.burn_in,
            "tests": self.tests,
        }


def monitored_tests(scenario: Scenario, target: int, channels) -> tuple[list, list]:
    """Nodes and edges whose tests can see an attack on ``target`` via ``channels``."""
    topo = scenario.topology
    nodes = {target} | set(topo.out_neighbors(target)) | {i for i, _ in channels}
    edges = {e for e in topo.edges if target in e} | set(channels)
    return sorted(nodes), sorted(edges)


@dataclass
class MetricsBundle:
    """Per-step curves of one experiment (index = absolute step)."""

    spec: dict
    runs: int
    horizon: int
    onset: int
    target: int | None
    labels: dict
    counts: dict
    group_counts: dict
    first_alarm: dict
    err_mean: np.ndarray
    err_median: np.ndarray
    err_sq_mean: np.ndarray
    nominal_err_mean: np.ndarray
    delta_mean: np.ndarray
    delta_norm_mean: np.ndarray
    max_dz: np.ndarray
    max_dmu: np.ndarray
    view_norm: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def rate(self, family: str, reduce: str = "max", tests=None) -> np.ndarray:
        """Alarm-rate curve; ``family`` may also be a group (``any-local`` etc.)."""
        if family in self.group_counts:
            return self.group_counts[family] / self.runs
        if family not in FAMILIES:
            raise ValueError(f"unknown family {family!r}")
        c = self.counts[family]
        if tests is not None:
            idx = [self.labels[family].index(t) for t in tests]
            c = c[:, idx]
        if c.shape[1] == 0:
            return np.zeros(self.horizon)
        if reduce == "max":
            return c.max(axis=1) / self.runs
        if reduce == "mean":
            return c.mean(axis=1) / self.runs
        raise ValueError("reduce must be 'max' or 'mean' (use a group for OR rates)")

    def stderr(self, rate: np.ndarray) -> np.ndarray:
        return np.sqrt(np.clip(rate * (1 - rate), 0, None) / self.runs)

    def summary(self) -> dict:
        post = slice(self.onset, self.horizon)
        out = {
            "runs": self.runs,
            "horizon": self.horizon,
            "onset": self.onset,
            "target": self.target,
            "spec": self.spec,
            "families": {},
            "max_dz": float(self.max_dz.max()) if self.max_dz.size else 0.0,
            "max_dmu": float(self.max_dmu.max()) if self.max_dmu.size else 0.0,
            "final_error_mean": float(self.err_mean[-1]),
        }
        for f in FAMILIES:
            if self.counts[f].shape[1]:
                r = self.rate(f, "max")[post]
                out["families"][f] = {
                    "tests": len(self.labels[f]),
                    "max_rate_post_onset": float(r.max()),
                    "min_rate_post_onset": float(r.min()),
                    "first_99_crossing": first_alarm_time(self, f, 0.99, relative=True),
                }
        out["extra"] = self.extra
        return out

    def alarm_csv(self, reduce: str = "max") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "family", "rate", "stderr", "runs"])
        curves = [(f, self.rate(f, reduce)) for f in FAMILIES if self.counts[f].shape[1]]
        curves += [(g, self.rate(g)) for g in sorted(self.group_counts)]
        for name, r in curves:
            se = self.stderr(r)
            for k in range(self.horizon):
                w.writerow([k - self.onset, name, repr(float(r[k])), repr(float(se[k])), self.runs])
        return buf.getvalue()

    def error_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "value", "stderr"])
        var = np.clip(self.err_sq_mean - self.err_mean ** 2, 0, None)
        se = np.sqrt(var / self.runs)
        for k in range(self.horizon):
            w.writerow([k - self.onset, repr(float(self.err_mean[k])), repr(float(se[k]))])
        return buf.getvalue()

    def write(self, outdir: str, stem: str, provenance: dict | None = None) -> list[str]:
        os.makedirs(outdir, exist_ok=True)
        paths = []
        for suffix, text in (("alarms.csv", self.alarm_csv()), ("error.csv", self.error_csv())):
            p = os.path.join(outdir, f"{stem}_{suffix}")
            with open(p, "w", encoding="utf-8") as fh:
                fh.write(text)
            paths.append(p)
        p = os.path.join(outdir, f"{stem}_summary.json")
        with open(p, "w", encoding="utf-8") as fh:
            json.dump({"summary": self.summary(), "provenance": provenance or {}}, fh, indent=2, default=_json_default)
        paths.append(p)
        return paths


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"not serialisable: {type(o)}")


def first_alarm_time(bundle: MetricsBundle, family: str, level: float, relative: bool = False,
                     reduce: str = "max"):
    """First step whose rate reaches ``level`` (after onset when ``relative``)."""
    if not (0.0 < level <= 1.0):
        raise ValueError("level must lie in (0, 1]")
    r = bundle.rate(family, reduce)
    start = bundle.onset if relative else 0
    hits = np.flatnonzero(r[start:] >= level)
    if hits.size == 0:
        return None
    return int(hits[0]) if relative else int(hits[0] + start)


# -- engine --------------------------------------------------------------

class _Static:
    """Scenario-derived arrays shared by every chunk (read-only)."""

    def __init__(self, spec: ExperimentSpec, steady: SteadyState, config: DetectorConfig,
                 seq: AttackSequence | None):
        sc = spec.scenario
        self.N, self.n = sc.N, sc.n
        self.mmax = max(s.m for s in sc.sensors)
        self.A = sc.process.A
        self.eps = sc.epsilon
        self.Cp = np.zeros((self.N, self.mmax, self.n))
        self.Kp = np.zeros((self.N, self.n, self.mmax))
        self.Rchol = np.zeros((self.N, self.mmax, self.mmax))
        for idx, s in enumerate(sc.sensors):
            self.Cp[idx, : s.m] = s.C
            self.Kp[idx, :, : s.m] = steady.gain(idx + 1)
            self.Rchol[idx, : s.m, : s.m] = np.linalg.cholesky(s.R)
        self.Cflat = self.Cp.reshape(self.N * self.mmax, self.n)
        self.P0chol = _psd_factor(sc.process.Pi0)
        self.Qchol = _psd_factor(sc.process.Q)
        edges = list(sc.topology.edges)
        self.edges = edges
        self.rcv = np.array([i - 1 for i, _ in edges], dtype=int)
        self.snd = np.array([j - 1 for _, j in edges], dtype=int)
        self.inc = np.zeros((self.N, len(edges)))
        self.inc[self.rcv, np.arange(len(edges))] = 1.0
        self.deg = self.inc.sum(axis=1)
        self.horizon = spec.horizon
        self.onset = spec.burn_in
        self.config = config
        # evaluated tests
        self.t_nodes = np.array([i - 1 for i in config.nodes], dtype=int)
        self.t_edges = np.array([edges.index(e) for e in config.edges], dtype=int)
        self.t_mu = np.array([edges.index(e) for e in config.mu_edges], dtype=int)
        self.seq = seq
        self.target = None if spec.attack is None else spec.attack.target
        self.ch_idx = None if seq is None else np.array([edges.index(e) for e in seq.channels], dtype=int)
        # coding
        self.coding = spec.coding
        self.enc_idx = np.zeros(0, dtype=int)
        self.M = self.Minv = None
        if spec.coding is not None and spec.coding.channels:
            self.enc_idx = np.array([edges.index(e) for e in spec.coding.channels], dtype=int)
            H = spec.horizon
            self.M = np.zeros((H, len(self.enc_idx), self.n, self.n))
            for c, e in enumerate(spec.coding.channels):
                for k in range(H):
                    self.M[k, c] = coding_matrix_at(spec.coding, e, k)
            self.Minv = np.linalg.inv(self.M)
        # channels that are both attacked and encoded
        self.aware = bool(spec.attack is not None and spec.attack.coding_aware and len(self.enc_idx))
        if seq is not None:
            enc_set = {int(e) for e in self.enc_idx}
            self.att_enc = [c for c, e in enumerate(self.ch_idx) if int(e) in enc_set]
            self.att_enc_pos = [int(np.flatnonzero(self.enc_idx == self.ch_idx[c])[0]) for c in self.att_enc]
        else:
            self.att_enc, self.att_enc_pos = [], []
        self.window = None
        if self.aware:
            self.window = spec.attack.estimate_window or 2 * self.n
            self.ridge = spec.attack.estimate_ridge
        self.groups = _groups(config)


def _psd_factor(S):
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    return V * np.sqrt(np.clip(w, 0, None))


def _groups(config: DetectorConfig) -> dict:
    g = {f"any-{f}": {f: list(range(len(config.labels(f))))} for f in FAMILIES if config.labels(f)}
    g["any"] = {f: list(range(len(config.labels(f)))) for f in FAMILIES}
    return g


def _windowed(buf, q, J, k):
    """Windowed statistic; ``buf`` is a (J, R, T) ring of instantaneous values."""
    if J == 1:
        return q
    buf[k % J] = q
    if k < J - 1:
        return np.full_like(q, -np.inf)
    return buf.sum(axis=0)


def _run_chunk(st: _Static, seeds) -> dict:
    R = len(seeds)
    N, n, m, H = st.N, st.n, st.mmax, st.horizon
    A, eps = st.A, st.eps
    # noise, drawn per run in a fixed order: x0, w, v
    x0 = np.zeros((R, n))
    W = np.zeros((R, H, n))
    V = np.zeros((R, H, N, m))
    for r, ss in enumerate(seeds):
        g = np.random.default_rng(ss)
        x0[r] = st.P0chol @ g.standard_normal(n)
        W[r] = g.standard_normal((H, n)) @ st.Qchol.T
        V[r] = np.einsum("imk,hik->him", st.Rchol, g.standard_normal((H, N, m)))
    cfg = st.config
    x = x0
    xh = np.zeros((R, N, n))
    xa = np.zeros((R, N, n))
    T = {f: len(cfg.labels(f)) for f in FAMILIES}
    counts = {f: np.zeros((H, T[f]), dtype=np.int64) for f in FAMILIES}
    gcounts = {g: np.zeros(H, dtype=np.int64) for g in st.groups}
    first = {g: np.full(R, -1, dtype=np.int64) for g in st.groups}
    err = np.zeros((R, H))
    nom_err = np.zeros(H)
    delta_sum = np.zeros((H, n))
    delta_norm = np.zeros(H)
    max_dz = np.zeros(H)
    max_dmu = np.zeros(H)
    Jl, Je = cfg.window_local, cfg.window_edge
    bl = np.zeros((Jl, R, T["local"])) if Jl > 1 else None
    be = np.zeros((Je, R, T["edge"])) if Je > 1 else None
    bm = np.zeros((Je, R, T["mu"])) if Je > 1 else None
    Cl = st.Cp[st.t_nodes]
    Ce = st.Cp[st.rcv[st.t_edges]]
    t = None if st.target is None else st.target - 1
    # eavesdropped pairs for the coding-aware attacker
    if st.aware:
        w = st.window
        ups = {c: np.zeros((R, n, w)) for c in st.att_enc}
        gam = {c: np.zeros((R, n, w)) for c in st.att_enc}
        filled = 0
    for k in range(H):
        y = x @ st.Cflat.T
        y = y.reshape(R, N, m) + V[:, k]
        sent = xa[:, st.snd]                      # (R, E, n)
        sent_nom = xh[:, st.snd]
        inj = None
        kk = k - st.onset
        if st.seq is not None and 0 <= kk < st.seq.steps:
            a = st.seq.at(kk)                     # (C, n)
            inj = np.zeros((R,) + sent.shape[1:])
            inj[:, st.ch_idx] = a
            if st.aware and filled >= n:
                use = min(filled, st.window)
                for c in st.att_enc:
                    X, res = estimate_inverse_batch(ups[c][:, :, -use:], gam[c][:, :, -use:])
                    Xr, _ = estimate_inverse_batch(ups[c][:, :, -use:], gam[c][:, :, -use:], st.ridge)
                    # an exactly consistent window means the matrix has not moved
                    Xuse = np.where((res <= 1e-8)[:, None, None], X, Xr)
                    inj[:, st.ch_idx[c]] = np.einsum("rij,j->ri", Xuse, a[c])
        recv = sent.copy()
        if inj is not None:
            eff = inj
            if len(st.enc_idx):
                eff = inj.copy()
                eff[:, st.enc_idx] = np.einsum("cij,rcj->rci", st.M[k], inj[:, st.enc_idx])
            recv = sent + eff
        if st.aware:
            for c, pos in zip(st.att_enc, st.att_enc_pos):
                e = st.ch_idx[c]
                theta = np.einsum("ij,rj->ri", st.Minv[k, pos], sent[:, e])
                ups[c] = np.roll(ups[c], -1, axis=2)
                gam[c] = np.roll(gam[c], -1, axis=2)
                ups[c][:, :, -1] = sent[:, e]
                gam[c][:, :, -1] = theta
            filled += 1
        # residues of the attacked system on the evaluated tests
        zl = y[:, st.t_nodes] - np.einsum("tmn,rtn->rtm", Cl, xa[:, st.t_nodes])
        re = recv[:, st.t_edges]
        ze = y[:, st.rcv[st.t_edges]] - np.einsum("tmn,rtn->rtm", Ce, re)
        stats = {
            "local": _windowed(bl, quadratic_forms(zl, cfg.inv_local), Jl, k),
            "edge": _windowed(be, quadratic_forms(ze, cfg.inv_edge), Je, k),
        }
        if T["mu"]:
            mu = xa[:, st.rcv[st.t_mu]] - recv[:, st.t_mu]
            stats["mu"] = _windowed(bm, quadratic_forms(mu, cfg.inv_mu), Je, k)
        else:
            stats["mu"] = np.zeros((R, 0))
        alarms = {
            "local": stats["local"] > cfg.thr_local,
            "edge": stats["edge"] > cfg.thr_edge,
            "mu": stats["mu"] > cfg.thr_mu,
        }
        for f in FAMILIES:
            counts[f][k] = alarms[f].sum(axis=0)
        for g, members in st.groups.items():
            hit = np.zeros(R, dtype=bool)
            for f, idx in members.items():
                if idx:
                    hit |= alarms[f].any(axis=1)
            gcounts[g][k] = hit.sum()
            newly = hit & (first[g] < 0) & (k >= st.onset)
            first[g][newly] = k
        # deviations from the paired nominal run
        if t is not None:
            d = xa[:, t] - xh[:, t]
            delta_sum[k] = d.sum(axis=0)
            delta_norm[k] = np.linalg.norm(d, axis=1).sum()
            err[:, k] = np.linalg.norm(x - xa[:, t], axis=1)
            nom_err[k] = np.linalg.norm(x - xh[:, t], axis=1).sum()
            dzl = np.einsum("tmn,rtn->rtm", Cl, xa[:, st.t_nodes] - xh[:, st.t_nodes])
            dze = np.einsum("tmn,rtn->rtm", Ce, re - sent_nom[:, st.t_edges])
            max_dz[k] = max(np.linalg.norm(dzl, axis=2).max(initial=0.0), np.linalg.norm(dze, axis=2).max(initial=0.0))
            if T["mu"]:
                dmu = (xa[:, st.rcv[st.t_mu]] - recv[:, st.t_mu]) - (xh[:, st.rcv[st.t_mu]] - sent_nom[:, st.t_mu])
                max_dmu[k] = np.linalg.norm(dmu, axis=2).max()
        # synchronous filter updates
        xh = _update(st, xh, y, sent_nom, A, eps)
        xa = _update(st, xa, y, recv, A, eps)
        x = x @ A.T + W[:, k]
    return {
        "counts": counts, "groups": gcounts, "first": first, "err": err, "nom_err": nom_err,
        "delta_sum": delta_sum, "delta_norm": delta_norm, "max_dz": max_dz, "max_dmu": max_dmu,
    }


def _update(st, X, y, recv, A, eps):
    z = y - (st.Cp @ X[..., None])[..., 0]
    disagreement = st.deg[None, :, None] * X - st.inc @ recv
    return (X - eps * disagreement) @ A.T + (st.Kp @ z[..., None])[..., 0]


def run_experiment(spec: ExperimentSpec, steady: SteadyState | None = None, threads: int | None = None,
                   sequence: AttackSequence | None = None) -> MetricsBundle:
    """Run every replication of ``spec`` and reduce the metrics."""
    sc = spec.scenario
    steady = steady or solve_steady_state(sc)
    seq = sequence
    if spec.attack is not None and seq is None:
        seq = synthesize(spec.attack, sc, steady, spec.horizon - spec.burn_in)
    mu = spec.mu_edges
    if isinstance(mu, str) and mu == "monitored":
        if seq is None:
            raise ValueError("monitored distance tests need an attack plan")
        mu = monitored_tests(sc, seq.plan.target, seq.channels)[1]
    config = build_detector_config(sc, steady, mu)
    if spec.tests == "monitored":
        nodes, edges = monitored_tests(sc, seq.plan.target, seq.channels)
        config = _restrict(config, nodes, edges)
    st = _Static(spec, steady, config, seq)
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.runs)
    starts = list(range(0, spec.runs, CHUNK))
    threads = threads or default_threads()

    def work(a):
        try:
            return _run_chunk(st, seeds[a:a + CHUNK])
        except Exception as exc:
            b = min(a + CHUNK, spec.runs) - 1
            raise SimulationError(f"runs {a}-{b}: {exc}", a) from exc

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(a) for a in starts]
    return _reduce(spec, st, parts, seq)


def _restrict(config: DetectorConfig, nodes, edges) -> DetectorConfig:
    li = [config.nodes.index(i) for i in nodes]
    ei = [config.edges.index(e) for e in edges]
    mi = [config.mu_edges.index(e) for e in config.mu_edges if e in set(edges)]
    return replace(
        config,
        nodes=tuple(config.nodes[i] for i in li), edges=tuple(config.edges[i] for i in ei),
        mu_edges=tuple(config.mu_edges[i] for i in mi),
        inv_local=config.inv_local[li], inv_edge=config.inv_edge[ei], inv_mu=config.inv_mu[mi],
        thr_local=config.thr_local[li], thr_edge=config.thr_edge[ei], thr_mu=config.thr_mu[mi],
        df_local=config.df_local[li], df_edge=config.df_edge[ei], df_mu=config.df_mu[mi],
    )


def _reduce(spec, st, parts, seq) -> MetricsBundle:
    R = spec.runs
    counts = {f: sum(p["counts"][f] for p in parts) for f in FAMILIES}
    groups = {g: sum(p["groups"][g] for p in parts) for g in st.groups}
    first = {g: np.concatenate([p["first"][g] for p in parts]) for g in st.groups}
    err = np.concatenate([p["err"] for p in parts], axis=0)
    view_norm = None
    if seq is not None:
        view_norm = np.zeros(spec.horizon)
        T = min(seq.view.shape[0], spec.horizon - spec.burn_in)
        view_norm[spec.burn_in:spec.burn_in + T] = np.linalg.norm(seq.view[:T, seq.plan.target - 1], axis=1)
    cfg = st.config
    return MetricsBundle(
        spec=spec.resolved(),
        runs=R,
        horizon=spec.horizon,
        onset=spec.burn_in,
        target=st.target,
        labels={f: cfg.labels(f) for f in FAMILIES},
        counts=counts,
        group_counts=groups,
        first_alarm=first,
        err_mean=err.mean(axis=0),
        err_median=np.median(err, axis=0),
        err_sq_mean=(err ** 2).mean(axis=0),
        nominal_err_mean=sum(p["nom_err"] for p in parts) / R,
        delta_mean=sum(p["delta_sum"] for p in parts) / R,
        delta_norm_mean=sum(p["delta_norm"] for p in parts) / R,
        max_dz=np.maximum.reduce([p["max_dz"] for p in parts]),
        max_dmu=np.maximum.reduce([p["max_dmu"] for p in parts]),
        view_norm=view_norm,
        extra={"detector": cfg.summary()},
    )


# -- figure reproduction -------------------------------------------------

PAPER_LEMMA2_CHANNELS = ((2, 10), (14, 2))
LEMMA2_ETA = 1e10
THEOREM3_ETA = 0.01
BASELINE_SLOPE = 1.0
CODING_PERTURBATION = 0.1


def _figure_specs(fig: int, scenario: Scenario, runs: int, seed: int, horizon: int, burn_in: int,
                  tests: str, coding_seed: int) -> dict:
    l2 = AttackPlan("lemma2", 2, LEMMA2_ETA, burn_in, channels=PAPER_LEMMA2_CHANNELS)
    t3 = AttackPlan("theorem3", 2, THEOREM3_ETA, burn_in)
    common = dict(horizon=horizon, runs=runs, seed=seed, burn_in=burn_in, tests=tests)
    if fig == 3:
        base = AttackPlan("rank_only", 5, BASELINE_SLOPE, burn_in, growth="linear")
        return {
            "lemma2": ExperimentSpec(scenario, l2, label="fig3-lemma2", **common),
            "baseline": ExperimentSpec(scenario, base, label="fig3-baseline", **common),
        }
    if fig == 4:
        return {
            "lemma2": ExperimentSpec(scenario, l2, mu_edges="monitored", label="fig4-lemma2", **common),
            "theorem3": ExperimentSpec(scenario, t3, mu_edges="monitored", label="fig4-theorem3", **common),
        }
    alloc = algorithm1_allocate(scenario)
    sched = CodingSchedule.for_scenario(scenario, alloc.channels, coding_seed, dwell=1, mode="theorem4",
                                        perturbation=CODING_PERTURBATION)
    if fig == 5:
        return {
            "lemma2": ExperimentSpec(scenario, l2, sched, "monitored", label="fig5-lemma2", **common),
            "theorem3": ExperimentSpec(scenario, t3, sched, "monitored", label="fig5-theorem3", **common),
        }
    if fig == 6:
        t3a = AttackPlan("theorem3", 2, THEOREM3_ETA, burn_in, coding_aware=True)
        return {
            "theorem3-aware": ExperimentSpec(scenario, t3a, sched, "monitored", label="fig6-theorem3-aware", **common),
            "theorem3-unaware": ExperimentSpec(scenario, t3, sched, "monitored", label="fig6-theorem3-unaware", **common),
        }
    raise ValueError(f"figure must be one of {FIGURE_IDS}")


def reproduce_figure(fig: int, runs: int = 1000, seed: int = 0, scenario: Scenario | None = None,
                     horizon: int = 400, burn_in: int = 50, tests: str = "monitored", coding_seed: int = 7,
                     threads: int | None = None, steady: SteadyState | None = None) -> dict:
    """Curves for one of the simulation figures, keyed by experiment name."""
    if fig not in FIGURE_IDS:
        raise ValueError(f"figure must be one of {FIGURE_IDS}")
    scenario = scenario or build_paper_scenario(0)
    steady = steady or solve_steady_state(scenario)
    specs = _figure_specs(fig, scenario, runs, seed, horizon, burn_in, tests, coding_seed)
    return {name: run_experiment(s, steady, threads) for name, s in specs.items()}
