"""Request handlers shared by the HTTP service and the in-process CLI.

Every handler takes plain JSON-compatible values and returns a JSON-compatible
dict; each response carries the digest of the inputs it was computed from.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from ..coding import AllocationInfeasible, CodingSchedule, algorithm1_allocate, coding_matrix_at, lemma4_condition, theorem4_condition
from ..estimator import FixpointDivergence, check_detectability, solve_steady_state
from ..matana import DEFAULT_TOL, ToleranceProfile, chi_square_quantile
from ..netmodel import (
    DetectorSettings, ProcessModel, Scenario, ScenarioError, SensorModel, Topology,
    build_paper_scenario, is_strongly_connected,
)
from ..simharness import ExperimentSpec, first_alarm_time, reproduce_figure, run_experiment
from ..vulnerability import build_report

__all__ = [
    "digest_of",
    "load_scenario",
    "handle_analyze",
    "handle_allocate",
    "handle_design_codes",
    "handle_simulate",
    "handle_reproduce",
    "handle_thresholds",
    "handle_validate",
    "stabilizable",
]


def digest_of(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def load_scenario(spec) -> Scenario:
    """Scenario from a dict, or from ``{"builtin": "paper", "seed": s}``."""
    if isinstance(spec, Scenario):
        return spec
    if not isinstance(spec, dict):
        raise ScenarioError("scenario must be a JSON object")
    if "builtin" in spec:
        if spec["builtin"] != "paper":
            raise ScenarioError(f"unknown builtin scenario {spec['builtin']!r}")
        return build_paper_scenario(int(spec.get("seed", 0)))
    return Scenario.from_dict(spec)


def _tol(overrides: dict | None) -> ToleranceProfile:
    if not overrides:
        return DEFAULT_TOL
    fields = DEFAULT_TOL.as_dict()
    unknown = set(overrides) - set(fields)
    if unknown:
        raise ValueError(f"unknown tolerance fields: {sorted(unknown)}")
    fields.update({k: v for k, v in overrides.items() if v is not None})
    return ToleranceProfile(**fields)


def _inputs(scenario: Scenario, **extra) -> dict:
    d = {"scenario": scenario.digest()}
    if extra:
        d["parameters"] = digest_of(extra)
    return d


def handle_analyze(scenario, attack_sets=None, tolerances=None, steady_state: bool = True,
                   theorem2_cap: int = 600) -> dict:
    sc = load_scenario(scenario)
    tol = _tol(tolerances)
    steady = solve_steady_state(sc, tol) if steady_state else None
    sets = [[tuple(e) for e in s] for s in (attack_sets or [])]
    report = build_report(sc, sets, steady, tol, theorem2_cap)
    out = report.to_dict()
    out["status"] = "vulnerable" if report.any_vulnerable else "secure"
    out["inputs"] = _inputs(sc, attack_sets=[[list(e) for e in s] for s in sets], tolerances=tol.as_dict())
    return out


def handle_allocate(scenario, exact_limit: int = 15, interrupt: bool = True, tolerances=None) -> dict:
    sc = load_scenario(scenario)
    tol = _tol(tolerances)
    inputs = _inputs(sc, exact_limit=exact_limit, interrupt=interrupt, tolerances=tol.as_dict())
    try:
        res = algorithm1_allocate(sc, exact_limit, tol, interrupt)
    except AllocationInfeasible as exc:
        out = exc.result.to_dict() if exc.result is not None else {"channels": [], "count": 0, "feasible": False}
        out.update(status="infeasible", message=str(exc), infeasible_nodes=list(exc.nodes), inputs=inputs)
        return out
    out = res.to_dict()
    out["status"] = "ok" if res.feasible else "infeasible"
    out["inputs"] = inputs
    return out


def handle_design_codes(scenario, channels=None, seed: int = 0, dwell: int = 1, mode: str = "theorem4",
                        policy: str = "perturbed", perturbation: float = 0.1, steps: int = 0,
                        tolerances=None) -> dict:
    """Coding schedule for ``channels`` (allocation output when omitted).

    The response lists each channel's base matrix and, when ``steps`` > 0,
    the per-step matrices for steps ``0..steps-1`` with their checks.
    """
    sc = load_scenario(scenario)
    tol = _tol(tolerances)
    if channels is None:
        channels = algorithm1_allocate(sc, tol=tol).channels
    sched = CodingSchedule.for_scenario(sc, [tuple(c) for c in channels], seed, tol, dwell=dwell, mode=mode,
                                        policy=policy, perturbation=perturbation)
    per = []
    for e in sched.channels:
        entry = {"channel": list(e), "steps": []}
        if policy == "perturbed":
            M = sched.base_matrix(e, tol)
            entry["base"] = M.tolist()
            entry["base_condition"] = float(np.linalg.cond(M))
        xi_i, xi_j = sched.null_bases[e]
        for k in range(steps):
            M = coding_matrix_at(sched, e, k)
            entry["steps"].append({
                "k": k,
                "matrix": M.tolist(),
                "condition": float(np.linalg.cond(M)),
                "theorem4": bool(theorem4_condition(M, tol)),
                "lemma4": bool(lemma4_condition(M, xi_i, xi_j, tol)),
            })
        per.append(entry)
    return {
        "schedule": sched.to_dict(),
        "channels": per,
        "inputs": _inputs(sc, channels=[list(c) for c in sched.channels], seed=seed, dwell=dwell, mode=mode,
                          policy=policy, perturbation=perturbation, steps=steps),
    }


def _bundle_payload(bundle, include_csv: bool) -> dict:
    out = {"summary": bundle.summary()}
    out["first_alarm"] = {
        g: first_alarm_time(bundle, g, 0.99, relative=True) for g in sorted(bundle.group_counts)
    }
    if include_csv:
        out["alarms_csv"] = bundle.alarm_csv()
        out["error_csv"] = bundle.error_csv()
    return out


def handle_simulate(scenario, experiment: dict, runs=None, seed=None, horizon=None, threads=None,
                    include_csv: bool = True) -> dict:
    sc = load_scenario(scenario)
    exp = dict(experiment or {})
    for key, val in (("runs", runs), ("seed", seed), ("horizon", horizon)):
        if val is not None:
            exp[key] = val
    spec = ExperimentSpec.from_dict(exp, sc)
    bundle = run_experiment(spec, threads=threads)
    out = _bundle_payload(bundle, include_csv)
    out["experiment"] = spec.resolved()
    out["inputs"] = _inputs(sc, experiment=exp)
    return out


def handle_reproduce(fig: int, runs: int = 1000, seed: int = 0, horizon: int = 400, scenario_seed: int = 0,
                     coding_seed: int = 7, threads=None, include_csv: bool = True) -> dict:
    sc = build_paper_scenario(scenario_seed)
    bundles = reproduce_figure(fig, runs=runs, seed=seed, scenario=sc, horizon=horizon, coding_seed=coding_seed,
                               threads=threads)
    return {
        "figure": fig,
        "experiments": {name: _bundle_payload(b, include_csv) for name, b in bundles.items()},
        "inputs": _inputs(sc, fig=fig, runs=runs, seed=seed, horizon=horizon, coding_seed=coding_seed),
    }


def handle_thresholds(dfs, confidences=(0.95,), window: int = 1) -> dict:
    if window < 1:
        raise ValueError("window must be >= 1")
    rows = [
        {"df": int(df), "window": window, "confidence": float(c), "threshold": chi_square_quantile(int(df) * window, float(c))}
        for df in dfs for c in confidences
    ]
    return {"thresholds": rows, "inputs": {"parameters": digest_of([list(map(int, dfs)), list(confidences), window])}}


def stabilizable(A, Q, tol: ToleranceProfile = DEFAULT_TOL) -> tuple[bool, list]:
    """Eigenvector test: every left eigenvector of a mode with ``|lambda| >= 1``
    must have a nonzero projection onto ``range(Q^{1/2})``."""
    A = np.asarray(A, dtype=float)
    w, V = np.linalg.eig(A.T)
    sq = _sqrt_psd(np.asarray(Q, dtype=float))
    bad = []
    for lam, v in zip(w, V.T):
        if abs(lam) >= 1.0 - 1e-12:
            proj = np.linalg.norm(v.conj() @ sq)
            if proj <= tol.subspace_tol * max(1.0, np.linalg.norm(sq)):
                bad.append(complex(lam))
    return not bad, bad


def _sqrt_psd(S):
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    return V * np.sqrt(np.clip(w, 0, None))


def _check(name, assumption, fn):
    try:
        ok, detail = fn()
    except (ScenarioError, ValueError, FixpointDivergence, np.linalg.LinAlgError) as exc:
        ok, detail = False, str(exc)
    return {"check": name, "assumption": assumption, "ok": bool(ok), "detail": detail}


def handle_validate(scenario, tolerances=None) -> dict:
    """Diagnose modelling assumptions one at a time, without stopping at the first failure."""
    tol = _tol(tolerances)
    raw = scenario
    if isinstance(raw, dict) and "builtin" in raw:
        raw = load_scenario(raw).to_dict()
    if isinstance(raw, Scenario):
        raw = raw.to_dict()
    checks = []
    parts = {}

    def process():
        parts["process"] = ProcessModel(np.array(raw["A"], float), np.array(raw["Q"], float), np.array(raw["Pi0"], float))
        return True, f"n = {parts['process'].n}; Q and Pi0 positive semidefinite"

    def sensors():
        parts["sensors"] = [SensorModel(int(s["id"]), np.array(s["C"], float), np.array(s["R"], float)) for s in raw["sensors"]]
        return True, f"{len(parts['sensors'])} sensors; every R_i positive definite"

    def graph():
        N = int(raw.get("N", len(raw["sensors"])))
        parts["topology"] = Topology(N, tuple(tuple(e) for e in raw["edges"]))
        ok = is_strongly_connected(parts["topology"].edges, N)
        return ok, "strongly connected" if ok else "graph is not strongly connected"

    def gain():
        topo = parts.get("topology")
        if topo is None:
            return False, "topology unavailable"
        dmax = topo.max_in_degree
        eps = float(raw["epsilon"])
        ok = 0.0 < eps < (1.0 / dmax if dmax else np.inf)
        return ok, f"epsilon = {eps}, max in-degree = {dmax}, admissible range (0, {1.0 / dmax if dmax else np.inf:.4g})"

    def stab():
        p = parts.get("process")
        if p is None:
            return False, "process model unavailable"
        ok, bad = stabilizable(p.A, p.Q, tol)
        return ok, "stabilizable" if ok else f"unreachable modes with |lambda| >= 1: {[str(b) for b in bad]}"

    checks.append(_check("process", "Q, Pi0 positive semidefinite", process))
    checks.append(_check("sensors", "R_i positive definite", sensors))
    checks.append(_check("strong-connectivity", "every node reaches every other node", graph))
    checks.append(_check("consensus-gain", "0 < epsilon < 1/max d_i", gain))
    checks.append(_check("stabilizability", "(A, Q^1/2) stabilizable", stab))

    sc = None
    if all(c["ok"] for c in checks):
        def build():
            nonlocal sc
            sc = Scenario(parts["process"], tuple(parts["sensors"]), parts["topology"], float(raw["epsilon"]),
                          DetectorSettings(**raw.get("detector", {})), raw.get("seed"), raw.get("meta", {}))
            return True, "scenario assembled"
        checks.append(_check("assembly", "dimensions consistent", build))
    if sc is not None:
        checks.append(_check("detectability", "steady-state fixpoint exists and stabilises", lambda: check_detectability(sc, tol)))
    else:
        checks.append({"check": "detectability", "assumption": "steady-state fixpoint exists and stabilises", "ok": False,
                       "detail": "skipped: earlier checks failed"})
    ok = all(c["ok"] for c in checks)
    return {
        "ok": ok,
        "status": "ok" if ok else "invalid",
        "checks": checks,
        "inputs": {"scenario": sc.digest() if sc is not None else digest_of(raw)},
    }
