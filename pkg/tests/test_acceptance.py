"""Acceptance criteria, each checked at its stated tolerance.

Every test records one PASS/FAIL line; the lines are echoed in the
terminal summary (see ``conftest.pytest_terminal_summary``).  The Monte
Carlo experiments are shared between criteria and computed on first use.
"""
from functools import lru_cache

import numpy as np
import pytest

import conftest
from dcfsec import coding
from dcfsec.coding import CodingSchedule, algorithm1_allocate, allocate_min_intersection, allocate_min_rank
from dcfsec.coding import coding_matrix_at, decode, encode
from dcfsec.estimator import solve_steady_state
from dcfsec.matana import ToleranceProfile, chi_square_quantile, null_space_basis, spectral_radius
from dcfsec.netmodel import build_paper_scenario, build_random_scenario
from dcfsec.simharness import ExperimentSpec, _figure_specs, first_alarm_time, run_experiment
from dcfsec.vulnerability import lemma3_component, stack_unattacked, theorem2_bruteforce, theorem2_check

from test_coding import min_intersection_oracle, min_rank_oracle, star_scenario
from test_estimator import scalar_riccati, scalar_scenario
from test_matana import quantile_by_quadrature
from test_vulnerability import contained, random_instance

pytestmark = pytest.mark.slow

CALIBRATION_RUNS = 1000
# attacked experiments watch up to ~20 tests for 350 steps; the per-test
# maximum of a 5% rate needs this many runs to stay inside [3%, 7%]
ATTACK_RUNS = 4000
HORIZON = 400
BURN_IN = 50
LOW, HIGH = 0.03, 0.07


def record(criterion: str, ok: bool, detail: str):
    line = f"{'PASS' if ok else 'FAIL'}  criterion {criterion}: {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@lru_cache(maxsize=None)
def scenario():
    return build_paper_scenario(0)


@lru_cache(maxsize=None)
def steady():
    return solve_steady_state(scenario())


@lru_cache(maxsize=None)
def experiment(fig: int, name: str):
    spec = _figure_specs(fig, scenario(), ATTACK_RUNS, 0, HORIZON, BURN_IN, "monitored", 7)[name]
    return run_experiment(spec, steady())


def band(rate, lo=LOW, hi=HIGH):
    return float(rate.min()), float(rate.max()), bool(lo <= rate.min() and rate.max() <= hi)


def test_1_nominal_calibration():
    b = run_experiment(ExperimentSpec(scenario(), mu_edges="all", horizon=HORIZON, runs=CALIBRATION_RUNS, seed=0,
                                      burn_in=BURN_IN), steady())
    parts, ok = [], True
    for f in ("local", "edge", "mu"):
        lo, hi, good = band(b.rate(f, "mean")[BURN_IN:])
        worst = float(b.rate(f, "max")[BURN_IN:].max())
        ok &= good
        parts.append(f"{f} {lo:.2%}..{hi:.2%} (single-test max {worst:.2%})")
    record("1", ok, "false-alarm rate per family, " + "; ".join(parts))


def test_2_lemma2_stealth_and_divergence():
    b = experiment(4, "lemma2")
    post = slice(BURN_IN, HORIZON)
    zl = band(b.rate("local")[post])
    ze = band(b.rate("edge")[post])
    err = float(b.err_mean[BURN_IN + 2])
    dz = float(b.max_dz.max() / 1e10)
    ok = zl[2] and ze[2] and err > 1e8 and dz <= 1e-6
    record("2", ok, f"z_i {zl[0]:.2%}..{zl[1]:.2%}, z_ij {ze[0]:.2%}..{ze[1]:.2%}, "
                    f"mean error {err:.3g} two steps after onset, max|dz|/eta {dz:.2e}")


def test_3_baseline_caught_locally():
    b = experiment(3, "baseline")
    t = first_alarm_time(b, "local", 0.99, relative=True)
    ze = band(b.rate("edge")[BURN_IN:])
    ok = t is not None and t <= 20 and ze[2]
    record("3", ok, f"z_i reaches 99% after {t} steps, z_ij {ze[0]:.2%}..{ze[1]:.2%}")


def test_4_distance_detector():
    l2 = experiment(4, "lemma2")
    t_mu = first_alarm_time(l2, "mu", 0.99, relative=True)
    t3 = experiment(4, "theorem3")
    window = slice(BURN_IN, BURN_IN + 151)
    bands = {f: band(t3.rate(f)[window], hi=0.08) for f in ("local", "edge", "mu")}
    sc = scenario()
    lam = spectral_radius(sc.process.A)
    k = np.arange(1, HORIZON - BURN_IN)
    law = sc.epsilon * len(sc.topology.in_neighbors(2)) * 0.01 * lam ** (k - 1)
    ratio = t3.delta_norm_mean[BURN_IN + k] / law
    growth_ok = bool(np.all(np.abs(ratio - 1) <= 0.10))
    ok = t_mu is not None and t_mu <= 5 and all(v[2] for v in bands.values()) and growth_ok
    fam = ", ".join(f"{f} {lo:.2%}..{hi:.2%}" for f, (lo, hi, _) in bands.items())
    record("4", ok, f"mu catches Lemma 2 after {t_mu} steps; Theorem 3 through step 150: {fam}; "
                    f"deviation / geometric law in {ratio.min():.4f}..{ratio.max():.4f} (lambda {lam:.4f})")


def test_5_coding_exposes_attacks():
    alloc = algorithm1_allocate(scenario())
    l2 = experiment(5, "lemma2")
    t3 = experiment(5, "theorem3")
    at_onset = float(l2.rate("any")[BURN_IN])
    t = first_alarm_time(t3, "any", 0.99, relative=True)
    ok = alloc.count == 3 and (14, 2) in alloc.channels and at_onset >= 0.99 and t is not None and t <= 250
    record("5", ok, f"allocation {alloc.channels}; Lemma 2 alarm rate {at_onset:.2%} at onset; "
                    f"Theorem 3 reaches 99% after {t} steps (absolute step {None if t is None else t + BURN_IN})")


def test_6_coding_aware_attacker_is_delayed():
    unaware = first_alarm_time(experiment(5, "theorem3"), "any", 0.99, relative=True)
    aware = first_alarm_time(experiment(6, "theorem3-aware"), "any", 0.99, relative=True)
    ok = unaware is not None and aware is not None and aware > unaware
    record("6", ok, f"aware attacker reaches 99% after {aware} steps, unaware after {unaware} "
                    f"(horizon {HORIZON - BURN_IN} steps after onset)")


def test_7_oracles():
    worst = 0.0
    for a in (0.3, 0.9, 1.05, 1.4):
        for q in (0.01, 0.1, 1.0):
            for r in (0.05, 0.5, 2.0):
                P = solve_steady_state(scalar_scenario(a, q, r), ToleranceProfile(fixpoint_tol=1e-13)).P[0, 0]
                worst = max(worst, abs(P / scalar_riccati(a, q, r) - 1))
    riccati = worst <= 1e-8

    mism = sum(theorem2_check(sc, att).vulnerable != theorem2_bruteforce(sc, att, horizon=6)
               for sc, att in map(random_instance, range(50)))

    alloc_mism = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n, d = int(rng.integers(3, 5)), int(rng.integers(1, 11))
        A = rng.standard_normal((n, n))
        C_i = rng.standard_normal((1, n)) if rng.random() < 0.8 else np.zeros((1, n))
        leaves = [rng.standard_normal((1, n)) if int(rng.integers(0, 2)) else C_i.copy() for _ in range(d)]
        sc = star_scenario(C_i, leaves, A=A, n=n)
        Cs = {s: sc.C(s) for s in range(2, d + 2)}
        got = [allocate_min_rank(sc, 1)[0], allocate_min_intersection(sc, 1)[0]]
        got = [None if c is None else len(c) for c in got]
        alloc_mism += got != [min_rank_oracle(sc.C(1), Cs, n), min_intersection_oracle(A, sc.C(1), Cs, n)]

    chi = max(abs(chi_square_quantile(df, 0.95) - quantile_by_quadrature(df, 0.95)) for df in range(1, 13))
    ok = riccati and mism == 0 and alloc_mism == 0 and chi < 1e-2
    record("7", ok, f"Riccati rel. error {worst:.1e}; Theorem 2 mismatches {mism}/50; "
                    f"allocation mismatches {alloc_mism}/100; chi-square quantile error {chi:.1e}")


def test_8_structural_invariants():
    nested = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        sc = build_random_scenario(seed, N=int(rng.integers(3, 7)), n=3)
        att = [e for e in sc.topology.edges if rng.random() < 0.5]
        i = int(rng.integers(1, sc.N + 1))
        xi = null_space_basis(sc.C(i)).basis
        xt = stack_unattacked(sc, att, i)[1]
        xc = null_space_basis(np.vstack([sc.C(s) for s in lemma3_component(sc.topology, att, i)])).basis
        nested += contained(xc, xt) and contained(xt, xi)

    sched = CodingSchedule.for_scenario(scenario(), [(14, 2), (17, 27), (19, 20)], seed=7, dwell=1)
    rng = np.random.default_rng(1)
    roundtrip = 0.0
    for _ in range(2000):
        ch = [(14, 2), (17, 27), (19, 20)][int(rng.integers(0, 3))]
        k = int(rng.integers(0, 10_000))
        x = rng.standard_normal(6) * 10.0 ** rng.integers(-3, 4)
        back = decode(ch, encode(ch, x, k, sched), k, sched)
        roundtrip = max(roundtrip, float(np.linalg.norm(back - x) / np.linalg.norm(x)))

    send = CodingSchedule.for_scenario(scenario(), [(14, 2)], seed=11, dwell=2)
    recv = CodingSchedule.for_scenario(scenario(), [(14, 2)], seed=11, dwell=2)
    steps = np.random.default_rng(0).integers(0, 10_000, size=10_000)
    sent = [coding_matrix_at(send, (14, 2), int(k)) for k in steps]
    coding._CACHE.clear()
    agree = sum(np.array_equal(coding_matrix_at(recv, (14, 2), int(k)), M) for k, M in zip(steps, sent))

    ok = nested == 100 and roundtrip <= 1e-10 and agree == 10_000
    record("8", ok, f"nested null spaces {nested}/100; round-trip rel. error {roundtrip:.1e}; "
                    f"sender/receiver agreement {agree}/10000")
