import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dcfsec.matana import null_space_basis
from dcfsec.netmodel import PAPER_A, ProcessModel, build_random_scenario, unstable_eigenvector
from dcfsec.vulnerability import (
    DecouplingViolation, DimensionCapExceeded, as_channel_set, build_report, intersection_certificate,
    lemma1_bound, lemma1_reduction, lemma2_check, lemma3_check, lemma3_component, stack_unattacked,
    theorem1_check, theorem2_bruteforce, theorem2_check, theorem3_check,
)

from conftest import ring_scenario

LEMMA2_SET = [(14, 2), (2, 10)]


def contained(inner, outer, atol=1e-8):
    """Projection residual test for range(inner) ⊆ range(outer)."""
    if inner.shape[1] == 0:
        return True
    if outer.shape[1] == 0:
        return False
    return np.linalg.norm(inner - outer @ (outer.T @ inner)) <= atol


def random_instance(seed, N=None):
    """2-3 node network, n=2, m=1; most sensors are blind to an eigenvector of A."""
    rng = np.random.default_rng(seed)
    N = N or int(rng.integers(2, 4))
    n = 2
    B = rng.standard_normal((n, n))
    A = B + B.T
    V = np.linalg.eigh(A)[1]
    C = []
    for _ in range(N):
        if rng.random() < 0.6:
            v = V[:, int(rng.integers(0, n))]
            C.append(np.array([[-v[1], v[0]]]))
        else:
            C.append(rng.standard_normal((1, n)))
    extra = [(a, b) for a in range(1, N + 1) for b in range(1, N + 1)
             if a != b and b % N + 1 != a and rng.random() < 0.5]
    sc = ring_scenario(N=N, n=n, m=1, seed=seed, extra=extra, C=C)
    sc = sc.with_(process=ProcessModel(A, sc.process.Q, sc.process.Pi0))
    k = int(rng.integers(0, len(sc.topology.edges) + 1))
    idx = rng.choice(len(sc.topology.edges), size=k, replace=False)
    return sc, [sc.topology.edges[t] for t in idx]


class TestChannelSets:
    def test_adjacency_form(self):
        M = np.zeros((3, 3))
        M[1, 0] = 1
        assert as_channel_set(M) == frozenset({(2, 1)})

    def test_pairs(self):
        assert as_channel_set([[1, 2], (3, 1)]) == frozenset({(1, 2), (3, 1)})


class TestTheorem1:
    def test_paper_nodes(self, paper):
        flagged = [i for i in range(1, 31) if theorem1_check(PAPER_A, paper.C(i)).vulnerable]
        assert flagged == [2, 20, 27]

    def test_certificate(self, paper):
        r = theorem1_check(PAPER_A, paper.C(2))
        lhs, rhs = r.xi @ r.x_star, PAPER_A @ r.xi @ r.y_star
        assert np.linalg.norm(lhs - rhs) <= 1e-8 * np.linalg.norm(rhs)
        assert np.linalg.norm(r.y_star) == pytest.approx(1.0)

    def test_full_rank_is_secure(self):
        r = theorem1_check(np.eye(2), np.eye(2))
        assert not r.vulnerable and not r.rank_deficient

    def test_rotation_moves_null_space_away(self):
        # null(C) = e1, A e1 = e2: no intersection
        r = theorem1_check(np.array([[0.0, -1.0], [1.0, 0.0]]), [[0.0, 1.0]])
        assert r.rank_deficient and not r.intersection and not r.vulnerable

    def test_empty_operands(self):
        assert intersection_certificate(np.eye(2), np.zeros((2, 0)), np.eye(2)) is None


class TestLemma1:
    def test_reduction_full_row_rank(self):
        C = np.array([[1.0, 0, 0], [2.0, 0, 0], [0, 1.0, 0]])
        Cr, D = lemma1_reduction(C)
        assert Cr.shape == (2, 3) and np.allclose(D @ C, Cr)

    def test_bound_scalar(self):
        # C = 1 gives 2 * 1 * sqrt(sigma)
        assert lemma1_bound([[1.0]], [[4.0]]) == pytest.approx(4.0)

    def test_bound_requires_pd(self):
        with pytest.raises(ValueError):
            lemma1_bound([[1.0]], [[0.0]])


class TestLemma2:
    def test_paper_set(self, paper):
        r = lemma2_check(paper, LEMMA2_SET, 2)
        assert r.vulnerable
        assert r.attacked_in == ((2, 10),) and r.attacked_out == ((14, 2),)
        lhs, rhs = r.xi_stack @ r.x_star, PAPER_A @ r.xi @ r.y_star
        assert np.linalg.norm(lhs - rhs) <= 1e-8 * np.linalg.norm(rhs)

    def test_clean_out_channel_closes_the_gap(self, paper):
        # with (14,2) clean, node 14 must be covered by an attacked in-channel of its own
        t = next(u for u in paper.topology.in_neighbors(14) if u != 2)
        r = lemma2_check(paper, [(2, 10), (14, t)], 2)
        assert r.rank_deficient is False and not r.vulnerable

    def test_no_attack_violates_precondition(self, paper):
        with pytest.raises(DecouplingViolation):
            lemma2_check(paper, [], 2)

    def test_uncovered_out_neighbour(self, paper):
        with pytest.raises(DecouplingViolation):
            lemma2_check(paper, [(2, 10)], 2)

    def test_non_edge(self, paper):
        with pytest.raises(ValueError):
            lemma2_check(paper, [(2, 3)], 2)

    def test_implies_theorem2(self, paper):
        assert theorem2_check(paper, LEMMA2_SET).vulnerable


class TestTheorem2:
    def test_nothing_attacked(self, paper):
        assert not theorem2_check(paper, []).vulnerable

    def test_full_rank_sensors_have_no_free_coordinates(self):
        sc = ring_scenario(N=3, n=2, m=2, seed=1)
        r = theorem2_check(sc, sc.topology.edges)
        assert r.free_dim == 0 and not r.vulnerable

    def test_dimension_cap(self, paper):
        with pytest.raises(DimensionCapExceeded):
            theorem2_check(paper, paper.topology.edges, dim_cap=5)

    @pytest.mark.parametrize("seed", range(50))
    def test_matches_bruteforce(self, seed):
        sc, att = random_instance(seed)
        assert theorem2_check(sc, att).vulnerable == theorem2_bruteforce(sc, att, horizon=6)

    def test_bruteforce_sample_has_both_verdicts(self):
        verdicts = {theorem2_check(*random_instance(s)).vulnerable for s in range(50)}
        assert verdicts == {True, False}


class TestTheorem3:
    def test_paper_node(self, paper):
        r = theorem3_check(PAPER_A, paper.C(2))
        assert r.vulnerable and r.eigenvalue == pytest.approx(1.0405, abs=5e-5)
        assert np.linalg.norm(PAPER_A @ r.x0 - r.eigenvalue * r.x0) <= 1e-8
        _, v = unstable_eigenvector(PAPER_A)
        assert abs(abs(r.x0 @ v) - 1) < 1e-10

    def test_stable_plant(self):
        r = theorem3_check(0.5 * np.eye(2), [[1.0, 0.0]])
        assert not r.vulnerable and not r.a_unstable and r.invariant_nontrivial

    def test_observable_pair(self):
        r = theorem3_check(np.array([[1.1, 1.0], [0.0, 0.5]]), [[1.0, 0.0]])
        assert r.rank_deficient and not r.invariant_nontrivial and not r.vulnerable

    def test_invariant_but_stable_mode(self):
        r = theorem3_check(np.diag([1.2, 0.5]), [[1.0, 0.0]])
        assert r.invariant_nontrivial and not r.unstable_in_invariant and not r.vulnerable

    def test_rotation_eigenvalue(self):
        A = 1.1 * np.array([[0.0, -1.0, 0], [1.0, 0.0, 0], [0, 0, 0.3]])
        r = theorem3_check(A, [[0.0, 0.0, 1.0]])
        assert r.vulnerable and isinstance(r.eigenvalue, complex)
        json.dumps(r.to_dict())


class TestLemma3:
    def test_everything_attacked_reduces_to_theorem3(self, paper):
        r = lemma3_check(paper, paper.topology.edges, 2)
        assert r.component == (2,)
        assert r.vulnerable == theorem3_check(PAPER_A, paper.C(2)).vulnerable

    def test_nothing_attacked_stacks_all(self, paper):
        r = lemma3_check(paper, [], 2)
        assert len(r.component) == 30 and not r.vulnerable
        assert r.to_dict()["verdict"] == "secure"

    def test_isolated_node(self):
        sc = ring_scenario(N=3)
        edges = [e for e in sc.topology.edges if 2 in e]
        assert lemma3_component(sc.topology, edges, 2) == (2,)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_stack_null_spaces_are_nested(seed):
    rng = np.random.default_rng(seed)
    sc = build_random_scenario(seed % 10_000, N=int(rng.integers(3, 7)), n=3)
    edges = sc.topology.edges
    att = [e for e in edges if rng.random() < 0.5]
    i = int(rng.integers(1, sc.N + 1))
    xi = null_space_basis(sc.C(i)).basis
    xt = stack_unattacked(sc, att, i)[1]
    comp = lemma3_component(sc.topology, att, i)
    xc = null_space_basis(np.vstack([sc.C(s) for s in comp])).basis
    assert contained(xc, xt) and contained(xt, xi)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_attacking_more_never_shrinks_stack_null_space(seed):
    rng = np.random.default_rng(seed)
    sc = build_random_scenario(seed % 10_000, N=5, n=3)
    order = list(sc.topology.edges)
    rng.shuffle(order)
    i = int(rng.integers(1, sc.N + 1))
    dims = [stack_unattacked(sc, order[:k], i)[1].shape[1] for k in range(len(order) + 1)]
    assert all(a <= b for a, b in zip(dims, dims[1:]))


class TestReport:
    def test_paper_report(self, paper, paper_steady):
        rep = build_report(paper, [LEMMA2_SET], paper_steady)
        assert rep.vulnerable_nodes == [2, 20, 27] and rep.any_vulnerable
        d = json.loads(json.dumps(rep.to_dict()))
        s = d["attack_sets"][0]
        assert s["theorem2"]["vulnerable"]
        assert s["nodes"]["2"]["lemma2"]["vulnerable"]
        assert s["nodes"]["10"]["lemma2"] is None and "lemma2_skipped" in s["nodes"]["10"]
        assert d["nodes"]["1"]["lemma1_bound"] > 0

    def test_cap_reported_not_raised(self, paper):
        rep = build_report(paper, [paper.topology.edges], theorem2_cap=5)
        assert rep.attack_sets[0]["theorem2"]["vulnerable"] is None
