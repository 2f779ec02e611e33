import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from normip import norms, polytopes, spaces
from normip.norms import (
    HSum, Lp, MaxOf, PolytopeGauge, Scaled, TopK, audit_normalization,
    audit_symmetry, dual_exponent, dual_norm_bruteforce, eval_norm, lp_norm,
    spec_from_json, spec_to_json, topk_dual_norm, topk_norm,
)

finite_floats = st.floats(min_value=-50, max_value=50, allow_nan=False)
small_vectors = st.lists(finite_floats, min_size=1, max_size=8).map(np.array)


def test_lp_norm_examples():
    assert lp_norm([3, 4], 2) == 5
    assert lp_norm([1, -1, 1], math.inf) == 1
    assert lp_norm([1, 1, 1, 1], 1) == 4


def test_lp_norm_rejects_bad_p():
    with pytest.raises(ValueError):
        lp_norm([1.0], 0.5)


def test_dual_exponent_examples():
    assert dual_exponent(2) == 2
    assert dual_exponent(1) == math.inf
    assert dual_exponent(math.inf) == 1
    assert abs(dual_exponent(4) - 4 / 3) < 1e-15


def test_topk_norm_examples():
    assert topk_norm([3, 1, 2, 0], 2) == 5
    n = 7
    assert topk_norm(np.ones(n), n) == n
    assert topk_norm([-5, 4, -3, 2, 1], 3) == 12
    with pytest.raises(ValueError):
        topk_norm([1, 2], 3)


def test_topk_dual_norm_examples():
    assert topk_dual_norm([1, 1, 1], 2) == 1.5
    assert topk_dual_norm([2, 0, 0], 2) == 2


def test_topk_dual_full_k_against_bruteforce():
    # sup over the top-4 ball at n=4, computed by vertex enumeration
    w = np.ones(4)
    res = dual_norm_bruteforce(TopK(4), w)
    assert res.exact
    assert abs(res.value - 1.0) <= 1e-9
    assert abs(topk_dual_norm(w, 4) - res.value) <= 1e-9


def test_eval_norm_examples():
    # max(linf, l1/k) is the top-k dual
    spec = MaxOf(Lp(math.inf), Scaled(Lp(1), 0.5))
    rng = np.random.default_rng(0)
    for _ in range(100):
        w = rng.standard_normal(6)
        assert abs(eval_norm(spec, w) - topk_dual_norm(w, 2)) <= 1e-12

    h = HSum(Lp(1), (Lp(2), Lp(2)), (2, 2))
    assert eval_norm(h, [3, 4, 0, 0]) == 5
    assert eval_norm(Lp(2), [3, 4]) == 5


def test_eval_norm_dimension_mismatch():
    h = HSum(Lp(1), (Lp(2), Lp(2)), (2, 2))
    with pytest.raises(ValueError):
        eval_norm(h, [1, 2, 3])


def test_dual_norm_bruteforce_examples():
    assert dual_norm_bruteforce(Lp(1), [1, 2, 3]).value == 3
    res = dual_norm_bruteforce(TopK(2), [1.0, 1.0, 1.0])
    assert res.exact and abs(res.value - 1.5) <= 1e-9
    res2 = dual_norm_bruteforce(Lp(2), [3.0, 4.0])
    assert not res2.exact
    assert res2.value == pytest.approx(5.0, abs=1e-6)
    # heuristic result is a certified lower bound
    assert res2.value <= 5.0 + 1e-9


def test_audit_symmetry_pass_and_fail():
    assert audit_symmetry(Lp(3), trials=100, dim=5).passed
    assert audit_symmetry(TopK(2), trials=100, dim=5).passed

    weights = np.array([[1.0, 0.0], [0.0, 2.0]])
    # weighted l1 with weights (1, 2): |x1| + 2 |x2| <= 1
    rows = np.array([[1.0, 2.0], [1.0, -2.0]])
    weighted = PolytopeGauge(polytopes.Polytope(2, hrep=rows))
    report = audit_symmetry(weighted, trials=100)
    assert not report.passed
    assert report.failure_kind == "permutation"
    assert report.counterexample is not None
    del weights


@given(small_vectors, st.floats(min_value=0.01, max_value=20))
@settings(max_examples=60, deadline=None)
def test_homogeneity_and_positivity(v, alpha):
    for spec in (Lp(1), Lp(2), Lp(math.inf), TopK(1), TopK(min(2, v.size))):
        base = eval_norm(spec, v)
        assert base >= 0
        assert (base > 0) == bool(np.any(v))
        scaled = eval_norm(spec, alpha * v)
        assert scaled == pytest.approx(abs(alpha) * base, rel=1e-12, abs=1e-300)


@given(small_vectors, small_vectors)
@settings(max_examples=60, deadline=None)
def test_triangle_inequality(u, v):
    n = min(u.size, v.size)
    u, v = u[:n], v[:n]
    for spec in (Lp(1), Lp(2), Lp(math.inf), TopK(max(1, n // 2))):
        lhs = eval_norm(spec, u + v)
        assert lhs <= eval_norm(spec, u) + eval_norm(spec, v) + 1e-9


def test_topk_identities_exact():
    rng = np.random.default_rng(1)
    for _ in range(200):
        v = rng.standard_normal(9)
        assert topk_norm(v, 9) == lp_norm(v, 1)
        assert topk_norm(v, 1) == lp_norm(v, math.inf)


def test_normalization_audit_all_variants():
    specs = [
        Lp(1), Lp(2), Lp(math.inf), TopK(3),
        MaxOf(Lp(math.inf), Scaled(Lp(1), 1 / 3)),
        HSum(Lp(1), (Lp(2), Lp(1)), (2, 2)),
        PolytopeGauge(polytopes.cube(4)),
        PolytopeGauge(polytopes.cross_polytope(4)),
        spaces.dual_spec(TopK(2)),
    ]
    for spec in specs:
        assert audit_normalization(spec, dim=4), spec


def test_hoelder_on_random_pairs():
    rng = np.random.default_rng(7)
    for spec in (Lp(1), Lp(2), Lp(3), TopK(2), Lp(math.inf)):
        dual = spaces.dual_spec(spec)
        for _ in range(100):
            v = rng.standard_normal(5)
            w = rng.standard_normal(5)
            assert abs(v @ w) <= eval_norm(spec, v) * eval_norm(dual, w) + 1e-9


def test_duality_consistency_polyhedral():
    rng = np.random.default_rng(3)
    specs = [Lp(1), Lp(math.inf), TopK(2), TopK(3),
             MaxOf(Lp(math.inf), Scaled(Lp(1), 0.5)),
             PolytopeGauge(polytopes.cube(5)),
             PolytopeGauge(polytopes.cross_polytope(5))]
    for spec in specs:
        dual = spaces.dual_spec(spec)
        for _ in range(60):
            w = rng.standard_normal(5)
            bf = dual_norm_bruteforce(spec, w)
            assert bf.exact
            assert abs(bf.value - eval_norm(dual, w)) <= 1e-9


def test_spec_json_roundtrip():
    specs = [
        Lp(2), Lp(math.inf), TopK(3),
        MaxOf(Lp(math.inf), Scaled(Lp(1), 0.25)),
        HSum(Lp(1), (TopK(1), TopK(2)), (3, 3)),
        PolytopeGauge(polytopes.cube(3)),
        spaces.dual_spec(MaxOf(Lp(1), Lp(2))),
    ]
    rng = np.random.default_rng(5)
    for spec in specs:
        back = spec_from_json(spec_to_json(spec))
        d = norms.spec_dim(spec) or 6
        for _ in range(20):
            v = rng.standard_normal(d)
            assert eval_norm(back, v) == pytest.approx(eval_norm(spec, v), abs=1e-12)


def test_symmetric_oracle_audit_gate():
    good = norms.make_symmetric_oracle(lambda v: float(np.abs(v).sum()), dim=4)
    assert eval_norm(good, [1, -2, 0, 1]) == 4

    with pytest.raises(ValueError, match="permutation"):
        norms.make_symmetric_oracle(
            lambda v: float(abs(v[0]) + 2 * np.abs(v[1:]).sum()), dim=4)
    with pytest.raises(ValueError, match="normalized"):
        norms.make_symmetric_oracle(lambda v: 2 * float(np.abs(v).sum()), dim=4)
