import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clgnet.benchmarks import random_clg_network, random_evidence
from clgnet.errors import CapExceededError, ImpossibleEvidenceError, InputError, UnsupportedStructureError
from clgnet.inference import (HypothesisSpace, Query, answer_enum, answer_exact, answer_gibbs, answer_lw,
                              estimate_trace, evaluate_hypothesis, gibbs_chain, residual_mass_bound, reweigh)
from clgnet.model import Evidence, Network, continuous_node, discrete_node

from conftest import brute_posterior


def tv(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def random_problem(seed, nd=4, nc=3, polytree=False, n_cont=1):
    rng = np.random.default_rng(seed)
    net = random_clg_network(rng, nd, nc, polytree=polytree)
    ev = random_evidence(net, rng, n_cont=n_cont)
    q = (net.discrete_names[int(rng.integers(nd))],)
    return net, Query(q, (), ev)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000), nd=st.integers(1, 6), nc=st.integers(1, 4))
def test_exact_matches_brute_force(seed, nd, nc):
    net, query = random_problem(seed, nd, nc, n_cont=2)
    res = answer_exact(net, query)
    ref = brute_posterior(net, query.q_discrete, query.evidence)
    for k, v in ref.items():
        assert res.probabilities.get(k, 0.0) == pytest.approx(v, rel=1e-8, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_enum_with_full_K_equals_exact(seed):
    net, query = random_problem(seed, 5, 4)
    exact = answer_exact(net, query)
    space = HypothesisSpace(net, query)
    enum = answer_enum(net, query, space.domain_size)
    assert tv(exact.probabilities, enum.probabilities) < 1e-9
    for k, g in exact.gaussians.items():
        if g is not None and g.dim:
            np.testing.assert_allclose(enum.gaussians[k].mean, g.mean, rtol=1e-9)


def test_continuous_query_against_hand_computation(chain):
    # P(A | X2 = 2) and E[X1 | X2 = 2] from the closed form of the chain
    ev = Evidence({}, {"X2": 2.0})
    res = answer_exact(chain, Query(("A",), ("X1",), ev))
    from scipy import stats
    like = {"a0": stats.norm(1.0, math.sqrt(0.25 * 1.0 + 0.25)).pdf(2.0) * 0.3,
            "a1": stats.norm(2.0, math.sqrt(0.25 * 0.5 + 0.25)).pdf(2.0) * 0.7}
    z = sum(like.values())
    assert res.prob(A="a1") == pytest.approx(like["a1"] / z, rel=1e-10)
    # a1: X1 ~ N(2, .5), X2 | X1 ~ N(1 + .5 X1, .25); posterior mean by the Kalman gain
    gain = 0.5 * 0.5 / (0.25 * 0.5 + 0.25)
    assert res.gaussians[("a1",)].mean[0] == pytest.approx(2.0 + gain * (2.0 - 2.0), rel=1e-10)
    gain0 = 0.5 * 1.0 / (0.25 * 1.0 + 0.25)
    assert res.gaussians[("a0",)].mean[0] == pytest.approx(gain0 * (2.0 - 1.0), rel=1e-10)
    assert res.marginal("A")["a0"] == pytest.approx(like["a0"] / z, rel=1e-10)


@pytest.mark.parametrize("seed", range(8))
def test_samplers_close_in_total_variation(seed):
    net, query = random_problem(seed, 5, 4)
    exact = answer_exact(net, query).probabilities
    space = HypothesisSpace(net, query)
    lw = answer_lw(net, query, 10_000, np.random.default_rng(seed), space=space)
    gb = answer_gibbs(net, query, 10_000, 500, np.random.default_rng(seed), space=space)
    assert tv(exact, lw.probabilities) < 0.05
    assert tv(exact, gb.probabilities) < 0.05


def test_counts_scheme_is_unbiased_for_prior():
    # no evidence: the counts estimator is the plain empirical frequency
    net, _ = random_problem(3, 3, 2)
    q = Query((net.discrete_names[0],), (), Evidence())
    exact = answer_exact(net, q).probabilities
    est = np.mean([answer_lw(net, q, 2000, np.random.default_rng(s), scheme="counts").probabilities.get(k, 0)
                   for s in range(20) for k in [next(iter(exact))]])
    assert est == pytest.approx(exact[next(iter(exact))], abs=0.01)


def test_reweigh_schemes():
    from clgnet.inference import Hypothesis
    hs = [Hypothesis({}, math.log(0.2), math.log(2.0), count=3), Hypothesis({}, math.log(0.8), math.log(1.0), count=1)]
    np.testing.assert_allclose(reweigh(hs, "likelihood"), [0.4 / 1.2, 0.8 / 1.2])
    np.testing.assert_allclose(reweigh(hs, "counts"), [6 / 7, 1 / 7])
    with pytest.raises(InputError):
        reweigh(hs, "bogus")


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 100_000), K=st.integers(1, 6))
def test_residual_bound_covers_omitted_mass(seed, K):
    net, query = random_problem(seed, 4, 3, polytree=True)
    space = HypothesisSpace(net, query)
    gen = [x for x, _ in zip((h for h, _ in space.kbest()), range(K))]
    omitted = 0.0
    for x in space.enumerate_all():
        if x not in set(gen):
            lp, le = space.weight(x)
            omitted += math.exp(lp + le) if lp > -math.inf else 0.0
    bound = residual_mass_bound(net, query, [space.assignment(x) for x in gen], space=space)
    assert bound >= omitted * (1 - 1e-9)


def test_residual_bound_rejects_non_polytree():
    net = Network((
        discrete_node("A", "01", (), [[0.5, 0.5]]),
        continuous_node("X", ("A",), (), {("0",): (0.0, (), 1.0), ("1",): (1.0, (), 1.0)}),
        continuous_node("Y", ("A",), ("X",), {("0",): (0.0, (1.0,), 1.0), ("1",): (1.0, (1.0,), 1.0)}),
    ))
    q = Query(("A",), (), Evidence({}, {"Y": 0.0}))
    with pytest.raises(UnsupportedStructureError):
        residual_mass_bound(net, q, [])


def test_enum_trace_ends_at_enum_answer():
    net, query = random_problem(1, 6, 3)
    space = HypothesisSpace(net, query)
    xs = [h for h, _ in space.kbest()]
    target = {query.q_discrete[0]: "1"}
    trace = estimate_trace(space, xs, [1, 2, len(xs)], target)
    full = answer_enum(net, query, len(xs), space=space)
    assert trace[-1] == pytest.approx(full.prob(**target), rel=1e-9)


def test_evaluate_hypothesis_consistent_with_space(chain):
    q = Query(("A",), ("X1",), Evidence({}, {"X2": 0.5}))
    h = evaluate_hypothesis(chain, q, {"A": "a0"})
    assert h.log_prior == pytest.approx(math.log(0.3))
    assert h.conditioned.scope == ("X1",)


def test_error_paths(chain):
    ev = Evidence({}, {"X2": 0.1})
    impossible = Network((
        discrete_node("A", "01", (), [[1.0, 0.0]]),
        continuous_node("X", ("A",), (), {("0",): (0.0, (), 1.0), ("1",): (1.0, (), 1.0)}),
    ))
    with pytest.raises(ImpossibleEvidenceError):
        answer_exact(impossible, Query((), (), Evidence({"A": "1"}, {"X": 0.0})))
    with pytest.raises(InputError):
        answer_exact(chain, Query(("A",), (), Evidence({"A": "a0"}, {})))
    with pytest.raises(CapExceededError):
        answer_exact(chain, Query(("A",), (), ev), cap=0)
    with pytest.raises(InputError):
        answer_enum(chain, Query(("A",), (), ev), 0)
    with pytest.raises(InputError):
        answer_gibbs(chain, Query(("A",), (), ev), 10, 10, np.random.default_rng(0))
    with pytest.raises(InputError):
        answer_lw(chain, Query(("A",), (), ev), 0, np.random.default_rng(0))


def test_seed_determinism():
    net, query = random_problem(4, 5, 3)
    a = answer_gibbs(net, query, 2000, 100, np.random.default_rng(9))
    b = answer_gibbs(net, query, 2000, 100, np.random.default_rng(9))
    assert a.probabilities == b.probabilities
    space = HypothesisSpace(net, query)
    assert gibbs_chain(space, 300, 0, np.random.default_rng(2)) == gibbs_chain(space, 300, 0, np.random.default_rng(2))
