import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clgnet.benchmarks import (SubsetSumInstance, TankParams, count_low_fault_hypotheses, fault_events,
                               gen_tanks, gen_theorem1, gen_theorem2, paper_scenario, random_instance,
                               subset_sum_exists, theorem2_evidence)
from clgnet.dbn import validate_tbn
from clgnet.errors import InputError, StructureError
from clgnet.gaussian import condition, joint_for_hypothesis
from clgnet.inference import Query, answer_exact
from clgnet.model import Evidence, is_polytree, validate


@settings(max_examples=60, deadline=None)
@given(s=st.lists(st.integers(0, 12), min_size=1, max_size=7), L=st.integers(1, 50))
def test_subset_sum_oracle_matches_itertools(s, L):
    brute = any(sum(c) == L for r in range(len(s) + 1) for c in itertools.combinations(s, r))
    assert subset_sum_exists(s, L) == brute


def test_instance_parameters():
    inst = SubsetSumInstance((3, 5, 2), 7, C=2.0)
    assert inst.sigma2 == pytest.approx(1 / (2 * 2 * 3 * 4))
    assert inst.epsilon == pytest.approx(math.sqrt(inst.sigma2))
    assert inst.sigma1_2 == pytest.approx(inst.epsilon / (3 * 10))
    assert inst.sigma2_2 == pytest.approx(inst.sigma2 * (1 + inst.sigma2 / inst.sigma1_2))
    for bad in (dict(s=(), L=1), dict(s=(1,), L=0), dict(s=(-1,), L=1), dict(s=(1,), L=1, C=1.5),
                dict(s=(1,), L=1, a_prior0=1.0)):
        with pytest.raises(InputError):
            SubsetSumInstance(**bad)


def test_generated_networks_are_valid_polytrees():
    inst = SubsetSumInstance((4, 7, 1, 9), 12)
    for net in (gen_theorem1(inst), gen_theorem2(inst)):
        assert validate(net).ok
        assert is_polytree(net)
        assert set(net.discrete_names) == {"A_1", "A_2", "A_3", "A_4", "B"}
    # one discrete ancestor per continuous node in the second construction
    from clgnet.model import ancestors
    net = gen_theorem2(inst)
    for c in net.continuous_names:
        assert len([a for a in ancestors(net, [c]) if net.is_discrete(a)]) <= 1


@pytest.mark.parametrize("k", [1, 3, 5])
def test_theorem1_chain_marginal(k):
    inst = SubsetSumInstance((4, 7, 1, 9, 3), 12)
    a = {f"A_{i}": str(i % 2) for i in range(1, 6)}
    g = joint_for_hypothesis(gen_theorem1(inst), {**a, "B": "1"})
    i = g.positions([f"X_{k}"])[0]
    assert g.cov[i, i] == pytest.approx(k * inst.sigma2, rel=1e-12)
    assert g.mean[i] == pytest.approx(sum(inst.s[j - 1] for j in range(1, k + 1) if j % 2), rel=1e-12)


def test_theorem2_posterior_against_dense_oracle():
    inst = SubsetSumInstance((3, 7, 2, 9, 4), 11)
    rng = np.random.default_rng(0)
    a = rng.integers(0, 2, inst.n)
    n, d = inst.n, 2 * inst.n + 1
    # dense joint over X_0..X_n, Z_1..Z_n built independently
    mean, cov = np.zeros(d), np.zeros((d, d))
    cov[0, 0] = inst.sigma2
    for i in range(1, n + 1):
        mean[i], cov[i, i] = inst.M, inst.sigma2_2
    for i in range(1, n + 1):
        z = n + i
        A = np.zeros(d)
        A[i], A[i - 1] = 1.0, -1.0
        mean[z] = A @ mean - a[i - 1] * inst.s[i - 1]
        cov[z, :] = A @ cov
        cov[:, z] = cov[z, :]
        cov[z, z] = A @ cov @ A + inst.sigma1_2
    net = gen_theorem2(inst)
    assign = {f"A_{i}": str(a[i - 1]) for i in range(1, n + 1)}
    g = joint_for_hypothesis(net, {**assign, "B": "1"})
    for k in range(1, n + 1):
        obs = [n + i for i in range(1, k + 1)]
        gain = cov[k, obs] @ np.linalg.inv(cov[np.ix_(obs, obs)])
        m_ref = mean[k] - gain @ mean[obs]
        v_ref = cov[k, k] - gain @ cov[obs, k]
        post, _ = condition(g, theorem2_evidence(inst, k))
        j = post.positions([f"X_{k}"])[0]
        assert post.mean[j] == pytest.approx(m_ref, rel=1e-9)
        assert post.cov[j, j] == pytest.approx(v_ref, rel=1e-7)


def test_theorem1_decision_small_instances():
    rng = np.random.default_rng(1)
    for _ in range(15):
        inst = random_instance(rng, n_max=6, s_max=10)
        net = gen_theorem1(inst)
        p = answer_exact(net, Query(("B",), (), Evidence({}, {"Y": float(inst.L)}))).prob(B="1")
        assert (p > 0.5) == subset_sum_exists(inst.s, inst.L)


def test_random_instance_validity_flag():
    rng = np.random.default_rng(2)
    for valid in (True, False):
        for _ in range(10):
            inst = random_instance(rng, valid=valid)
            assert subset_sum_exists(inst.s, inst.L) == valid


# ---- tanks ------------------------------------------------------------------


def test_tank_roster_two_tanks():
    tbn = gen_tanks(TankParams(num_tanks=2))
    assert not validate_tbn(tbn)
    names = {n.name for n in tbn.transition}
    for pipe in ("12", "2o"):
        assert {f"M_{pipe}", f"C_{pipe}", f"F_{pipe}", f"S_{pipe}", f"FM_{pipe}"} <= names
    assert {"P_1", "P_2"} <= names
    assert set(tbn.observed) == {"FM_12", "FM_2o"}
    assert set(tbn.discrete_interface) == {"M_12", "M_2o", "S_12", "S_2o"}


def test_steady_pressures_balance_flows():
    p = TankParams(num_tanks=4, conductance=2.0, inflow=6.0)
    P = p.steady_pressures()
    flows = [p.conductance * (P[i] - P[i + 1]) for i in range(3)] + [p.conductance * P[-1]]
    np.testing.assert_allclose(flows, p.inflow)


def test_healthy_tanks_hover_near_steady_state():
    from clgnet.dbn import Scenario, simulate
    p = TankParams(num_tanks=3)
    traj = simulate(gen_tanks(p), Scenario(40), np.random.default_rng(0))
    P = np.array([[v[f"P_{i}"] for i in range(1, 4)] for v in traj.values])
    assert np.max(np.abs(P - p.steady_pressures())) < 1.0


def test_tank_param_validation():
    with pytest.raises(StructureError):
        TankParams(num_tanks=1)
    with pytest.raises(InputError):
        TankParams(burst_prior=0.7)
    with pytest.raises(StructureError):
        TankParams(measured=("99",))


def test_fault_event_counting():
    assert fault_events(("ok", "ok", "drifting", "burst"), "ok") == 2
    assert fault_events(("ok",) * 4, "ok") == 0


def test_low_fault_count_against_joint_enumeration():
    tbn = gen_tanks(TankParams(num_tanks=2))
    T = 2
    comps = tbn.discrete_interface
    init = {n.name: n for n in tbn.initial}
    total = 0
    for traj in itertools.product(*[itertools.product(range(len(tbn.node(c).states)), repeat=T) for c in comps]):
        ok, events = True, 0
        for c, path in zip(comps, traj):
            cpt = np.asarray(tbn.node(c).cpt)
            if init[c].cpt[0][path[0]] == 0 or any(cpt[a, b] == 0 for a, b in zip(path, path[1:])):
                ok = False
                break
            events += fault_events(tuple(tbn.node(c).states[s] for s in path), tbn.node(c).states[0])
        total += ok and events <= 2
    assert count_low_fault_hypotheses(tbn, T) == total


def test_scenario_events():
    sc = paper_scenario(30)
    assert sorted({e.t for e in sc.events}) == [5, 10, 13, 17, 23, 25]
    sc.check(gen_tanks())
