import itertools

import numpy as np
import pytest

from ggfwcmdp.model import (BadPermutation, CapExceeded, ModelError, SubMdp, WcmdpSpec, apply_permutation,
                            expand_joint, inverse_permutation, is_symmetric, load_spec, save_spec, spec_from_dict,
                            spec_to_dict)
from oracles import random_submdp, random_symmetric_spec


def test_single_submdp_expands_to_itself(rng):
    sub = random_submdp(rng, 3, 2)
    spec = WcmdpSpec([sub], np.zeros((1, 1, 2)), [0.0], 0.9)
    joint = expand_joint(spec)
    assert np.allclose(joint.transition_dense(), sub.transition)
    assert np.allclose(joint.reward[:, :, 0], sub.reward)
    assert np.allclose(joint.initial, sub.initial_dist)


def test_two_machines_one_budget(rng):
    spec = random_symmetric_spec(rng, 2)
    joint = expand_joint(spec)
    assert joint.n_states == 9
    assert sorted(map(tuple, joint.actions)) == [(0, 0), (0, 1), (1, 0)]


def test_deterministic_chains_give_point_masses():
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = P[1, 0, 0] = 1.0
    sub = SubMdp(P, np.zeros((2, 1)), [0.5, 0.5])
    joint = expand_joint(WcmdpSpec([sub, sub], np.zeros((1, 2, 1)), [0.0], 0.5))
    assert set(np.unique(joint.transition_dense())) <= {0.0, 1.0}


def test_product_form_entries(rng):
    spec = random_symmetric_spec(rng, 3)
    joint = expand_joint(spec)
    Pd = joint.transition_dense()
    P = spec.sub_mdps[0].transition
    assert np.allclose(Pd.sum(axis=2), 1.0, atol=1e-10)
    for i in rng.choice(joint.n_states, 5):
        for j in range(joint.n_actions):
            for t in rng.choice(joint.n_states, 5):
                s, a, s2 = joint.states[i], joint.actions[j], joint.states[t]
                assert Pd[i, j, t] == pytest.approx(np.prod([P[s[n], a[n], s2[n]] for n in range(3)]))


def test_cap_refuses():
    spec = random_symmetric_spec(np.random.default_rng(0), 4)
    with pytest.raises(CapExceeded):
        expand_joint(spec, cap=100)


def test_marginal_recovers_submdp(rng):
    a, b = random_submdp(rng), random_submdp(rng)
    d = np.zeros((1, 2, 2))
    spec = WcmdpSpec([a, b], d, [0.0], 0.9)  # every joint action feasible
    joint = expand_joint(spec)
    Pd = joint.transition_dense()
    for i, s in enumerate(joint.states):
        for j, act in enumerate(joint.actions):
            marg = np.zeros(3)
            for t, s2 in enumerate(joint.states):
                marg[s2[1]] += Pd[i, j, t]
            assert np.allclose(marg, b.transition[s[1], act[1]])


def test_symmetry_detection(rng):
    sub = random_submdp(rng)
    d = np.zeros((1, 2, 2))
    d[0, :, 1] = 1
    assert is_symmetric(WcmdpSpec([sub, sub], d, [1], 0.9))
    r = sub.reward.copy()
    r[0, 0] += 1e-8
    other = SubMdp(sub.transition, r, sub.initial_dist)
    assert not is_symmetric(WcmdpSpec([sub, other], d, [1], 0.9))
    d2 = d.copy()
    d2[0, 1, 1] = 2
    assert not is_symmetric(WcmdpSpec([sub, sub], d2, [2], 0.9))


def test_symmetric_joint_is_permutation_invariant(rng):
    spec = random_symmetric_spec(rng, 3)
    joint = expand_joint(spec)
    Pd = joint.transition_dense()
    for sigma in itertools.permutations(range(3)):
        sigma = np.array(sigma)
        ps = [joint.state_index(joint.states[i][sigma]) for i in range(joint.n_states)]
        pa = [joint.action_index(joint.actions[j][sigma]) for j in range(joint.n_actions)]
        assert np.allclose(Pd[np.ix_(ps, pa, ps)], Pd)
        assert np.allclose(joint.reward[np.ix_(ps, pa)], joint.reward[:, :, sigma])
        assert np.allclose(joint.initial[ps], joint.initial)


def test_permutations(rng):
    v = (1, 2, 3)
    assert apply_permutation(v, [0, 1, 2]) == v
    assert apply_permutation(v, [2, 0, 1]) == (3, 1, 2)
    for _ in range(100):
        sigma = rng.permutation(5)
        x = rng.normal(size=5)
        assert np.array_equal(apply_permutation(apply_permutation(x, sigma), inverse_permutation(sigma)), x)
    with pytest.raises(BadPermutation):
        apply_permutation(v, [0, 0, 1])


def test_invalid_models_rejected():
    with pytest.raises(ModelError):
        SubMdp(np.full((2, 1, 2), 0.6), np.zeros((2, 1)), [0.5, 0.5])
    sub = SubMdp(np.full((2, 2, 2), 0.5), np.zeros((2, 2)), [0.5, 0.5])
    with pytest.raises(ModelError):
        WcmdpSpec([sub], np.ones((1, 1, 2)), [1.0], 0.9)  # no idle action
    with pytest.raises(ModelError):
        WcmdpSpec([sub], np.zeros((1, 1, 2)), [1.0], 1.0)


def test_json_round_trip(tmp_path, rng):
    spec = random_symmetric_spec(rng, 3)
    save_spec(spec, tmp_path / "a.json")
    back = load_spec(tmp_path / "a.json")
    assert np.array_equal(back.sub_mdps[2].transition, spec.sub_mdps[2].transition)
    assert np.array_equal(back.consumption, spec.consumption)
    asym = WcmdpSpec([random_submdp(rng), random_submdp(rng)], np.zeros((1, 2, 2)), [0.0], 0.9)
    back = spec_from_dict(spec_to_dict(asym))
    assert np.allclose(back.sub_mdps[1].reward, asym.sub_mdps[1].reward)


def test_json_drift_policy(rng):
    doc = spec_to_dict(random_symmetric_spec(rng, 2))
    P = np.array(doc["transition"])
    P[0, 0] *= 1 + 1e-11
    doc["transition"] = P.tolist()
    back = spec_from_dict(doc)
    assert abs(back.sub_mdps[0].transition[0, 0].sum() - 1) < 1e-15
    P[0, 0] *= 1.01
    doc["transition"] = P.tolist()
    with pytest.raises(ModelError):
        spec_from_dict(doc)
