import numpy as np
import pytest
from scipy import stats

from ggfwcmdp.baselines import CountWhittlePolicy, WhittlePolicy, random_table, tabulate
from ggfwcmdp.countmdp import InfeasibleAction, aggregate_transition, enumerate_count_states, mean_reward
from ggfwcmdp.instances import MachineReplacementConfig, build_instance
from ggfwcmdp.fairness import make_exponential_weights, utilitarian_weights
from ggfwcmdp.lp import solve_ggf
from ggfwcmdp.model import SubMdp, WcmdpSpec, expand_joint
from ggfwcmdp.simulate import (CountSimulator, EvalConfig, PolicyInfeasibleAction, evaluate_count_policy,
                               evaluate_joint_policy, step_count)
from oracles import random_symmetric_spec, value_iteration


def idle_count(x, rng=None):
    x = np.asarray(x)
    return np.stack([x, np.zeros_like(x)], axis=1)


def test_deterministic_pushforward():
    P = np.zeros((3, 2, 3))
    P[:, 0, :] = np.roll(np.eye(3), 1, axis=1)
    P[:, 1, 0] = 1.0
    sub = SubMdp(P, np.ones((3, 2)), np.full(3, 1 / 3))
    x2, r = step_count([2, 1, 1], np.array([[2, 0], [0, 1], [1, 0]]), sub, np.random.default_rng(0))
    assert x2.tolist() == [2, 2, 0] and r == pytest.approx(1.0)


def test_reward_is_mean_reward(rng):
    spec = random_symmetric_spec(rng, 3, budget=2)
    u = np.array([[1, 1], [0, 1], [0, 0]])
    _, r = step_count([2, 1, 0], u, spec.sub_mdps[0], rng, spec)
    assert r == pytest.approx(mean_reward((2, 1, 0), u, spec), abs=1e-15)


def test_empirical_transition_matches_aggregation():
    rng = np.random.default_rng(11)
    spec = random_symmetric_spec(rng, 3, S=2)
    sim = CountSimulator(spec.sub_mdps[0], spec.consumption[:, 0, :], spec.budgets, 3)
    x, u = np.array([2, 1]), np.array([[1, 1], [1, 0]])
    exact = aggregate_transition(x, u, spec)
    n = 100_000
    seen = {}
    for _ in range(n):
        key = tuple(sim.step(x, u, rng)[0].tolist())
        seen[key] = seen.get(key, 0) + 1
    keys = sorted(exact)
    obs = [seen.get(k, 0) for k in keys]
    assert sum(obs) == n
    for k in keys:
        p = exact[k]
        assert abs(seen.get(k, 0) / n - p) <= 3 * np.sqrt(p * (1 - p) / n) + 1e-12
    assert stats.chisquare(obs, [n * exact[k] for k in keys]).pvalue > 1e-4


def test_step_rejects_infeasible(rng):
    spec = random_symmetric_spec(rng, 3)
    with pytest.raises(InfeasibleAction):
        step_count([2, 1, 0], np.array([[0, 2], [1, 0], [0, 0]]), spec.sub_mdps[0], rng, spec)


def constant_spec(r=0.7, N=2):
    sub = SubMdp(np.ones((1, 2, 1)), [[r, r]], [1.0])
    d = np.zeros((1, N, 2))
    d[0, :, 1] = 1
    return WcmdpSpec([sub] * N, d, [1.0], 0.95)


def test_geometric_series():
    spec = constant_spec()
    joint = expand_joint(spec)
    rep = evaluate_joint_policy(random_table(spec, joint), spec, EvalConfig(5, 300), joint)
    exact = 0.7 * (1 - 0.95 ** 300) / 0.05
    assert rep.mean_value_per_submdp == pytest.approx([exact, exact], rel=1e-12)
    assert abs(exact - 0.7 / 0.05) / (0.7 / 0.05) < 2e-5


def test_one_step_problem(rng):
    spec = random_symmetric_spec(rng, 2, gamma=0.0)
    joint = expand_joint(spec)
    pi = rng.dirichlet(np.ones(joint.n_actions), size=joint.n_states)
    rep = evaluate_joint_policy(pi, spec, EvalConfig(4000, 3, discount=0.0), joint)
    exact = [joint.initial @ (pi * joint.reward[:, :, n]).sum(axis=1) for n in range(2)]
    se = rep.returns.std(axis=0, ddof=1) / np.sqrt(4000)
    assert np.all(np.abs(rep.mean_value_per_submdp - exact) <= 3 * se)


def test_callable_and_table_paths_agree_in_distribution(rng):
    spec = random_symmetric_spec(rng, 2)
    joint = expand_joint(spec)
    wip = WhittlePolicy(spec)
    a = evaluate_joint_policy(tabulate(wip, joint), spec, EvalConfig(400, 100), joint)
    b = evaluate_joint_policy(wip, spec, EvalConfig(400, 100, rng_seed=5))
    assert abs(a.ggf_score - b.ggf_score) < 4 * np.hypot(a.stderr, b.stderr)


def test_lp_policy_close_to_lp_objective(machine3):
    spec = machine3
    joint = expand_joint(spec)
    sol = solve_ggf(joint, make_exponential_weights(3))
    rep = evaluate_joint_policy(sol.policy, spec, EvalConfig(1000, 300), joint)
    assert abs(rep.ggf_score - sol.objective_value) / sol.objective_value < 0.02


def test_infeasible_policy_detected(rng):
    spec = random_symmetric_spec(rng, 2)
    with pytest.raises(PolicyInfeasibleAction):
        evaluate_joint_policy(lambda s, r: (1, 1), spec, EvalConfig(1, 5))
    with pytest.raises(PolicyInfeasibleAction):
        evaluate_count_policy(lambda x, r: np.stack([np.zeros(3, int), x], axis=1), spec, EvalConfig(1, 5))


def test_zero_budget_count_value(rng):
    spec = random_symmetric_spec(rng, 3, budget=0.0)
    sub = spec.sub_mdps[0]
    V = value_iteration(sub.transition[:, :1], sub.reward[:, :1], spec.discount)
    rep = evaluate_count_policy(idle_count, spec, EvalConfig(1000, 300))
    assert abs(rep.ggf_score - sub.initial_dist @ V) <= 3 * rep.stderr


def test_count_score_independent_of_weights(rng):
    spec = random_symmetric_spec(rng, 3, budget=0.0)
    a = evaluate_count_policy(idle_count, spec, EvalConfig(50, 50, weights=utilitarian_weights(3)))
    b = evaluate_count_policy(idle_count, spec, EvalConfig(50, 50, weights=make_exponential_weights(3)))
    assert a.ggf_score == b.ggf_score


def test_count_wip_matches_joint_wip():
    spec = build_instance(MachineReplacementConfig.preset("exponential-rccc", 2))
    joint = expand_joint(spec)
    j = evaluate_joint_policy(tabulate(WhittlePolicy(spec), joint), spec, EvalConfig(1000, 300), joint)
    c = evaluate_count_policy(CountWhittlePolicy(spec), spec, EvalConfig(1000, 300, rng_seed=1))
    assert abs(j.mean_value - c.ggf_score) <= 3 * np.hypot(j.returns.mean(axis=1).std(ddof=1) / np.sqrt(1000), c.stderr)


def test_reproducible_and_bounded(machine3):
    joint = expand_joint(machine3)
    table = random_table(machine3, joint)
    a = evaluate_joint_policy(table, machine3, EvalConfig(200, 300, rng_seed=4), joint)
    b = evaluate_joint_policy(table, machine3, EvalConfig(200, 300, rng_seed=4), joint)
    assert np.array_equal(a.returns, b.returns) and a.ggf_score == b.ggf_score
    assert a.ggf_score <= a.mean_value + 1e-9


def test_stderr_shrinks(machine3):
    joint = expand_joint(machine3)
    table = random_table(machine3, joint)
    se = [evaluate_joint_policy(table, machine3, EvalConfig(M, 300), joint).stderr for M in (100, 400, 1600)]
    assert 1.4 < se[0] / se[1] < 2.8 and 1.4 < se[1] / se[2] < 2.8


def test_count_conservation(rng):
    spec = random_symmetric_spec(rng, 5, budget=2)
    sim = CountSimulator(spec.sub_mdps[0], spec.consumption[:, 0, :], spec.budgets, 5)
    x = np.array([5, 0, 0])
    for _ in range(500):
        k = min(2, x[2])
        u = np.stack([x, np.zeros(3, int)], axis=1)
        u[2] = (x[2] - k, k)
        x, _ = sim.step(x, u, rng)
        assert x.sum() == 5 and tuple(x) in set(enumerate_count_states(5, 3))
