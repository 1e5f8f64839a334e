"""End-to-end acceptance checks; each prints one PASS/FAIL line."""

import time
from math import comb

import numpy as np
import pytest

from ggfwcmdp.baselines import CountWhittlePolicy, random_table, whittle_indices
from ggfwcmdp.countmdp import (aggregate_transition, build_count_model, enumerate_count_states,
                               enumerate_feasible_actions, initial_count_dist)
from ggfwcmdp.cpdrl import CriticNet, PolicyNet, TrainConfig, count_policy, critic_loss, finite_difference_check, \
    policy_loss, rollout, train
from ggfwcmdp.fairness import make_exponential_weights, random_weights, utilitarian_weights
from ggfwcmdp.harness import linear_fit, time_per_episode
from ggfwcmdp.instances import MachineReplacementConfig, build_instance
from ggfwcmdp.lp import build_count_dual_lp, build_ggf_lp, solve_count, solve_ggf
from ggfwcmdp.model import expand_joint
from ggfwcmdp.sampler import PolicyOutput, logprob_of, sample_count_action
from ggfwcmdp.simulate import CountSimulator, EvalConfig, evaluate_count_policy, evaluate_joint_policy, pooled_z
from oracles import preimage_initial, preimage_transition, random_symmetric_spec, whittle_grid


def record(log, k, ok, detail):
    line = f"ACCEPTANCE {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    log.append(line)
    print(line)
    assert ok, line


def test_01_weight_choice_does_not_change_symmetric_optimum(acceptance_log):
    worst = 0.0
    for seed in range(10):
        r = np.random.default_rng(seed)
        joint = expand_joint(random_symmetric_spec(r, 3, budget=1.0, gamma=0.95))
        objs = [solve_ggf(joint, w).objective_value
                for w in (utilitarian_weights(3), make_exponential_weights(3), random_weights(3, r))]
        worst = max(worst, max(objs) - min(objs))
    record(acceptance_log, 1, worst < 1e-6, f"max spread over weightings {worst:.2e} (10 instances)")


def test_02_count_lp_matches_utilitarian(acceptance_log):
    gaps = []
    for N in (2, 3, 4):
        spec = random_symmetric_spec(np.random.default_rng(100 + N), N, budget=1.0)
        util = solve_ggf(expand_joint(spec), utilitarian_weights(N)).objective_value
        gaps.append(abs(solve_count(build_count_model(spec)).objective_value - util))
    record(acceptance_log, 2, max(gaps) < 1e-6, f"|count - utilitarian| = {['%.1e' % g for g in gaps]}")


def test_03_model_sizes(acceptance_log):
    got = {}
    for N in (2, 3, 4):
        lp = build_ggf_lp(expand_joint(build_instance(MachineReplacementConfig.preset("exponential-rccc", N))),
                          make_exponential_weights(N))
        got[N] = (lp.num_constraints, lp.num_variables)
    flows = [build_count_dual_lp(build_count_model(build_instance(
        MachineReplacementConfig.preset("exponential-rccc", N)))).num_constraints for N in (2, 3, 4, 5)]
    ok = got == {2: (13, 31), 3: (36, 114), 4: (97, 413)}
    ok &= flows == [comb(N + 2, 2) for N in (2, 3, 4, 5)] == [6, 10, 15, 21]
    record(acceptance_log, 3, ok, f"ggf-lp {got}, count-lp rows {flows}")


def test_04_aggregation_oracle(acceptance_log):
    spec = random_symmetric_spec(np.random.default_rng(4), 3, budget=3.0)
    worst = 0.0
    pairs = 0
    for x in enumerate_count_states(3, 3):
        for u in enumerate_feasible_actions(x, spec):
            fast = aggregate_transition(x, u, spec)
            ref = preimage_transition(x, u, spec)
            for key in set(fast) | set(ref):
                worst = max(worst, abs(fast.get(key, 0.0) - ref.get(key, 0.0)))
            pairs += 1
    mu = initial_count_dist(spec)
    ref = preimage_initial(spec)
    mu_err = max(abs(mu.get(k, 0.0) - ref.get(k, 0.0)) for k in set(mu) | set(ref))
    record(acceptance_log, 4, worst < 1e-10 and mu_err < 1e-12,
           f"{pairs} pairs, transition err {worst:.1e}, initial err {mu_err:.1e}")


def test_05_monte_carlo_matches_lp(acceptance_log):
    spec = build_instance(MachineReplacementConfig.preset("exponential-rccc", 2, rng_seed=0))
    joint = expand_joint(spec)
    sol = solve_ggf(joint, make_exponential_weights(2))
    cfg = EvalConfig(1000, 300, rng_seed=0)
    rep = evaluate_joint_policy(sol.policy, spec, cfg, joint)
    rel = abs(rep.ggf_score - sol.objective_value) / abs(sol.objective_value)
    rmax = max(np.abs(m.reward).max() for m in spec.sub_mdps)
    trunc = spec.discount ** cfg.horizon * rmax / (1 - spec.discount)
    record(acceptance_log, 5, rel < 0.02 and trunc < 1e-5,
           f"LP {sol.objective_value:.4f} vs MC {rep.ggf_score:.4f} ({100 * rel:.2f}%), truncation {trunc:.1e}")


def test_06_sampler_fuzz(acceptance_log):
    r = np.random.default_rng(6)
    calls = 10**6
    batch = 10_000
    bad = 0
    t0 = time.perf_counter()
    for _ in range(calls // batch):
        S = int(r.integers(1, 5))
        A = int(r.integers(2, 4))
        K = int(r.integers(1, 3))
        d = r.integers(0, 3, size=(K, A)).astype(float)
        d[:, 0] = 0.0
        N = int(r.integers(0, 12))
        xs = r.multinomial(N, np.full(S, 1 / S), size=batch)
        Us = r.uniform(1e-6, 1, (batch, S, A))
        ps = r.uniform(0, 1, (batch, K))
        bs = r.uniform(0, 2 * N + 1, (batch, K))
        for x, U, p, b in zip(xs, Us, ps, bs):
            out = PolicyOutput(U, p)
            tr = sample_count_action(x, out, b, d, r)
            ok = (tr.action.sum(axis=1) == x).all() and (tr.action >= 0).all()
            ok = ok and bool(np.all(d @ tr.action.sum(axis=0) <= b * p + 1e-9))
            ok = ok and tr.iterations <= N + S * A
            ok = ok and logprob_of(x, out, b, d, tr) == tr.logprob
            bad += not ok
    record(acceptance_log, 6, bad == 0,
           f"{calls} calls, {bad} violations, {time.perf_counter() - t0:.0f}s")


def test_07_whittle_oracle_and_budget(acceptance_log):
    worst = 0.0
    for seed in range(10):
        cfg = MachineReplacementConfig(2, operate_cost_kind="random", rng_seed=seed, stay_prob=0.55 + 0.04 * seed)
        sub = build_instance(cfg).sub_mdps[0]
        table = whittle_indices(sub, 0.95)
        grid = whittle_grid(sub, 0.95, -15.0, 15.0)
        worst = max(worst, float(np.max(np.abs(table.index - grid))))
    spec = build_instance(MachineReplacementConfig.preset("exponential-rccc", 10, budget=3.0))
    pol = CountWhittlePolicy(spec)
    sim = CountSimulator(spec.sub_mdps[0], spec.consumption[:, 0, :], spec.budgets, 10)
    r = np.random.default_rng(7)
    x = r.multinomial(10, spec.sub_mdps[0].initial_dist)
    over = 0
    for _ in range(10**5):
        u = pol(x, r)
        over += int(u[:, 1].sum() > spec.budgets[0])
        x, _ = sim.step(x, u, r)
    record(acceptance_log, 7, worst < 2e-4 and over == 0,
           f"max |bisection - grid| {worst:.1e} on 10 instances, {over} budget violations in 1e5 steps")


@pytest.mark.slow
def test_08_learning(acceptance_log):
    spec = build_instance(MachineReplacementConfig.preset("exponential-rccc", 3, rng_seed=0))
    joint = expand_joint(spec)
    opt = solve_ggf(joint, make_exponential_weights(3)).objective_value
    cfg = EvalConfig(1000, 300, rng_seed=12345)
    rdm = evaluate_joint_policy(random_table(spec, joint), spec, cfg, joint)
    fracs, zs, secs = [], [], []
    for seed in range(5):
        t0 = time.perf_counter()
        res = train(spec, TrainConfig(episodes=800, rng_seed=seed, eval_every=0))
        rep = evaluate_count_policy(count_policy(res.actor, spec), spec, cfg)
        secs.append(time.perf_counter() - t0)
        fracs.append((rep.ggf_score - rdm.ggf_score) / (opt - rdm.ggf_score))
        zs.append(pooled_z(rep, rdm))
        print(f"seed {seed}: CP-DRL {rep.ggf_score:.4f} +- {rep.stderr:.4f}, gap {fracs[-1]:.3f}, z {zs[-1]:.1f}")
    ok = min(zs) >= 5 and sum(f >= 0.9 for f in fracs) >= 3 and max(secs) < 1800
    record(acceptance_log, 8, ok, f"OPT {opt:.3f} RDM {rdm.ggf_score:.3f}; gap fractions "
           f"{[round(f, 3) for f in fracs]}; min z {min(zs):.1f}; max {max(secs):.0f}s per seed")


def test_09_gradient_integrity(acceptance_log):
    worst = 0.0
    spec = build_instance(MachineReplacementConfig.preset("exponential-rccc", 4, budget=2.0))
    for seed in range(5):
        r = np.random.default_rng(900 + seed)
        actor, critic = PolicyNet(3, 2, 1, rng=r), CriticNet(3, 1, rng=r)
        for p in actor.mlp.params + critic.mlp.params:
            p += 0.3 * r.normal(size=p.shape)
        steps, _, _ = rollout(actor, critic, spec, 30, r, 0.1)
        lp_old = np.array([s.logprob for s in steps]) + r.normal(scale=0.05, size=len(steps))
        adv = r.normal(size=len(steps))
        _, g, _ = policy_loss(actor, steps, adv, lp_old, 0.2, 0.1)
        worst = max(worst, finite_difference_check(
            actor.mlp, lambda: policy_loss(actor, steps, adv, lp_old, 0.2, 0.1)[0],
            np.concatenate([a.ravel() for a in g]), r.choice(actor.mlp.num_params, 10, replace=False)))
        feats = np.stack([s.feat for s in steps])
        ret = r.normal(size=len(steps)) + 5
        _, g = critic_loss(critic, feats, ret)
        worst = max(worst, finite_difference_check(
            critic.mlp, lambda: critic_loss(critic, feats, ret)[0],
            np.concatenate([a.ravel() for a in g]), r.choice(critic.mlp.num_params, 10, replace=False)))
    record(acceptance_log, 9, worst < 1e-4, f"max relative error {worst:.1e} over 10 probes x 10 parameters")


@pytest.mark.slow
def test_10_time_grows_linearly(acceptance_log):
    Ns = [10, 20, 40, 80]
    t = time_per_episode({"preset": "exponential-rccc"}, Ns, episodes=10, repeats=3, ratio=0.1)
    slope, _, r2 = linear_fit(Ns, t)
    record(acceptance_log, 10, r2 >= 0.95 and slope > 0,
           f"seconds/episode {[round(v, 3) for v in t]}, slope {slope:.2e}, R^2 {r2:.4f}")
