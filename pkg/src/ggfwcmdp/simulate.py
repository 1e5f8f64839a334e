"""Count-space simulation and Monte Carlo policy evaluation."""

from __future__ import annotations

import time
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .countmdp import InfeasibleAction
from .fairness import ggf, ggf_gradient, make_exponential_weights
from .model import JointModel, SubMdp, WcmdpSpec


class PolicyInfeasibleAction(RuntimeError):
    pass


@dataclass
class EvalConfig:
    num_trajectories: int = 1000
    horizon: int = 300
    discount: float | None = None  # None: use the instance's discount
    rng_seed: int = 0
    weights: np.ndarray | None = None  # None: exponential, factor 2

    def __post_init__(self):
        if self.num_trajectories < 1 or self.horizon < 1:
            raise ValueError("need at least one trajectory of length >= 1")


@dataclass
class EvalReport:
    mean_value_per_submdp: np.ndarray
    ggf_score: float
    stderr: float
    trajectories_used: int
    wall_seconds: float
    returns: np.ndarray = field(repr=False, default=None)  # (M, N) or (M,)

    @property
    def mean_value(self) -> float:
        return float(np.mean(self.mean_value_per_submdp))


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for trajectory ``index`` (spawned from ``seed``)."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


class CountSimulator:
    """Draws next count states for one shared sub-MDP (one draw per machine)."""

    def __init__(self, sub: SubMdp, consumption, budgets, num_machines: int):
        self.sub = sub
        self.S, self.A = sub.num_states, sub.num_actions
        self.N = num_machines
        self.cdf = np.cumsum(sub.transition, axis=2)
        self.cdf[:, :, -1] = 1.0
        self.reward = sub.reward
        self.d = np.asarray(consumption, dtype=float).reshape(-1, self.A)
        self.budgets = np.asarray(budgets, dtype=float)
        # plain-list copies: the per-step work is tiny and numpy call overhead dominates
        self._cdf_list = self.cdf.tolist()
        self._r_list = self.reward.tolist()
        self._d_list = self.d.tolist()
        self._b_list = self.budgets.tolist()

    def check(self, x, u):
        rows = np.asarray(u).tolist()
        xs = np.asarray(x).tolist()
        if len(rows) != self.S or any(len(r) != self.A for r in rows):
            raise InfeasibleAction("action has the wrong shape")
        for r, xv in zip(rows, xs):
            if min(r) < 0 or sum(r) != xv:
                raise InfeasibleAction("action counts do not match the count state")
        cols = [sum(r[a] for r in rows) for a in range(self.A)]
        for dk, bk in zip(self._d_list, self._b_list):
            if sum(c * da for c, da in zip(cols, dk)) > bk + 1e-9:
                raise InfeasibleAction("count action exceeds the budget")
        return rows

    def step(self, x, u, rng):
        """Every machine draws its next state by inverse CDF from its (s, a) row."""
        rows = self.check(x, u)
        draws = rng.random(sum(map(sum, rows))).tolist()
        x_next = [0] * self.S
        r_bar = 0.0
        j = 0
        last = self.S - 1
        for s, r in enumerate(rows):
            for a, k in enumerate(r):
                if k:
                    cdf = self._cdf_list[s][a]
                    for v in draws[j:j + k]:
                        x_next[min(bisect_right(cdf, v), last)] += 1
                    j += k
                    r_bar += k * self._r_list[s][a]
        return np.array(x_next, dtype=np.int64), r_bar / self.N


def step_count(x, u, sub: SubMdp, rng, spec: WcmdpSpec | None = None):
    """One transition of the count system: returns (x', mean reward)."""
    x = np.asarray(x, dtype=np.int64)
    if spec is None:
        sim = CountSimulator(sub, np.zeros((1, sub.num_actions)), [np.inf], int(x.sum()))
    else:
        sim = CountSimulator(sub, spec.consumption[:, 0, :], spec.budgets, spec.num_submdps)
    return sim.step(x, u, rng)


def _weights(cfg: EvalConfig, N: int):
    return make_exponential_weights(N, 2.0) if cfg.weights is None else np.asarray(cfg.weights)


def _report(returns: np.ndarray, weights, t0: float) -> EvalReport:
    M = returns.shape[0]
    mean = returns.mean(axis=0)
    score = ggf(mean, weights)
    if M > 1:
        g = ggf_gradient(mean, weights)
        per = returns @ g
        stderr = float(np.std(per, ddof=1) / np.sqrt(M))
    else:
        stderr = float("nan")
    return EvalReport(mean, score, stderr, M, time.perf_counter() - t0, returns)


def evaluate_joint_policy(policy, spec: WcmdpSpec, cfg: EvalConfig, joint: JointModel | None = None) -> EvalReport:
    """Monte Carlo per-sub-MDP discounted returns of a joint policy.

    ``policy`` is either an (nS, nA) probability table over ``joint`` (the fast
    vectorised path) or a callable ``policy(joint_state, rng) -> action tuple``.
    """
    if isinstance(policy, np.ndarray):
        if joint is None:
            raise ValueError("tabular policies need the joint model")
        return _evaluate_tabular(policy, spec, joint, cfg)
    t0 = time.perf_counter()
    gamma = spec.discount if cfg.discount is None else cfg.discount
    N = spec.num_submdps
    subs = spec.sub_mdps
    cdfs = [np.cumsum(m.transition, axis=2) for m in subs]
    mu_cdf = [np.cumsum(m.initial_dist) for m in subs]
    d, b = spec.consumption, spec.budgets
    returns = np.zeros((cfg.num_trajectories, N))
    for i in range(cfg.num_trajectories):
        rng = trajectory_rng(cfg.rng_seed, i)
        s = [min(int(np.searchsorted(mu_cdf[n], rng.random(), side="right")), subs[n].num_states - 1) for n in range(N)]
        disc = 1.0
        acc = np.zeros(N)
        for _ in range(cfg.horizon):
            a = policy(tuple(s), rng)
            use = sum(d[:, n, a[n]] for n in range(N))
            if np.any(use > b + 1e-9):
                raise PolicyInfeasibleAction(f"action {a} uses {use} > budget {b}")
            u = rng.random(N)
            for n in range(N):
                acc[n] += disc * subs[n].reward[s[n], a[n]]
                s[n] = min(int(np.searchsorted(cdfs[n][s[n], a[n]], u[n], side="right")), subs[n].num_states - 1)
            disc *= gamma
        returns[i] = acc
    return _report(returns, _weights(cfg, N), t0)


def _evaluate_tabular(policy, spec: WcmdpSpec, joint: JointModel, cfg: EvalConfig) -> EvalReport:
    t0 = time.perf_counter()
    gamma = spec.discount if cfg.discount is None else cfg.discount
    M, T, N = cfg.num_trajectories, cfg.horizon, spec.num_submdps
    subs = spec.sub_mdps
    # per-trajectory uniform blocks: column 0 picks the action, 1..N move machines
    init = np.empty((M, N))
    blocks = np.empty((M, T, N + 1))
    for i in range(M):
        rng = trajectory_rng(cfg.rng_seed, i)
        init[i] = rng.random(N)
        blocks[i] = rng.random((T, N + 1))
    dims = joint._dims
    state = np.empty((M, N), dtype=np.int64)
    for n, m in enumerate(subs):
        state[:, n] = np.minimum(np.searchsorted(np.cumsum(m.initial_dist), init[:, n], side="right"), m.num_states - 1)
    pcdf = np.cumsum(policy, axis=1)
    tcdf = [np.cumsum(m.transition, axis=2) for m in subs]
    acts = joint.actions
    nA = joint.n_actions
    returns = np.zeros((M, N))
    disc = 1.0
    for t in range(T):
        sidx = np.ravel_multi_index(tuple(state.T), dims)
        aidx = np.minimum((pcdf[sidx] <= blocks[:, t, :1]).sum(axis=1), nA - 1)
        a = acts[aidx]
        for n, m in enumerate(subs):
            returns[:, n] += disc * m.reward[state[:, n], a[:, n]]
            c = tcdf[n][state[:, n], a[:, n]]
            state[:, n] = np.minimum((c <= blocks[:, t, 1 + n][:, None]).sum(axis=1), m.num_states - 1)
        disc *= gamma
    return _report(returns, _weights(cfg, N), t0)


def evaluate_count_policy(policy, spec: WcmdpSpec, cfg: EvalConfig) -> EvalReport:
    """Monte Carlo estimate of the mean value of a count policy.

    ``policy(x, rng)`` returns an (S, A) count action. For a permutation
    invariant policy every sub-MDP has the same value, so the reported vector is
    uniform and the GGF score equals the mean value for any weights.
    """
    t0 = time.perf_counter()
    gamma = spec.discount if cfg.discount is None else cfg.discount
    N = spec.num_submdps
    sub = spec.sub_mdps[0]
    sim = CountSimulator(sub, spec.consumption[:, 0, :], spec.budgets, N)
    M = cfg.num_trajectories
    vals = np.zeros(M)
    for i in range(M):
        rng = trajectory_rng(cfg.rng_seed, i)
        x = rng.multinomial(N, sub.initial_dist)
        acc = 0.0
        disc = 1.0
        for _ in range(cfg.horizon):
            u = policy(x, rng)
            try:
                x, r = sim.step(x, u, rng)
            except InfeasibleAction as exc:
                raise PolicyInfeasibleAction(str(exc)) from exc
            acc += disc * r
            disc *= gamma
        vals[i] = acc
    mean = float(vals.mean())
    stderr = float(np.std(vals, ddof=1) / np.sqrt(M)) if M > 1 else float("nan")
    return EvalReport(np.full(N, mean), mean, stderr, M, time.perf_counter() - t0, vals)


def pooled_z(a: EvalReport, b: EvalReport) -> float:
    """(a - b) in units of the pooled standard error."""
    return (a.ggf_score - b.ggf_score) / float(np.hypot(a.stderr, b.stderr))
