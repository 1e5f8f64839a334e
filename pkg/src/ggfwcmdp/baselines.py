"""Random and Whittle-index baseline policies."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .model import SubMdp, WcmdpSpec


class NotBinaryAction(ValueError):
    pass


class NotIndexable(UserWarning):
    pass


@dataclass(frozen=True)
class WhittleTable:
    index: np.ndarray
    indexable: bool
    subsidy_tolerance: float


def subsidized_q(sub: SubMdp, gamma: float, subsidy: float, tol: float, V0=None):
    """Q-values of the single-arm MDP where the passive action earns ``subsidy`` extra.

    Value iteration stops once the sup-norm residual is below
    ``tol * (1 - gamma) / (2 * gamma)``.
    """
    r = sub.reward.copy()
    r[:, 0] += subsidy
    P = sub.transition
    V = np.zeros(sub.num_states) if V0 is None else V0.copy()
    stop = tol * (1 - gamma) / (2 * gamma) if gamma > 0 else np.inf
    while True:
        Q = r + gamma * P @ V
        V_new = Q.max(axis=1)
        if np.max(np.abs(V_new - V)) < stop:
            return r + gamma * P @ V_new, V_new
        V = V_new


def _bracket(sub: SubMdp, gamma: float) -> float:
    r_max = float(np.max(np.abs(sub.reward)))
    return (1.0 + r_max) / (1.0 - gamma)


def whittle_indices(sub: SubMdp, gamma: float, tol: float = 1e-6, grid_points: int = 201) -> WhittleTable:
    """Per-state Whittle index by bisection on the passive subsidy.

    The index of state s is the subsidy at which both actions are optimal
    in s. Indexability is checked on a grid of ``grid_points`` subsidies by
    requiring the passive set to grow monotonically.
    """
    if sub.num_actions != 2:
        raise NotBinaryAction(f"Whittle indices need 2 actions, got {sub.num_actions}")
    S = sub.num_states
    hi0 = _bracket(sub, gamma)
    index = np.empty(S)
    for s in range(S):
        lo, hi = -hi0, hi0
        V = None
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            Q, V = subsidized_q(sub, gamma, mid, tol, V)
            if Q[s, 1] > Q[s, 0]:
                lo = mid  # active still preferred: need a larger subsidy
            else:
                hi = mid
        index[s] = 0.5 * (lo + hi)

    indexable = True
    prev = np.zeros(S, dtype=bool)
    for lam in np.linspace(-hi0, hi0, grid_points):
        Q, _ = subsidized_q(sub, gamma, lam, tol)
        passive = Q[:, 0] >= Q[:, 1]
        if np.any(prev & ~passive):
            indexable = False
            break
        prev = passive
    if not indexable:
        warnings.warn("arm is not indexable; indices are still usable for ranking", NotIndexable)
    return WhittleTable(index, indexable, tol)


def wip_act(joint_state, table: WhittleTable, budget: float) -> tuple:
    """Activate the floor(budget) machines with the largest positive index.

    Ties go to the lower machine number; machines with index <= 0 stay passive.
    """
    idx = table.index[np.asarray(joint_state, dtype=np.int64)]
    k = int(np.floor(budget + 1e-9))
    order = np.lexsort((np.arange(idx.size), -idx))  # by index desc, then machine asc
    action = [0] * idx.size
    for n in order[:k]:
        if idx[n] > 0:
            action[n] = 1
    return tuple(action)


class RandomPolicy:
    """Uniform draws from the feasible joint action set.

    Machines are assigned one at a time; each action is weighted by the number
    of feasible completions it leaves, so the joint draw is exactly uniform
    without enumerating the feasible set.
    """

    def __init__(self, spec: WcmdpSpec):
        self.spec = spec
        self.N = spec.num_submdps
        self.d = spec.consumption
        self.n_actions = [m.num_actions for m in spec.sub_mdps]
        self._count = lru_cache(maxsize=None)(self._completions)

    def _completions(self, n: int, remaining: tuple) -> int:
        if n == self.N:
            return 1
        total = 0
        rem = np.array(remaining)
        for a in range(self.n_actions[n]):
            use = self.d[:, n, a]
            if np.all(use <= rem + 1e-12):
                total += self._count(n + 1, tuple(np.round(rem - use, 12)))
        return total

    def num_feasible(self) -> int:
        return self._count(0, tuple(np.round(self.spec.budgets, 12)))

    def __call__(self, joint_state, rng) -> tuple:
        rem = np.round(self.spec.budgets.astype(float), 12)
        action = []
        for n in range(self.N):
            opts, weights = [], []
            for a in range(self.n_actions[n]):
                use = self.d[:, n, a]
                if np.all(use <= rem + 1e-12):
                    opts.append(a)
                    weights.append(self._count(n + 1, tuple(np.round(rem - use, 12))))
            w = np.array(weights, dtype=float)
            a = opts[int(np.searchsorted(np.cumsum(w), rng.random() * w.sum(), side="right"))]
            action.append(a)
            rem = np.round(rem - self.d[:, n, a], 12)
        return tuple(action)


def random_act(joint_state, spec: WcmdpSpec, rng) -> tuple:
    return RandomPolicy(spec)(joint_state, rng)


class WhittlePolicy:
    """Joint-state callable wrapping ``wip_act`` for one shared arm model."""

    def __init__(self, spec: WcmdpSpec, tol: float = 1e-6):
        self.table = whittle_indices(spec.sub_mdps[0], spec.discount, tol)
        self.budget = float(spec.budgets[0])

    def __call__(self, joint_state, rng=None) -> tuple:
        return wip_act(joint_state, self.table, self.budget)


def random_table(spec: WcmdpSpec, joint) -> np.ndarray:
    """Random policy as an (nS, nA) table: uniform over the feasible joint actions."""
    acts = joint.actions
    N = spec.num_submdps
    total = np.zeros((spec.num_resources, len(acts)))
    for n in range(N):
        total += spec.consumption[:, n, acts[:, n]]
    ok = np.all(total <= spec.budgets[:, None] + 1e-9, axis=0).astype(float)
    return np.tile(ok / ok.sum(), (joint.n_states, 1))


def tabulate(policy, joint) -> np.ndarray:
    """One-hot (nS, nA) table of a deterministic joint-state policy."""
    table = np.zeros((joint.n_states, joint.n_actions))
    for i, s in enumerate(joint.states):
        table[i, joint.action_index(policy(tuple(s)))] = 1.0
    return table


def wip_count_act(x, table: WhittleTable, budget: float) -> np.ndarray:
    """Count version of ``wip_act``: fill floor(budget) activations from the
    highest positive-index states down (ties to the lower state)."""
    x = np.asarray(x, dtype=np.int64)
    S = x.size
    u = np.zeros((S, 2), dtype=np.int64)
    u[:, 0] = x
    left = int(np.floor(budget + 1e-9))
    for s in np.lexsort((np.arange(S), -table.index)):
        if left == 0 or table.index[s] <= 0:
            break
        k = min(left, int(x[s]))
        u[s] = (x[s] - k, k)
        left -= k
    return u


class CountRandomPolicy:
    """Count action obtained by aggregating a uniform feasible joint action."""

    def __init__(self, spec: WcmdpSpec):
        self.joint = RandomPolicy(spec)
        self.A = spec.sub_mdps[0].num_actions

    def __call__(self, x, rng) -> np.ndarray:
        x = np.asarray(x, dtype=np.int64)
        states = np.repeat(np.arange(x.size), x)
        a = np.array(self.joint(tuple(states), rng))
        u = np.zeros((x.size, self.A), dtype=np.int64)
        np.add.at(u, (states, a), 1)
        return u


class CountWhittlePolicy:
    def __init__(self, spec: WcmdpSpec, tol: float = 1e-6, table: WhittleTable | None = None):
        self.table = table or whittle_indices(spec.sub_mdps[0], spec.discount, tol)
        self.budget = float(spec.budgets[0])

    def __call__(self, x, rng=None) -> np.ndarray:
        return wip_count_act(x, self.table, self.budget)
