"""Count aggregation of a symmetric WCMDP.

A joint state is summarised by how many sub-MDPs sit in each state
(``x``, length S) and a joint action by how many sub-MDPs in each state take
each action (``u``, shape S x A). Transitions are obtained by convolving the
per-(s, a) multinomial movements instead of enumerating S^N pre-images.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb, factorial

import numpy as np
import scipy.sparse as sp

from .model import WcmdpSpec, is_symmetric


class NotSymmetric(ValueError):
    pass


class InfeasibleAction(ValueError):
    pass


def compositions(total: int, parts: int):
    """All nonnegative integer vectors of length ``parts`` summing to ``total``
    (lexicographic, first entry largest first)."""
    if parts == 1:
        yield (total,)
        return
    for head in range(total, -1, -1):
        for tail in compositions(total - head, parts - 1):
            yield (head,) + tail


def enumerate_count_states(N: int, S: int) -> list[tuple]:
    """Count vectors with sum N in colexicographic order of (x_1, ..., x_S)."""
    return sorted(compositions(N, S), key=lambda x: x[::-1])


def count_of(joint_state, S: int) -> tuple:
    x = [0] * S
    for s in joint_state:
        x[int(s)] += 1
    return tuple(x)


def _shared(spec: WcmdpSpec):
    if not is_symmetric(spec):
        raise NotSymmetric("count aggregation requires a symmetric WCMDP")
    m = spec.sub_mdps[0]
    return m, spec.consumption[:, 0, : m.num_actions]


def enumerate_feasible_actions(x, spec: WcmdpSpec) -> list[np.ndarray]:
    """All count actions u with row sums x and total consumption within budget.

    Ordered lexicographically by the flattened matrix (largest counts on the
    first action first, matching ``compositions``).
    """
    m, d = _shared(spec)
    A = m.num_actions
    rows = [list(compositions(int(xs), A)) for xs in x]
    out = []
    for choice in itertools.product(*rows):
        u = np.array(choice, dtype=np.int64).reshape(len(x), A)
        use = d @ u.sum(axis=0)
        if np.all(use <= spec.budgets + 1e-12):
            out.append(u)
    return out


def check_action(x, u, spec: WcmdpSpec) -> None:
    _, d = _shared(spec)
    u = np.asarray(u)
    if np.any(u < 0) or not np.array_equal(u.sum(axis=1), np.asarray(x)):
        raise InfeasibleAction("action counts do not match the count state")
    if np.any(d @ u.sum(axis=0) > spec.budgets + 1e-12):
        raise InfeasibleAction("count action exceeds the budget")


def _multinomial_moves(k: int, p: np.ndarray) -> dict:
    """Distribution of destination counts when k machines move independently by p."""
    S = p.size
    support = np.flatnonzero(p > 0)
    out = {}
    for y in compositions(k, support.size):
        coef = factorial(k)
        prob = 1.0
        full = [0] * S
        for s, ys in zip(support, y):
            coef //= factorial(ys)
            prob *= p[s] ** ys
            full[s] = ys
        out[tuple(full)] = coef * prob
    return out


def _convolve(a: dict, b: dict) -> dict:
    out: dict = {}
    for xa, pa in a.items():
        for xb, pb in b.items():
            key = tuple(i + j for i, j in zip(xa, xb))
            out[key] = out.get(key, 0.0) + pa * pb
    return out


def aggregate_transition(x, u, spec: WcmdpSpec) -> dict:
    """P(x' | x, u) as a dict keyed by count tuples."""
    check_action(x, u, spec)
    m, _ = _shared(spec)
    S = m.num_states
    dist = {tuple([0] * S): 1.0}
    for s in range(S):
        for a in range(m.num_actions):
            k = int(u[s][a])
            if k:
                dist = _convolve(dist, _multinomial_moves(k, m.transition[s, a]))
    return dist


def mean_reward(x, u, spec: WcmdpSpec) -> float:
    check_action(x, u, spec)
    m, _ = _shared(spec)
    return float(np.sum(np.asarray(u) * m.reward)) / spec.num_submdps


def initial_count_dist(spec: WcmdpSpec) -> dict:
    """Multinomial start distribution N!/prod(x_s!) * prod(mu_s^x_s)."""
    m, _ = _shared(spec)
    N, S = spec.num_submdps, m.num_states
    mu = m.initial_dist
    out = {}
    for x in enumerate_count_states(N, S):
        coef = factorial(N)
        prob = 1.0
        for s, xs in enumerate(x):
            coef //= factorial(xs)
            prob *= mu[s] ** xs
        out[x] = coef * prob
    return out


@dataclass(frozen=True, eq=False)
class CountModel:
    """The count aggregation MDP, with (x, u) pairs laid out state-major.

    The pairs of state j occupy rows ``offsets[j]:offsets[j+1]`` in the same
    order as ``actions[j]``. ``transition`` is sparse with one row per pair and
    one column per count state.
    """

    num_submdps: int
    states: list
    actions: list  # per state: list of (S, A) int arrays
    offsets: np.ndarray
    transition: sp.csr_matrix
    reward: np.ndarray  # mean reward per pair
    initial: np.ndarray
    discount: float
    idle_index: np.ndarray  # per state: index (within the state's list) of the all-idle action

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_pairs(self) -> int:
        return int(self.offsets[-1])

    def state_index(self, x) -> int:
        lookup = self.__dict__.get("_lookup")
        if lookup is None:
            lookup = {tuple(s): i for i, s in enumerate(self.states)}
            object.__setattr__(self, "_lookup", lookup)
        return lookup[tuple(int(v) for v in x)]


def build_count_model(spec: WcmdpSpec) -> CountModel:
    m, d = _shared(spec)
    N, S = spec.num_submdps, m.num_states
    states = enumerate_count_states(N, S)
    index = {x: i for i, x in enumerate(states)}
    idle = spec.idle_action(0)
    actions, offsets, rewards, idle_idx = [], [0], [], []
    rows, cols, vals = [], [], []
    for x in states:
        acts = enumerate_feasible_actions(x, spec)
        actions.append(acts)
        for j, u in enumerate(acts):
            if u[:, idle].sum() == N:
                idle_idx.append(j)
            row = offsets[-1] + j
            rewards.append(float(np.sum(u * m.reward)) / N)
            for xp, p in aggregate_transition(x, u, spec).items():
                rows.append(row)
                cols.append(index[xp])
                vals.append(p)
        offsets.append(offsets[-1] + len(acts))
    P = sp.csr_matrix((vals, (rows, cols)), shape=(offsets[-1], len(states)))
    mu = initial_count_dist(spec)
    return CountModel(
        num_submdps=N,
        states=states,
        actions=actions,
        offsets=np.array(offsets),
        transition=P,
        reward=np.array(rewards),
        initial=np.array([mu[x] for x in states]),
        discount=spec.discount,
        idle_index=np.array(idle_idx),
    )


def num_count_states(N: int, S: int) -> int:
    return comb(N + S - 1, S - 1)
