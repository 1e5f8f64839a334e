"""Sub-MDPs, weakly coupled MDPs and the joint (product-space) model."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

PROB_TOL = 1e-12
RENORM_TOL = 1e-9
DEFAULT_TABLE_CAP = 10**7


class ModelError(ValueError):
    pass


class CapExceeded(ModelError):
    pass


class InfeasibleModel(ModelError):
    pass


class BadPermutation(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SubMdp:
    """One component MDP.

    ``transition[s, a, s']`` is P(s' | s, a), ``reward[s, a]`` the immediate
    reward and ``initial_dist[s]`` the starting distribution.
    """

    transition: np.ndarray
    reward: np.ndarray
    initial_dist: np.ndarray

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        r = np.array(self.reward, dtype=float)
        mu = np.array(self.initial_dist, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ModelError(f"transition must be (S, A, S), got {P.shape}")
        S, A, _ = P.shape
        if r.shape != (S, A):
            raise ModelError(f"reward must be ({S}, {A}), got {r.shape}")
        if mu.shape != (S,):
            raise ModelError(f"initial_dist must have length {S}")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=2) - 1.0) > PROB_TOL):
            raise ModelError("transition rows must be probability vectors")
        if np.any(mu < 0) or abs(mu.sum() - 1.0) > PROB_TOL:
            raise ModelError("initial_dist must be a probability vector")
        if not np.all(np.isfinite(r)):
            raise ModelError("rewards must be finite")
        for name, arr in (("transition", P), ("reward", r), ("initial_dist", mu)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]


@dataclass(frozen=True, eq=False)
class WcmdpSpec:
    """N sub-MDPs coupled by K per-step resource constraints.

    ``consumption[k, n, a]`` is the amount of resource k used when sub-MDP n
    takes action a; the joint action must satisfy
    ``sum_n consumption[k, n, a_n] <= budgets[k]`` for every k.
    """

    sub_mdps: tuple
    consumption: np.ndarray
    budgets: np.ndarray
    discount: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        subs = tuple(self.sub_mdps)
        if not subs:
            raise ModelError("need at least one sub-MDP")
        d = np.array(self.consumption, dtype=float)
        b = np.atleast_1d(np.array(self.budgets, dtype=float))
        N = len(subs)
        A = max(m.num_actions for m in subs)
        if d.ndim != 3 or d.shape[1] != N or d.shape[2] < A:
            raise ModelError(f"consumption must be (K, {N}, A), got {d.shape}")
        if d.shape[0] != b.shape[0]:
            raise ModelError("consumption and budgets disagree on K")
        if np.any(d < 0) or np.any(b < 0):
            raise ModelError("consumption and budgets must be nonnegative")
        if not 0.0 <= self.discount < 1.0:
            raise ModelError("discount must lie in [0, 1)")
        for n, m in enumerate(subs):
            if not np.any(np.all(d[:, n, : m.num_actions] == 0, axis=0)):
                raise ModelError(f"sub-MDP {n} has no idle action")
        d.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "sub_mdps", subs)
        object.__setattr__(self, "consumption", d)
        object.__setattr__(self, "budgets", b)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def num_submdps(self) -> int:
        return len(self.sub_mdps)

    @property
    def num_resources(self) -> int:
        return self.budgets.shape[0]

    def idle_action(self, n: int) -> int:
        m = self.sub_mdps[n]
        zero = np.all(self.consumption[:, n, : m.num_actions] == 0, axis=0)
        return int(np.flatnonzero(zero)[0])

    def feasible_joint_actions(self) -> list[tuple]:
        """All action tuples satisfying every budget, in lexicographic order."""
        ranges = [range(m.num_actions) for m in self.sub_mdps]
        out = []
        for a in itertools.product(*ranges):
            use = sum(self.consumption[:, n, an] for n, an in enumerate(a))
            if np.all(use <= self.budgets + 1e-12):
                out.append(a)
        return out

    def with_budget(self, budgets) -> "WcmdpSpec":
        return WcmdpSpec(self.sub_mdps, self.consumption, budgets, self.discount, dict(self.metadata))


@dataclass(frozen=True, eq=False)
class JointModel:
    """Product-space MDP over all N sub-MDPs.

    States are enumerated lexicographically in (s_1, ..., s_N); the feasible
    joint actions do not depend on the state, so ``actions`` is shared by all
    rows. ``transition`` is a sparse matrix with row ``s * n_actions + a``.
    """

    states: np.ndarray  # (nS, N)
    actions: np.ndarray  # (nA, N)
    transition: sp.csr_matrix  # (nS * nA, nS)
    reward: np.ndarray  # (nS, nA, N)
    initial: np.ndarray  # (nS,)
    discount: float
    idle_index: int

    @property
    def n_states(self) -> int:
        return self.states.shape[0]

    @property
    def n_actions(self) -> int:
        return self.actions.shape[0]

    @property
    def num_submdps(self) -> int:
        return self.states.shape[1]

    def feasible_actions(self, state_index: int) -> np.ndarray:
        return self.actions

    def state_index(self, s) -> int:
        return int(np.ravel_multi_index(tuple(s), self._dims))

    def action_index(self, a) -> int:
        return self._action_lookup[tuple(int(v) for v in a)]

    @property
    def _dims(self):
        return tuple(int(v) + 1 for v in self.states[-1])

    @property
    def _action_lookup(self):
        lookup = self.__dict__.get("_lookup")
        if lookup is None:
            lookup = {tuple(int(v) for v in a): i for i, a in enumerate(self.actions)}
            object.__setattr__(self, "_lookup", lookup)
        return lookup

    def transition_dense(self) -> np.ndarray:
        return self.transition.toarray().reshape(self.n_states, self.n_actions, self.n_states)


def expand_joint(spec: WcmdpSpec, cap: int = DEFAULT_TABLE_CAP) -> JointModel:
    """Expand a WCMDP into its product-space model.

    Refuses (``CapExceeded``) when ``|S^N| * |feasible actions|`` is above ``cap``.
    """
    subs = spec.sub_mdps
    N = len(subs)
    dims = [m.num_states for m in subs]
    n_states = int(np.prod(dims))
    actions = spec.feasible_joint_actions()
    if not actions:
        raise InfeasibleModel("no feasible joint action; spec is corrupted")
    if n_states * len(actions) > cap:
        raise CapExceeded(f"{n_states} states x {len(actions)} actions exceeds cap {cap}")

    states = np.array(list(itertools.product(*[range(S) for S in dims])), dtype=np.int64).reshape(n_states, N)
    acts = np.array(actions, dtype=np.int64).reshape(len(actions), N)
    nA = len(actions)

    blocks = []
    for a in actions:
        P = sp.csr_matrix(subs[0].transition[:, a[0], :])
        for n in range(1, N):
            P = sp.kron(P, sp.csr_matrix(subs[n].transition[:, a[n], :]), format="csr")
        blocks.append(P)
    # stacked rows are (a, s); reorder to (s, a)
    stacked = sp.vstack(blocks, format="csr")
    order = (np.arange(nA)[None, :] * n_states + np.arange(n_states)[:, None]).ravel()
    transition = stacked[order]
    transition.eliminate_zeros()

    reward = np.empty((n_states, nA, N))
    for n, m in enumerate(subs):
        reward[:, :, n] = m.reward[states[:, n][:, None], acts[:, n][None, :]]

    initial = np.ones(n_states)
    for n, m in enumerate(subs):
        initial *= m.initial_dist[states[:, n]]

    idle = tuple(spec.idle_action(n) for n in range(N))
    idle_index = actions.index(idle)
    return JointModel(states, acts, transition, reward, initial, spec.discount, idle_index)


def is_symmetric(spec: WcmdpSpec, tol: float = 1e-9) -> bool:
    """True when all sub-MDPs coincide and consumption does not depend on n.

    With a product-form initial distribution, permutation invariance holds
    exactly when every per-sub-MDP initial distribution is the same.
    """
    ref = spec.sub_mdps[0]
    for m in spec.sub_mdps[1:]:
        if m.transition.shape != ref.transition.shape:
            return False
        if (
            np.max(np.abs(m.transition - ref.transition)) > tol
            or np.max(np.abs(m.reward - ref.reward)) > tol
            or np.max(np.abs(m.initial_dist - ref.initial_dist)) > tol
        ):
            return False
    d = spec.consumption
    return bool(np.max(np.abs(d - d[:, :1, :])) <= tol)


def check_permutation(sigma) -> np.ndarray:
    sigma = np.asarray(sigma)
    if sigma.ndim != 1 or not np.issubdtype(sigma.dtype, np.integer):
        raise BadPermutation("permutation must be a 1-d integer sequence")
    if not np.array_equal(np.sort(sigma), np.arange(sigma.size)):
        raise BadPermutation(f"{sigma.tolist()} is not a bijection on [0, {sigma.size})")
    return sigma


def apply_permutation(v, sigma):
    """Return ``out`` with ``out[n] = v[sigma[n]]`` (0-based ``sigma``)."""
    sigma = check_permutation(sigma)
    if len(v) != sigma.size:
        raise BadPermutation("permutation length does not match input")
    if isinstance(v, np.ndarray):
        return v[sigma]
    out = [v[i] for i in sigma]
    return type(v)(out) if isinstance(v, tuple) else out


def inverse_permutation(sigma) -> np.ndarray:
    sigma = check_permutation(sigma)
    inv = np.empty_like(sigma)
    inv[sigma] = np.arange(sigma.size)
    return inv


# --- instance files -------------------------------------------------------


def spec_to_dict(spec: WcmdpSpec) -> dict:
    sym = is_symmetric(spec)
    if sym:
        m = spec.sub_mdps[0]
        body = {
            "transition": m.transition.tolist(),
            "reward": m.reward.tolist(),
            "consumption": spec.consumption[:, 0, :].tolist(),
            "initial": m.initial_dist.tolist(),
        }
    else:
        # asymmetric specs carry one table per sub-MDP (extra leading axis)
        body = {
            "transition": [m.transition.tolist() for m in spec.sub_mdps],
            "reward": [m.reward.tolist() for m in spec.sub_mdps],
            "consumption": spec.consumption.tolist(),
            "initial": [m.initial_dist.tolist() for m in spec.sub_mdps],
        }
    m0 = spec.sub_mdps[0]
    doc = {
        "num_submdps": spec.num_submdps,
        "states": m0.num_states,
        "actions": m0.num_actions,
        **body,
        "budgets": spec.budgets.tolist(),
        "discount": spec.discount,
        "symmetric": sym,
    }
    if spec.metadata:
        doc["metadata"] = spec.metadata
    return doc


def _renormalize(arr: np.ndarray, what: str) -> np.ndarray:
    sums = arr.sum(axis=-1, keepdims=True)
    drift = np.max(np.abs(sums - 1.0))
    if drift >= RENORM_TOL:
        raise ModelError(f"{what} rows drift from 1 by {drift:.3g}; rejecting")
    # rows already summing to 1 to rounding keep their exact bits
    return np.where(np.abs(sums - 1.0) > 1e-14, arr / sums, arr)


def spec_from_dict(doc: dict) -> WcmdpSpec:
    N = int(doc["num_submdps"])
    P = np.asarray(doc["transition"], dtype=float)
    r = np.asarray(doc["reward"], dtype=float)
    mu = np.asarray(doc["initial"], dtype=float)
    d = np.asarray(doc["consumption"], dtype=float)
    if doc.get("symmetric", True) and P.ndim == 3:
        P = np.broadcast_to(P, (N,) + P.shape)
        r = np.broadcast_to(r, (N,) + r.shape)
        mu = np.broadcast_to(mu, (N,) + mu.shape)
        d = np.repeat(d[:, None, :], N, axis=1)
    P = _renormalize(P, "transition")
    mu = _renormalize(mu, "initial")
    subs = [SubMdp(P[n], r[n], mu[n]) for n in range(N)]
    return WcmdpSpec(subs, d, doc["budgets"], doc["discount"], dict(doc.get("metadata", {})))


def save_spec(spec: WcmdpSpec, path) -> None:
    Path(path).write_text(json.dumps(spec_to_dict(spec), indent=1))


def load_spec(path) -> WcmdpSpec:
    return spec_from_dict(json.loads(Path(path).read_text()))
