"""Sequential priority sampling of count actions.

Given a count state ``x``, a priority matrix ``U`` (S x A, entries in (0, 1])
and a resource-use proportion ``p`` (length K), pairs (s, a) are drawn
proportionally to ``U`` among the pairs not yet forbidden. A draw that fits
in the remaining effective budget ``b * p`` assigns one machine from state s
to action a; a draw that does not fit forbids that pair. A state whose
machines are all assigned has its whole row forbidden. The loop ends when
every pair is forbidden.

Every draw, affordable or not, contributes ``log(U[s, a] / sum of allowed U)``
to the log-probability, so the density covers the full sampling path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class DegeneratePriorities(ValueError):
    pass


class TraceMismatch(ValueError):
    pass


@dataclass(frozen=True)
class PolicyOutput:
    priorities: np.ndarray  # (S, A) in (0, 1]
    resource_use: np.ndarray  # (K,) in [0, 1]


@dataclass
class SampleTrace:
    action: np.ndarray  # (S, A) counts
    chosen_pairs: list  # flat indices s * A + a, in draw order
    logprob: float
    forbidden_history: list = field(default_factory=list)  # |F| after each draw
    iterations: int = 0


def _run(x, U, budgets, p, d, draws=None, rng=None, want_grad=False):
    """Shared sampling / replay loop.

    With ``draws`` given the recorded pairs are replayed instead of sampled.
    Returns (u, chosen, logprob, history, grad) where ``grad`` is d logprob / d U.
    """
    S, A = U.shape
    SA = S * A
    Uf = [float(v) for v in U.ravel()]
    xs = [int(v) for v in x]
    K = len(budgets)
    bt = [float(budgets[k]) * float(p[k]) for k in range(K)]
    dk = [[float(d[k][a]) for a in range(A)] for k in range(K)]

    allowed = [xs[i // A] > 0 and Uf[i] > 0.0 for i in range(SA)]
    n_forbidden = SA - sum(allowed)
    if n_forbidden == SA and sum(xs) > 0:
        raise DegeneratePriorities("all pairs masked although machines remain")

    u = [0] * SA
    chosen = []
    history = []
    logprob = 0.0
    grad = [0.0] * SA if want_grad else None
    if draws is None:
        # at most N + S*A draws; one uniform per draw
        uniforms = rng.random(sum(xs) + SA)
    t = 0
    while n_forbidden < SA:
        total = 0.0
        for i in range(SA):
            if allowed[i]:
                total += Uf[i]
        if draws is None:
            target = uniforms[t] * total
            acc = 0.0
            pick = -1
            for i in range(SA):
                if allowed[i]:
                    acc += Uf[i]
                    pick = i
                    if acc > target:
                        break
        else:
            if t >= len(draws):
                raise TraceMismatch("trace ended before the sampler terminated")
            pick = int(draws[t])
            if not allowed[pick]:
                raise TraceMismatch(f"replayed pair {pick} is forbidden at step {t}")
        logprob += math.log(Uf[pick] / total)
        if want_grad:
            grad[pick] += 1.0 / Uf[pick]
            inv = 1.0 / total
            for i in range(SA):
                if allowed[i]:
                    grad[i] -= inv
        chosen.append(pick)
        s, a = divmod(pick, A)
        if all(dk[k][a] <= bt[k] for k in range(K)):
            u[pick] += 1
            xs[s] -= 1
            for k in range(K):
                bt[k] -= dk[k][a]
            if xs[s] == 0:
                for j in range(s * A, s * A + A):
                    if allowed[j]:
                        allowed[j] = False
                        n_forbidden += 1
        else:
            allowed[pick] = False
            n_forbidden += 1
        history.append(n_forbidden)
        t += 1
    if draws is not None and t != len(draws):
        raise TraceMismatch("trace has draws left after the sampler terminated")
    u_arr = np.array(u, dtype=np.int64).reshape(S, A)
    g = np.array(grad).reshape(S, A) if want_grad else None
    return u_arr, chosen, logprob, history, g


def sample_count_action(x, out: PolicyOutput, budgets, consumption, rng) -> SampleTrace:
    """Draw a count action. ``consumption[k][a]`` is resource k used by action a."""
    U = np.asarray(out.priorities, dtype=float)
    p = np.asarray(out.resource_use, dtype=float)
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("resource_use must lie in [0, 1]")
    u, chosen, lp, hist, _ = _run(x, U, np.asarray(budgets, dtype=float), p, consumption, rng=rng)
    return SampleTrace(u, chosen, lp, hist, len(chosen))


def logprob_of(x, out: PolicyOutput, budgets, consumption, trace: SampleTrace, with_grad: bool = False):
    """Log-probability of ``trace`` under (possibly different) priorities.

    With ``with_grad`` also returns the gradient with respect to the priorities.
    """
    U = np.asarray(out.priorities, dtype=float)
    p = np.asarray(out.resource_use, dtype=float)
    u, _, lp, _, g = _run(x, U, np.asarray(budgets, dtype=float), p, consumption,
                          draws=trace.chosen_pairs, want_grad=with_grad)
    if not np.array_equal(u, trace.action):
        raise TraceMismatch("replay produced a different action")
    return (lp, g) if with_grad else lp
