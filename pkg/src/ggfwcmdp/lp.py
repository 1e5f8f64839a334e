"""Occupancy-measure LPs: the GGF-LP over the joint model and the count dual LP."""

from __future__ import annotations

import csv
import itertools
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .countmdp import CountModel
from .model import JointModel
from .simplex import LinearProgram, solve_lp


@dataclass
class OccupancySolution:
    q: np.ndarray  # (nS, nA) for the joint model
    ggf_dual_lambda: np.ndarray
    ggf_dual_nu: np.ndarray
    objective_value: float
    value_vector: np.ndarray
    policy: np.ndarray
    solve_seconds: float = 0.0


@dataclass
class CountSolution:
    q: np.ndarray  # one entry per (x, u) pair, state-major
    objective_value: float
    policy: list  # per count state: probabilities over its feasible actions
    solve_seconds: float = 0.0


def _flow_matrix(P: sp.csr_matrix, n_states: int, pair_state: np.ndarray, gamma: float) -> sp.csr_matrix:
    """Rows s: sum_a q(s, a) - gamma * sum_{s', a} q(s', a) P(s | s', a)."""
    n_pairs = P.shape[0]
    E = sp.csr_matrix((np.ones(n_pairs), (pair_state, np.arange(n_pairs))), shape=(n_states, n_pairs))
    return (E - gamma * P.T).tocsr()


def build_ggf_lp(joint: JointModel, weights) -> LinearProgram:
    """GGF-LP over the joint occupancy measure.

    Variables are ordered lambda_1..N, nu_1..N, then q(s, a) with s major.
    """
    w = np.asarray(weights, dtype=float)
    N = joint.num_submdps
    nS, nA = joint.n_states, joint.n_actions
    nq = nS * nA
    R = joint.reward.reshape(nq, N)  # R[:, j] = r_j(s, a)

    # lambda_i + nu_j - w_i * sum r_j q <= 0 for all i, j
    blocks = []
    for i in range(N):
        for j in range(N):
            row = np.zeros(2 * N + nq)
            row[i] = 1.0
            row[N + j] = 1.0
            row[2 * N:] = -w[i] * R[:, j]
            blocks.append(row)
    A_ub = sp.csr_matrix(np.array(blocks))
    b_ub = np.zeros(N * N)

    pair_state = np.repeat(np.arange(nS), nA)
    flow = _flow_matrix(joint.transition, nS, pair_state, joint.discount)
    A_eq = sp.hstack([sp.csr_matrix((nS, 2 * N)), flow], format="csr")
    b_eq = joint.initial.copy()

    c = np.concatenate([np.ones(2 * N), np.zeros(nq)])
    lb = np.concatenate([np.full(2 * N, -np.inf), np.zeros(nq)])
    names = [f"L{i}" for i in range(N)] + [f"V{j}" for j in range(N)]
    names += [f"Q{s}_{a}" for s in range(nS) for a in range(nA)]
    ub_names = [f"G{i}_{j}" for i in range(N) for j in range(N)]
    eq_names = [f"F{s}" for s in range(nS)]
    return LinearProgram(c, A_ub, b_ub, A_eq, b_eq, lb, names, ub_names, eq_names)


def build_count_dual_lp(count: CountModel, gamma: float | None = None) -> LinearProgram:
    gamma = count.discount if gamma is None else gamma
    nX = count.n_states
    pair_state = np.repeat(np.arange(nX), np.diff(count.offsets))
    flow = _flow_matrix(count.transition, nX, pair_state, gamma)
    n = count.n_pairs
    names = [f"C{i}_{j}" for i in range(nX) for j in range(len(count.actions[i]))]
    return LinearProgram(
        c=count.reward.copy(),
        A_ub=sp.csr_matrix((0, n)),
        b_ub=np.zeros(0),
        A_eq=flow,
        b_eq=count.initial.copy(),
        lb=np.zeros(n),
        var_names=names,
        eq_names=[f"F{i}" for i in range(nX)],
    )


def extract_policy(q, idle=0):
    """Normalise occupancies into a stationary policy.

    ``q`` is either an (nS, nA) array or a list of per-state rows of varying
    length. States with no occupancy get the idle action (``idle`` may be a
    scalar or one index per state).
    """
    if isinstance(q, np.ndarray) and q.ndim == 2:
        q = np.maximum(q, 0.0)
        tot = q.sum(axis=1, keepdims=True)
        pi = np.divide(q, tot, out=np.zeros_like(q), where=tot > 0)
        idle_idx = np.broadcast_to(np.asarray(idle), (q.shape[0],))
        empty = np.flatnonzero(tot[:, 0] <= 0)
        pi[empty, idle_idx[empty]] = 1.0
        return pi
    idle_idx = np.broadcast_to(np.asarray(idle), (len(q),))
    out = []
    for row, k in zip(q, idle_idx):
        row = np.maximum(np.asarray(row, dtype=float), 0.0)
        tot = row.sum()
        if tot > 0:
            out.append(row / tot)
        else:
            p = np.zeros_like(row)
            p[k] = 1.0
            out.append(p)
    return out


def value_vector_of(q: np.ndarray, joint: JointModel) -> np.ndarray:
    """V_n = sum_{s,a} r_n(s, a) q(s, a)."""
    return np.einsum("sa,san->n", np.asarray(q).reshape(joint.n_states, joint.n_actions), joint.reward)


def occupancy_of(policy: np.ndarray, joint: JointModel) -> np.ndarray:
    """Discounted state-action occupancy of a stationary policy, by linear solve."""
    nS = joint.n_states
    P = joint.transition_dense()
    P_pi = np.einsum("sa,sat->st", policy, P)
    d = np.linalg.solve(np.eye(nS) - joint.discount * P_pi.T, joint.initial)
    return d[:, None] * policy


def solve_ggf(joint: JointModel, weights, method: str = "simplex", tol: float = 1e-8) -> OccupancySolution:
    lp = build_ggf_lp(joint, weights)
    res = solve_lp(lp, tol=tol, method=method)
    N = joint.num_submdps
    q = res.x[2 * N:].reshape(joint.n_states, joint.n_actions)
    return OccupancySolution(
        q=q,
        ggf_dual_lambda=res.x[:N],
        ggf_dual_nu=res.x[N:2 * N],
        objective_value=res.objective,
        value_vector=value_vector_of(q, joint),
        policy=extract_policy(q, joint.idle_index),
        solve_seconds=res.seconds,
    )


def solve_count(count: CountModel, method: str = "simplex", tol: float = 1e-8) -> CountSolution:
    lp = build_count_dual_lp(count)
    res = solve_lp(lp, tol=tol, method=method)
    rows = [res.x[count.offsets[i]:count.offsets[i + 1]] for i in range(count.n_states)]
    return CountSolution(
        q=res.x,
        objective_value=res.objective,
        policy=extract_policy(rows, count.idle_index),
        solve_seconds=res.seconds,
    )


def flow_residual(q: np.ndarray, joint: JointModel) -> np.ndarray:
    nS = joint.n_states
    pair_state = np.repeat(np.arange(nS), joint.n_actions)
    flow = _flow_matrix(joint.transition, nS, pair_state, joint.discount)
    return flow @ np.asarray(q).ravel() - joint.initial


def permutation_maps(joint: JointModel, sigma) -> tuple[np.ndarray, np.ndarray]:
    """Index maps (state, action) -> index of the permuted (Q s, Q a)."""
    sigma = np.asarray(sigma)
    dims = joint._dims
    st = joint.states[:, sigma]
    state_map = np.ravel_multi_index(tuple(st.T), dims)
    action_map = np.array([joint.action_index(a) for a in joint.actions[:, sigma]])
    return state_map, action_map


def symmetrize_occupancy(q: np.ndarray, joint: JointModel) -> np.ndarray:
    """Average q over all N! relabellings of the sub-MDPs."""
    N = joint.num_submdps
    out = np.zeros_like(q)
    perms = list(itertools.permutations(range(N)))
    for sigma in perms:
        sm, am = permutation_maps(joint, sigma)
        out += q[np.ix_(sm, am)]
    return out / len(perms)


def permute_policy(policy: np.ndarray, joint: JointModel, sigma) -> np.ndarray:
    """pi^Q(s, a) = pi(Q s, Q a)."""
    sm, am = permutation_maps(joint, sigma)
    return policy[np.ix_(sm, am)]


# --- interchange ---------------------------------------------------------


def write_mps(lp: LinearProgram, path, name: str = "GGFLP") -> None:
    """Fixed-column MPS (names are kept within 8 characters).

    MPS minimises, so the objective row is written negated.
    """
    var = lp.var_names or [f"x{j}" for j in range(lp.num_variables)]
    ub = lp.ub_names or [f"u{i}" for i in range(lp.A_ub.shape[0])]
    eq = lp.eq_names or [f"e{i}" for i in range(lp.A_eq.shape[0])]
    lines = [f"NAME          {name}", "ROWS", " N  OBJ"]
    lines += [f" L  {r}" for r in ub]
    lines += [f" E  {r}" for r in eq]
    lines.append("COLUMNS")
    A_ub = lp.A_ub.tocsc()
    A_eq = lp.A_eq.tocsc()
    for j, v in enumerate(var):
        entries = []
        if lp.c[j] != 0:
            entries.append(("OBJ", -lp.c[j]))
        for M, names in ((A_ub, ub), (A_eq, eq)):
            lo, hi = M.indptr[j], M.indptr[j + 1]
            entries += [(names[i], val) for i, val in zip(M.indices[lo:hi], M.data[lo:hi])]
        for row, val in entries:
            lines.append(f"    {v:<8}  {row:<8}  {val:>.17g}")
    lines.append("RHS")
    for names, b in ((ub, lp.b_ub), (eq, lp.b_eq)):
        for r, val in zip(names, b):
            if val != 0:
                lines.append(f"    RHS       {r:<8}  {val:>.17g}")
    lines.append("BOUNDS")
    for v, lo in zip(var, lp.lb):
        if not np.isfinite(lo):
            lines.append(f" FR BND       {v}")
        elif lo != 0:
            lines.append(f" LO BND       {v:<8}  {lo:>.17g}")
    lines.append("ENDATA")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mps(path) -> LinearProgram:
    """Reader for the subset written by ``write_mps`` (round-trip checks)."""
    section = None
    rows_kind, ub, eq, cols = {}, [], [], {}
    obj = {}
    rhs = {}
    lbs = {}
    for raw in open(path):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        if not line.startswith(" "):
            section = line.split()[0]
            continue
        tok = line.split()
        if section == "ROWS":
            rows_kind[tok[1]] = tok[0]
            if tok[0] == "L":
                ub.append(tok[1])
            elif tok[0] == "E":
                eq.append(tok[1])
        elif section == "COLUMNS":
            col, row, val = tok[0], tok[1], float(tok[2])
            cols.setdefault(col, {})
            if rows_kind[row] == "N":
                obj[col] = -val
            else:
                cols[col][row] = val
        elif section == "RHS":
            rhs[tok[1]] = float(tok[2])
        elif section == "BOUNDS":
            if tok[0] == "FR":
                lbs[tok[2]] = -np.inf
            elif tok[0] == "LO":
                lbs[tok[2]] = float(tok[3])
    var = list(cols)
    ui = {r: i for i, r in enumerate(ub)}
    ei = {r: i for i, r in enumerate(eq)}
    A_ub = sp.lil_matrix((len(ub), len(var)))
    A_eq = sp.lil_matrix((len(eq), len(var)))
    for j, v in enumerate(var):
        for row, val in cols[v].items():
            if row in ui:
                A_ub[ui[row], j] = val
            else:
                A_eq[ei[row], j] = val
    return LinearProgram(
        c=np.array([obj.get(v, 0.0) for v in var]),
        A_ub=A_ub.tocsr(),
        b_ub=np.array([rhs.get(r, 0.0) for r in ub]),
        A_eq=A_eq.tocsr(),
        b_eq=np.array([rhs.get(r, 0.0) for r in eq]),
        lb=np.array([lbs.get(v, 0.0) for v in var]),
        var_names=var,
        ub_names=ub,
        eq_names=eq,
    )


STATS_COLUMNS = ["model", "N", "constraint_count", "variable_count", "build_seconds", "solve_seconds"]


def write_stats_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=STATS_COLUMNS, extrasaction="ignore")
        wr.writeheader()
        for r in rows:
            wr.writerow(r)


def timed_build(builder, *args):
    t0 = time.perf_counter()
    lp = builder(*args)
    return lp, time.perf_counter() - t0
