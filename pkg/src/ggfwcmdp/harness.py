"""Desk-scale experiment runners that write tidy CSV files."""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, field, fields

import numpy as np
from scipy import stats

from .baselines import CountRandomPolicy, CountWhittlePolicy, WhittlePolicy, random_table, tabulate
from .countmdp import build_count_model
from .cpdrl import TrainConfig, count_policy, train
from .fairness import make_exponential_weights
from .instances import MachineReplacementConfig, build_instance
from .lp import build_count_dual_lp, build_ggf_lp, extract_policy, solve_count, solve_ggf
from .model import expand_joint
from .simplex import solve_lp
from .simulate import EvalConfig, evaluate_count_policy, evaluate_joint_policy

EXPERIMENTS = ("e1", "e2", "e3", "e4")
ALIASES = {"e1-optimality": "e1", "e2-flexibility": "e2", "e3-scalability": "e3", "e4-efficiency": "e4"}
META_COLUMNS = ["preset", "stay_prob", "instance_seed", "S", "budget"]
RESULT_COLUMNS = ["experiment", "policy", "N", "seed", "ggf", "stderr", "seconds"] + META_COLUMNS


class ExperimentError(RuntimeError):
    pass


@dataclass
class ExperimentSpec:
    experiment: str
    instance: dict = field(default_factory=lambda: {"preset": "exponential-rccc"})
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    out_dir: str = "."
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        self.experiment = ALIASES.get(self.experiment, self.experiment)
        if self.experiment not in EXPERIMENTS:
            raise ExperimentError(f"unknown experiment {self.experiment!r}")
        if not self.seeds:
            raise ExperimentError("seeds must be non-empty")

    def opt(self, key, default):
        return self.options.get(key, default)

    @classmethod
    def from_file(cls, path, experiment, out_dir):
        with open(path) as fh:
            doc = json.load(fh)
        known = {f.name for f in fields(cls)} - {"experiment", "out_dir", "options"}
        kw = {k: doc[k] for k in known if k in doc}
        opts = {k: v for k, v in doc.items() if k not in known}
        return cls(experiment=experiment, out_dir=out_dir, options=opts, **kw)


def make_instance(inst: dict, num_machines: int, budget: float | None = None):
    kw = dict(inst)
    preset = kw.pop("preset", "exponential-rccc")
    if budget is not None:
        kw["budget"] = budget
    return build_instance(MachineReplacementConfig.preset(preset, num_machines, **kw))


def _meta(spec):
    m = spec.metadata
    return {
        "preset": f"{m.get('operate_cost_kind')}-{m.get('replace_cost_kind')}",
        "stay_prob": m.get("stay_prob"),
        "instance_seed": m.get("rng_seed"),
        "S": m.get("num_states"),
        "budget": m.get("budget"),
    }


def write_csv(rows, path, columns):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        wr.writeheader()
        for r in rows:
            wr.writerow(r)
    return path


def _train_cfg(es: ExperimentSpec, seed: int, default_episodes: int) -> TrainConfig:
    return TrainConfig(episodes=int(es.opt("episodes", default_episodes)), rng_seed=seed, eval_every=0)


def _eval_cfg(es: ExperimentSpec, seed: int) -> EvalConfig:
    return EvalConfig(int(es.opt("eval_trajectories", 1000)), int(es.opt("eval_horizon", 300)), rng_seed=seed)


def _row(exp, policy, N, seed, score, se, secs, spec):
    return {"experiment": exp, "policy": policy, "N": N, "seed": seed, "ggf": score,
            "stderr": se, "seconds": secs, **_meta(spec)}


def _lp_method(N):
    return "simplex" if N <= 5 else "highs"


def _random_rows(exp, spec, joint, es, N):
    """Random policy averaged over independent evaluation runs."""
    runs = int(es.opt("rdm_runs", 10))
    scores, ses = [], []
    t0 = time.perf_counter()
    for r in range(runs):
        cfg = _eval_cfg(es, 1000 + r)
        if joint is not None:
            rep = evaluate_joint_policy(random_table(spec, joint), spec, cfg, joint)
        else:
            rep = evaluate_count_policy(CountRandomPolicy(spec), spec, cfg)
        scores.append(rep.ggf_score)
        ses.append(rep.stderr)
    se = float(np.sqrt(np.sum(np.square(ses)))) / runs
    return _row(exp, "RDM", N, -1, float(np.mean(scores)), se, time.perf_counter() - t0, spec)


def run_e1(es: ExperimentSpec) -> str:
    rows = []
    for N in es.opt("N", [3, 4, 5]):
        spec = make_instance(es.instance, N)
        joint = expand_joint(spec)
        w = make_exponential_weights(N)
        t0 = time.perf_counter()
        sol = solve_ggf(joint, w, method=_lp_method(N))
        rows.append(_row("e1", "OPT", N, -1, sol.objective_value, 0.0, time.perf_counter() - t0, spec))
        t0 = time.perf_counter()
        wip = tabulate(WhittlePolicy(spec), joint)
        rep = evaluate_joint_policy(wip, spec, _eval_cfg(es, 0), joint)
        rows.append(_row("e1", "WIP", N, -1, rep.ggf_score, rep.stderr, time.perf_counter() - t0, spec))
        rows.append(_random_rows("e1", spec, joint, es, N))
        for seed in es.seeds:
            t0 = time.perf_counter()
            res = train(spec, _train_cfg(es, seed, 800))
            rep = evaluate_count_policy(count_policy(res.actor, spec), spec, _eval_cfg(es, seed))
            rows.append(_row("e1", "CPDRL", N, seed, rep.ggf_score, rep.stderr, time.perf_counter() - t0, spec))
    return write_csv(rows, os.path.join(es.out_dir, "e1.csv"), RESULT_COLUMNS)


def run_e2(es: ExperimentSpec) -> str:
    Ns = es.opt("N", [2, 3, 4, 5])
    specs = [make_instance(es.instance, N) for N in Ns]
    rows = []
    for spec in specs:
        N = spec.num_submdps
        sol = solve_ggf(expand_joint(spec), make_exponential_weights(N), method=_lp_method(N))
        rows.append(_row("e2", "OPT", N, -1, sol.objective_value, 0.0, sol.solve_seconds, spec))
    for seed in es.seeds:
        res = train(specs, _train_cfg(es, seed, 2000))
        for spec in specs:
            rep = evaluate_count_policy(count_policy(res.actor, spec), spec, _eval_cfg(es, seed))
            rows.append(_row("e2", "CPDRL-MT", spec.num_submdps, seed, rep.ggf_score, rep.stderr, rep.wall_seconds, spec))
    return write_csv(rows, os.path.join(es.out_dir, "e2.csv"), RESULT_COLUMNS)


def time_per_episode(inst: dict, Ns, episodes=5, repeats=3, ratio=0.1, seed=0, steps=100):
    """Median training seconds per episode for each N at budget ratio * N."""
    out = []
    for N in Ns:
        spec = make_instance(inst, N, budget=ratio * N)
        per = []
        for r in range(repeats):
            res = train(spec, TrainConfig(episodes=episodes, steps_per_episode=steps, rng_seed=seed + r, eval_every=0))
            per.append(np.median(res.episode_seconds))
        out.append(float(np.median(per)))
    return out


def linear_fit(xs, ys):
    fit = stats.linregress(xs, ys)
    return fit.slope, fit.intercept, fit.rvalue ** 2


def run_e3(es: ExperimentSpec) -> str:
    Ns = es.opt("N", list(range(10, 101, 10)))
    ratio = float(es.opt("ratio", 0.1))
    base = None
    rows = []
    for N in Ns:
        spec = make_instance(es.instance, N, budget=ratio * N)
        for seed in es.seeds:
            res = train(spec, _train_cfg(es, seed, 200))
            rep = evaluate_count_policy(count_policy(res.actor, spec), spec, _eval_cfg(es, seed))
            r = _row("e3", "CPDRL", N, seed, rep.ggf_score, rep.stderr, rep.wall_seconds, spec)
            r["episode_seconds"] = float(np.mean(res.episode_seconds))
            rows.append(r)
            if base is None:
                base = res.actor  # first N's first seed is the transfer source
            elif N != Ns[0]:
                rep = evaluate_count_policy(count_policy(base, spec), spec, _eval_cfg(es, seed))
                rows.append(_row("e3", f"CPDRL-transfer-{Ns[0]}", N, seed, rep.ggf_score, rep.stderr, rep.wall_seconds, spec))
        t0 = time.perf_counter()
        rep = evaluate_count_policy(CountWhittlePolicy(spec), spec, _eval_cfg(es, 0))
        rows.append(_row("e3", "WIP", N, -1, rep.ggf_score, rep.stderr, time.perf_counter() - t0, spec))
        rows.append(_random_rows("e3", spec, None, es, N))
    return write_csv(rows, os.path.join(es.out_dir, "e3.csv"), RESULT_COLUMNS + ["episode_seconds"])


E4_COLUMNS = ["model", "N", "constraint_count", "variable_count", "build_seconds", "solve_seconds",
              "extract_seconds", "objective", "method"] + META_COLUMNS


def run_e4(es: ExperimentSpec) -> str:
    rows = []
    for N in es.opt("N", [2, 3, 4, 5, 6, 7]):
        spec = make_instance(es.instance, N)
        method = _lp_method(N)
        t0 = time.perf_counter()
        joint = expand_joint(spec)
        lp = build_ggf_lp(joint, make_exponential_weights(N))
        t_build = time.perf_counter() - t0
        res = solve_lp(lp, method=method)
        t0 = time.perf_counter()
        extract_policy(res.x[2 * N:].reshape(joint.n_states, joint.n_actions), joint.idle_index)
        rows.append({"model": "ggf-lp", "N": N, "constraint_count": lp.num_constraints,
                     "variable_count": lp.num_variables, "build_seconds": t_build, "solve_seconds": res.seconds,
                     "extract_seconds": time.perf_counter() - t0, "objective": res.objective, "method": method,
                     **_meta(spec)})
        t0 = time.perf_counter()
        count = build_count_model(spec)
        clp = build_count_dual_lp(count)
        t_build = time.perf_counter() - t0
        t0 = time.perf_counter()
        sol = solve_count(count, method=method)
        t_solve = time.perf_counter() - t0
        rows.append({"model": "count-lp", "N": N, "constraint_count": clp.num_constraints,
                     "variable_count": clp.num_variables, "build_seconds": t_build, "solve_seconds": t_solve,
                     "extract_seconds": 0.0, "objective": sol.objective_value, "method": method, **_meta(spec)})
    return write_csv(rows, os.path.join(es.out_dir, "e4.csv"), E4_COLUMNS)


RUNNERS = {"e1": run_e1, "e2": run_e2, "e3": run_e3, "e4": run_e4}


def run_experiment(es: ExperimentSpec) -> str:
    os.makedirs(es.out_dir, exist_ok=True)
    return RUNNERS[es.experiment](es)
