"""Command line entry point: ``ggfwcmdp <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import sys

from .baselines import (CountRandomPolicy, CountWhittlePolicy, WhittlePolicy, random_table, tabulate,
                        whittle_indices)
from .cpdrl import TrainConfig, count_policy, load_checkpoint, save_checkpoint, train
from .fairness import make_exponential_weights
from .harness import ExperimentSpec, run_experiment, write_csv
from .instances import PRESETS, MachineReplacementConfig, build_instance
from .lp import solve_ggf
from .model import CapExceeded, expand_joint, load_spec, save_spec
from .simulate import EvalConfig, evaluate_count_policy, evaluate_joint_policy

EVAL_COLUMNS = ["policy", "N", "S", "budget", "ggf_score", "mean_value", "stderr", "seconds"]
JOINT_CAP = 10**6


def cmd_generate(args):
    cfg = MachineReplacementConfig.preset(
        args.preset, args.machines, num_states=args.states, stay_prob=args.stay_prob,
        budget=args.budget, discount=args.discount, rng_seed=args.seed,
    )
    save_spec(build_instance(cfg), args.out)
    print(args.out)


def cmd_whittle(args):
    spec = load_spec(args.instance)
    gamma = spec.discount if args.gamma is None else args.gamma
    table = whittle_indices(spec.sub_mdps[0], gamma, args.tol)
    wr = csv.writer(sys.stdout)
    wr.writerow(["state", "index", "indexable"])
    for s, v in enumerate(table.index):
        wr.writerow([s, repr(float(v)), table.indexable])


def _joint_or_none(spec):
    try:
        return expand_joint(spec, cap=JOINT_CAP)
    except CapExceeded:
        return None


def cmd_evaluate(args):
    spec = load_spec(args.instance)
    N = spec.num_submdps
    cfg = EvalConfig(args.trajectories, args.horizon, rng_seed=args.seed,
                     weights=make_exponential_weights(N, args.weights_factor))
    kind = args.policy
    if kind.startswith("cpdrl:"):
        actor = load_checkpoint(kind.split(":", 1)[1]).actor
        rep = evaluate_count_policy(count_policy(actor, spec), spec, cfg)
    elif kind in ("random", "wip", "lp"):
        joint = _joint_or_none(spec)
        if joint is None:
            if kind == "lp":
                raise CapExceeded("the exact LP needs the joint model, which is too large here")
            pol = CountRandomPolicy(spec) if kind == "random" else CountWhittlePolicy(spec)
            rep = evaluate_count_policy(pol, spec, cfg)
        else:
            if kind == "random":
                table = random_table(spec, joint)
            elif kind == "wip":
                table = tabulate(WhittlePolicy(spec), joint)
            else:
                table = solve_ggf(joint, cfg.weights, method="highs").policy
            rep = evaluate_joint_policy(table, spec, cfg, joint)
    else:
        raise ValueError(f"unknown policy {kind!r}")
    row = {"policy": kind, "N": N, "S": spec.sub_mdps[0].num_states, "budget": float(spec.budgets[0]),
           "ggf_score": rep.ggf_score, "mean_value": rep.mean_value, "stderr": rep.stderr,
           "seconds": rep.wall_seconds}
    if args.out:
        write_csv([row], args.out, EVAL_COLUMNS)
    print(json.dumps(row))


def _parse_multitask(text, base):
    """'2:1,3:1' -> instances sharing the base instance's generator settings."""
    meta = dict(base.metadata)
    if meta.pop("generator", None) != "machine-replacement":
        raise ValueError("multitask needs an instance created by generate-instance")
    specs = []
    for item in text.split(","):
        n, b = item.split(":")
        kw = {**meta, "num_machines": int(n), "budget": float(b)}
        specs.append(build_instance(MachineReplacementConfig(**kw)))
    return specs


def cmd_train(args):
    spec = load_spec(args.instance)
    target = _parse_multitask(args.multitask, spec) if args.multitask else spec
    cfg = TrainConfig(episodes=args.episodes, rng_seed=args.seed, eval_every=args.eval_every)
    log = (lambda m: print(m, file=sys.stderr)) if args.verbose else None
    res = train(target, cfg, eval_spec=spec, log=log)
    save_checkpoint(args.out, res)
    if args.curve:
        rows = [{"episode": e, "eval_ggf": g, "stderr": s} for e, g, s in res.curve]
        write_csv(rows, args.curve, ["episode", "eval_ggf", "stderr"])
    print(args.out)


def cmd_experiment(args):
    es = ExperimentSpec.from_file(args.config, args.id, args.out) if args.config else ExperimentSpec(args.id, out_dir=args.out)
    print(run_experiment(es))


def build_parser():
    ap = argparse.ArgumentParser(prog="ggfwcmdp", description="Fair resource allocation in weakly coupled MDPs")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-instance", help="write a machine-replacement instance as JSON")
    g.add_argument("--preset", choices=sorted(PRESETS), default="exponential-rccc")
    g.add_argument("--machines", type=int, required=True)
    g.add_argument("--states", type=int, default=3)
    g.add_argument("--stay-prob", type=float, default=0.8)
    g.add_argument("--budget", type=float, default=1.0)
    g.add_argument("--discount", type=float, default=0.95)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    w = sub.add_parser("whittle", help="print Whittle indices of the shared arm")
    w.add_argument("--instance", required=True)
    w.add_argument("--gamma", type=float, help="defaults to the instance's discount")
    w.add_argument("--tol", type=float, default=1e-6)
    w.set_defaults(func=cmd_whittle)

    e = sub.add_parser("evaluate", help="Monte Carlo evaluation of a policy")
    e.add_argument("--instance", required=True)
    e.add_argument("--policy", required=True, help="random | wip | lp | cpdrl:CHECKPOINT")
    e.add_argument("--trajectories", type=int, default=1000)
    e.add_argument("--horizon", type=int, default=300)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--weights-factor", type=float, default=2.0)
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    t = sub.add_parser("train-cpdrl", help="train the count-proportion policy")
    t.add_argument("--instance", required=True)
    t.add_argument("--multitask", help="comma list of N:budget, e.g. 2:1,3:1,4:1,5:1")
    t.add_argument("--episodes", type=int, default=800)
    t.add_argument("--eval-every", type=int, default=20)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.add_argument("--curve")
    t.add_argument("-v", "--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    x = sub.add_parser("experiment", help="run e1, e2, e3 or e4")
    x.add_argument("id", choices=["e1", "e2", "e3", "e4", "e1-optimality", "e2-flexibility",
                                  "e3-scalability", "e4-efficiency"])
    x.add_argument("--config")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_experiment)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except Exception as exc:  # report every failure in a machine-readable form
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "command": args.command}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
