"""Command line entry point: ``python3 -m tabular_il <command> ...``."""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from . import io
from .data import collect_dataset, split_dataset, visited_states
from .harness import ExperimentConfig, format_float, sweep
from .instances import INSTANCE_NAMES, four_state_mdp, make_instance
from .mdp import policy_value, state_marginals
from .mimic_md import MODES, mimic_md
from .mixture import (TARGET_RULES, four_state_block_policy, mimic_mixture, state_two_counts,
                      three_state_composite)

MIXTURE_COLUMNS = ["replication", "alpha_hat", "realized_prob", "expert_prob", "suboptimality", "overflow_flag"]


def _parse_u(tokens, H: int, rng: np.random.Generator) -> np.ndarray:
    if not tokens or tokens == ["random"]:
        return (rng.random(H - 1) < 0.5).astype(int)
    if tokens == ["all-ones"]:
        return np.ones(H - 1, dtype=int)
    bits = "".join(tokens).replace(",", "")
    if len(bits) != H - 1 or set(bits) - {"0", "1"}:
        raise SystemExit(f"--u needs random, all-ones or {H - 1} bits")
    return np.array([int(b) for b in bits])


def _load_instance(path: str):
    data = io.load_json(path)
    mdp = io.mdp_from_dict(data)
    expert = io.policy_from_dict(data["expert"]) if "expert" in data else None
    return mdp, expert


def _writer(path: str | None):
    fh = sys.stdout if path in (None, "-") else open(path, "w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def _value_gap(mdp, expert, learner) -> float:
    if mdp.rewards is None:
        return float("nan")
    return policy_value(mdp, expert) - policy_value(mdp, learner)


def cmd_gen_instance(args) -> int:
    rng = np.random.default_rng(args.seed)
    U = _parse_u(args.u, args.h, rng) if args.name == "four-state" else None
    bundle = make_instance(args.name, args.n, args.h, rng, expert=args.expert, reward=args.reward, U=U,
                           num_states=args.states, num_actions=args.actions)
    out = io.mdp_to_dict(bundle.mdp)
    out["expert"] = io.policy_to_dict(bundle.expert)
    out["metadata"] = bundle.metadata
    if args.out in (None, "-"):
        io.json.dump(out, sys.stdout)
        sys.stdout.write("\n")
    else:
        io.save_json(out, args.out)
    return 0


def cmd_mimic_md(args) -> int:
    mdp, expert = _load_instance(args.mdp)
    if args.expert:
        expert = io.load_policy(args.expert)
    rng = np.random.default_rng(args.seed)
    if args.dataset:
        data = io.load_dataset(args.dataset)
    else:
        if expert is None:
            raise SystemExit("an expert policy is needed to sample data (instance file or --expert)")
        data = collect_dataset(mdp, expert, args.n, rng, seed=args.seed)
    res = mimic_md(mdp, data, rng, args.mode, args.lp_tol, args.backend)
    if args.policy_out:
        io.save_policy(res.policy, args.policy_out)
    sub = _value_gap(mdp, expert, res.policy) if expert is not None else float("nan")
    fh, w = _writer(args.csv)
    w.writerow(["objective", "suboptimality"])
    w.writerow([format_float(res.objective), format_float(sub)])
    if fh is not sys.stdout:
        fh.close()
    return 0


def _rep_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, rep]))


def cmd_mimic_mixture(args) -> int:
    mdp, expert = _load_instance(args.mdp)
    if expert is None:
        raise SystemExit("the instance file must contain an expert")
    t_star = mdp.horizon - 1 if args.target_t is None else args.target_t
    target = (t_star, args.target_s)
    expert_prob = float(state_marginals(mdp, expert)[target])
    fh, w = _writer(args.csv)
    w.writerow(MIXTURE_COLUMNS)
    for rep in range(args.replications):
        rng = _rep_rng(args.seed, rep)
        data = collect_dataset(mdp, expert, args.n, rng)
        d1, d2 = split_dataset(data, rng)
        known = visited_states(d1, mdp.num_states)
        tail = np.where(known.visited, known.pinned, expert.actions)
        res = mimic_mixture(mdp, d2, known, target, len(d2), rng, tail_actions=tail)
        w.writerow([rep, format_float(res.alpha_hat), format_float(res.target_prob()), format_float(expert_prob),
                    format_float(_value_gap(mdp, expert, res.policy)), int(res.overflow)])
    if fh is not sys.stdout:
        fh.close()
    return 0


def cmd_four_state_block(args) -> int:
    fh, w = _writer(args.csv)
    w.writerow(MIXTURE_COLUMNS)
    for rep in range(args.replications):
        rng = _rep_rng(args.seed, rep)
        U = _parse_u(args.u, args.h, rng)
        bundle = four_state_mdp(args.n, args.h, U, args.reward)
        data = collect_dataset(bundle.mdp, bundle.expert, args.n, rng)
        X, Uobs = state_two_counts(data)
        pol = four_state_block_policy(X, Uobs, args.n, args.h, args.c_block)
        realized = float(state_marginals(bundle.mdp, pol)[-1, 2])
        expert_prob = float(state_marginals(bundle.mdp, bundle.expert)[-1, 2])
        w.writerow([rep, "nan", format_float(realized), format_float(expert_prob),
                    format_float(_value_gap(bundle.mdp, bundle.expert, pol)), 0])
    if fh is not sys.stdout:
        fh.close()
    return 0


def cmd_three_state_composite(args) -> int:
    fixed = _load_instance(args.mdp) if args.mdp else None
    fh, w = _writer(args.csv)
    w.writerow(MIXTURE_COLUMNS)
    for rep in range(args.replications):
        rng = _rep_rng(args.seed, rep)
        if fixed is None:
            bundle = make_instance("three-state-terminal", args.n, args.h, rng, expert="optimal")
            mdp, expert = bundle.mdp, bundle.expert
        else:
            mdp, expert = fixed
        data = collect_dataset(mdp, expert, args.n, rng)
        res = three_state_composite(mdp, data, rng, args.target_rule, backend=args.backend)
        # with a terminal 0/1 reward the value is the probability of ending rewarded
        realized = policy_value(mdp, res.policy)
        expert_prob = policy_value(mdp, expert)
        alpha = float("nan") if res.alpha_hat is None else res.alpha_hat
        w.writerow([rep, format_float(alpha), format_float(realized), format_float(expert_prob),
                    format_float(expert_prob - realized), int(res.overflow)])
    if fh is not sys.stdout:
        fh.close()
    return 0


def cmd_sweep(args) -> int:
    config = ExperimentConfig.from_json(args.config)
    if args.output:
        config.output = args.output
    rows = sweep(config, resume=args.resume, threads=args.threads)
    errors = sum(r.error for r in rows)
    print(f"wrote {len(rows)} rows to {config.output} ({errors} errors)", file=sys.stderr)
    return 0 if errors == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tabular_il", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-instance", help="write an instance (MDP plus expert) as JSON")
    p.add_argument("--name", choices=INSTANCE_NAMES, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--h", type=int, required=True)
    p.add_argument("--u", nargs="*", default=None, help="random, all-ones, or H-1 bits (four-state only)")
    p.add_argument("--expert", choices=("prior", "optimal", "all-ones"), default="prior")
    p.add_argument("--reward", default=None)
    p.add_argument("--states", type=int, default=3, help="state count for the random instance")
    p.add_argument("--actions", type=int, default=2, help="action count for the random instance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_gen_instance)

    p = sub.add_parser("mimic-md", help="run Mimic-MD once on an instance file")
    p.add_argument("--mdp", required=True, help="instance JSON (from gen-instance)")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--mode", choices=MODES, default="augmented")
    p.add_argument("--lp-tol", type=float, default=1e-8)
    p.add_argument("--backend", choices=("simplex", "highs"), default="simplex")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--expert", default=None, help="policy JSON overriding the instance's expert")
    p.add_argument("--dataset", default=None, help="demonstrations as 't s a' text instead of sampling")
    p.add_argument("--policy-out", default=None)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_mimic_md)

    p = sub.add_parser("mimic-mixture", help="repeated Mimic-Mixture runs for one target")
    p.add_argument("--mdp", required=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--target-t", type=int, default=None, help="0-based target time (default: last step)")
    p.add_argument("--target-s", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replications", type=int, default=1)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_mimic_mixture)

    p = sub.add_parser("four-state-block", help="block-ratio policy on the four-state chain")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--h", type=int, default=16)
    p.add_argument("--u", nargs="*", default=None)
    p.add_argument("--reward", choices=("state3", "terminal", "expert"), default="expert")
    p.add_argument("--c-block", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replications", type=int, default=1)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_four_state_block)

    p = sub.add_parser("three-state-composite", help="BC / Mimic-MD / Mimic-Mixture dispatcher")
    p.add_argument("--mdp", default=None, help="fixed instance; default draws three-state-terminal per run")
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--h", type=int, default=30)
    p.add_argument("--target-rule", choices=TARGET_RULES, default="lowest")
    p.add_argument("--backend", choices=("simplex", "highs"), default="simplex")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replications", type=int, default=1)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_three_state_composite)

    p = sub.add_parser("sweep", help="run an experiment grid from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--output", default=None, help="override the config's output path")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
