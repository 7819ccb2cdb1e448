"""Command-line interface: single-query estimation, exact oracle, experiments.

Exit codes: 0 success, 2 validation error, 3 zero-probability evidence,
4 enumeration budget exceeded.  Query commands print one JSON object on
stdout; the experiment command writes CSV/JSON artifacts to --out.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .effects import (
    EffectQuery,
    Outcome,
    estimate_ase,
    estimate_cf_ase,
    estimate_cf_pse,
    estimate_fpse,
    estimate_tcfe,
)
from .harness import ExperimentConfig, EXPERIMENTS, run_experiment
from .model import ActionVar, ModelError, StateVar, ZeroProbabilityEvidence, build_scm
from .modelio import load_model, load_trajectory
from .oracle import CellBudgetExceeded, exact_query
from .worlds import action_subgraph_pair, complement_edges

EXIT_VALIDATION = 2
EXIT_ZERO_PROB = 3
EXIT_BUDGET = 4

KIND_ALIASES = {
    "tcfe": "tcfe",
    "cf-ase": "cf_ase",
    "cf_ase": "cf_ase",
    "cf-pse": "cf_pse",
    "cf_pse": "cf_pse",
    "cf-fpse": "cf_fpse",
    "cf_fpse": "cf_fpse",
    "ase": "ase",
    "fpse": "fpse",
    "pse": "pse",
    "tce": "tce",
}


def _fail(code: int, message: str) -> int:
    print(json.dumps({"error": message}))
    return code


def _seed_from(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("ASE_LAB_SEED")
    return int(env) if env else 0


def _parse_outcome(text: str, scm) -> Outcome:
    """Mini-language: "final_state==<id>" or "state[t]==<id>"."""
    if "==" not in text:
        raise ModelError("outcome must look like final_state==<id> or state[t]==<id>")
    lhs, value = text.split("==", 1)
    lhs = lhs.strip()
    value = value.strip()
    if lhs == "final_state":
        t = scm.spec.horizon
    elif lhs.startswith("state[") and lhs.endswith("]"):
        t = int(lhs[len("state["):-1])
    else:
        raise ModelError(f"unrecognized outcome {text!r}")
    return Outcome(var=StateVar(t), accepted=frozenset([value]))


def _parse_effect_agents(text: str | None):
    if not text:
        return None
    return frozenset(int(x) for x in text.split(","))


def _query_from_args(args, scm) -> EffectQuery:
    trajectory = load_trajectory(args.trajectory, scm.spec) if args.trajectory else None
    return EffectQuery(
        agent=args.agent,
        t=args.time,
        alternative=args.action,
        reference=args.ref_action,
        effect_agents=_parse_effect_agents(args.effect_agents),
        outcome=_parse_outcome(args.outcome, scm),
        samples=args.samples,
        seed=_seed_from(args),
        trajectory=trajectory,
    )


def cmd_effect(args) -> int:
    scm = build_scm(*load_model(args.model))
    kind = KIND_ALIASES[args.kind]
    query = _query_from_args(args, scm)
    if kind == "tcfe":
        est = estimate_tcfe(scm, query)
    elif kind == "cf_ase":
        est = estimate_cf_ase(scm, query)
    elif kind == "cf_pse":
        est = estimate_cf_pse(scm, query)
    elif kind == "ase":
        est = estimate_ase(scm, query)
    elif kind == "fpse":
        if not query.effect_agents:
            raise ModelError("fpse needs --effect-agents to derive its edge subgraphs")
        if query.reference is None:
            raise ModelError("fpse needs --ref-action")
        g, g_star = action_subgraph_pair(scm, args.agent, args.time, query.effect_agents)
        est = estimate_fpse(
            scm, g, g_star, ActionVar(args.agent, args.time), args.action,
            query.reference, query.outcome, query.samples, query.seed,
        )
    else:
        raise ModelError(f"kind {args.kind!r} is not a Monte Carlo estimator; use the oracle command")
    print(json.dumps({"value": est.value, "se": est.se, "H": est.samples, "seed": query.seed}))
    return 0


def cmd_oracle(args) -> int:
    scm = build_scm(*load_model(args.model))
    kind = KIND_ALIASES[args.kind]
    query = _query_from_args(args, scm)
    common = dict(outcome=query.outcome, cell_budget=args.budget)
    if args.check_prop_fpse_pse:
        if not query.effect_agents or query.reference is None:
            raise ModelError("--check-prop-fpse-pse needs --effect-agents and --ref-action")
        x_var = ActionVar(args.agent, args.time)
        g, _ = action_subgraph_pair(scm, args.agent, args.time, query.effect_agents)
        pse = exact_query(scm, "pse", x_var=x_var, x=query.alternative,
                          x_ref=query.reference, g=g, **common)
        fpse = exact_query(scm, "fpse", x_var=x_var, x=query.reference, x_ref=query.alternative,
                           g=complement_edges(scm, g), g_star=frozenset(), **common)
        tce = exact_query(scm, "tce", x_var=x_var, x=query.alternative,
                          x_ref=query.reference, **common)
        print(json.dumps({"pse": pse, "fpse_plus_tce": fpse + tce, "fpse": fpse, "tce": tce}))
        return 0
    if kind in ("tcfe", "cf_ase", "cf_pse", "ase"):
        value = exact_query(
            scm, kind, trajectory=query.trajectory, agent=query.agent, t=query.t,
            alternative=query.alternative, reference=query.reference,
            effect_agents=query.effect_agents, **common,
        )
    elif kind in ("fpse", "cf_fpse"):
        if not query.effect_agents:
            raise ModelError(f"{args.kind} needs --effect-agents to derive its edge subgraphs")
        g, g_star = action_subgraph_pair(scm, query.agent, query.t, query.effect_agents)
        x_var = ActionVar(query.agent, query.t)
        if kind == "fpse":
            value = exact_query(scm, "fpse", x_var=x_var, x=query.alternative,
                                x_ref=query.reference, g=g, g_star=g_star, **common)
        else:
            value = exact_query(scm, "cf_fpse", trajectory=query.trajectory, x_var=x_var,
                                x=query.alternative, g=g, g_star=g_star, **common)
    elif kind == "tce":
        value = exact_query(scm, "tce", x_var=ActionVar(query.agent, query.t),
                            x=query.alternative, x_ref=query.reference, **common)
    else:
        value = exact_query(scm, "pse", x_var=ActionVar(query.agent, query.t),
                            x=query.alternative, x_ref=query.reference,
                            g=action_subgraph_pair(scm, query.agent, query.t, query.effect_agents)[0],
                            **common)
    print(json.dumps({"value": value}))
    return 0


def cmd_experiment(args) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    name = doc.pop("experiment", None)
    if name is None:
        raise ModelError("experiment config needs an 'experiment' field")
    if args.seed is not None:
        doc["seed"] = args.seed
    elif "seed" not in doc:
        doc["seed"] = _seed_from(args)
    if args.out:
        doc["out_dir"] = args.out
    if args.threads:
        doc["threads"] = args.threads
    if args.paper_scale:
        doc["paper_scale"] = True
    for key in ("mu_grid", "epsilon_grid", "ordering_variants"):
        if key in doc:
            doc[key] = tuple(doc[key])
    config = ExperimentConfig(**doc)
    if config.paper_scale:
        print("warning: paper-scale profile selected; this runs for hours", file=sys.stderr)
    summary = run_experiment(name, config)
    print(json.dumps({"summary": str(Path(config.out_dir) / f"{name}_summary.json"),
                      "csv": summary["csv"]}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ase-lab",
        description="Counterfactual effect propagation analysis for multi-agent MDPs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_query_flags(p, with_samples=True):
        p.add_argument("--model", required=True, help="model JSON file")
        p.add_argument("--kind", required=True, choices=sorted(KIND_ALIASES))
        p.add_argument("--trajectory", help="trajectory JSON file (counterfactual kinds)")
        p.add_argument("--agent", type=int, required=True, help="acting agent index (0-based)")
        p.add_argument("--time", type=int, required=True, help="acting time step")
        p.add_argument("--action", required=True, help="alternative action")
        p.add_argument("--ref-action", help="reference action (interventional kinds)")
        p.add_argument("--effect-agents", help="comma-separated effect agent indexes")
        p.add_argument("--outcome", required=True,
                       help="final_state==<id> or state[t]==<id>")
        p.add_argument("--seed", type=int, help="RNG seed (default: $ASE_LAB_SEED or 0)")
        if with_samples:
            p.add_argument("--samples", type=int, default=1000, help="posterior sample budget")

    p_effect = sub.add_parser("effect", help="Monte Carlo effect estimate")
    add_query_flags(p_effect)
    p_effect.set_defaults(fn=cmd_effect)

    p_oracle = sub.add_parser("oracle", help="exact value by noise-cell enumeration")
    add_query_flags(p_oracle)
    p_oracle.add_argument("--budget", type=int, default=10_000_000, help="cell budget")
    p_oracle.add_argument("--check-prop-fpse-pse", action="store_true",
                          help="print both sides of the path-effect decomposition")
    p_oracle.set_defaults(fn=cmd_oracle)

    p_exp = sub.add_parser("experiment", help="run an experiment from a config file")
    p_exp.add_argument("--config", required=True, help="experiment config JSON")
    p_exp.add_argument("--out", help="output directory (overrides config)")
    p_exp.add_argument("--seed", type=int, help="seed override")
    p_exp.add_argument("--threads", type=int, default=os.cpu_count(),
                       help="worker threads for query-level parallelism")
    p_exp.add_argument("--paper-scale", action="store_true",
                       help="use the full-size experiment profile")
    p_exp.set_defaults(fn=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ZeroProbabilityEvidence as exc:
        return _fail(EXIT_ZERO_PROB, str(exc))
    except CellBudgetExceeded as exc:
        code = _fail(EXIT_BUDGET, str(exc))
        if exc.required is not None:
            print(json.dumps({"required_cells": exc.required}), file=sys.stderr)
        return code
    except (ModelError, FileNotFoundError, KeyError, ValueError, TypeError) as exc:
        return _fail(EXIT_VALIDATION, f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
