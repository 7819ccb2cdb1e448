"""Loading and saving models and trajectories in the JSON file schema.

The JSON document describes a finite MMDP plus joint policy and orderings:

    {
      "states": ["s", "v0", "v1"],
      "agents": [{"name": "a1", "actions": ["0", "1"]}, ...],
      "turn_based": true,
      "horizon": 1,
      "initial": {"s": 1.0},
      "transition": {"s": {"0,0": {"v0": 1.0}, ...}},
      "policies": [{"s": {"0": 0.5, "1": 0.5}},
                   {"s|0": {"0": 1.0}, "s|1": {"0": 0.2, "1": 0.8}}],
      "orderings": {"states": [...], "actions": [[...], ...],
                    "overrides": {"S1": [...]}}
    }

Joint-action keys join the agents' actions with ","; turn-based policy rows
for later movers are keyed "state|a0,...,a_{i-1}".  State and action labels
are strings and must not contain "," or "|".  A policy entry may instead be
{"by_time": [table_t0, table_t1, ...]} for time-indexed behavior.
Trajectories are stored as {"states": [...], "actions": [["a0","a1"], ...]}.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping

from .model import (
    JointPolicy,
    MmdpSpec,
    ModelError,
    Orderings,
    Trajectory,
    parse_var,
)

RESERVED = (",", "|")


def _check_label(label: Any, what: str) -> str:
    if not isinstance(label, str) or not label:
        raise ModelError(f"{what}: labels must be non-empty strings, got {label!r}")
    if any(ch in label for ch in RESERVED):
        raise ModelError(f"{what}: label {label!r} must not contain ',' or '|'")
    return label


def model_from_dict(doc: Mapping[str, Any]) -> tuple[MmdpSpec, JointPolicy, Orderings]:
    try:
        states = tuple(_check_label(s, "states") for s in doc["states"])
        agents = doc["agents"]
        horizon = int(doc["horizon"])
        initial = {str(k): float(v) for k, v in doc["initial"].items()}
        transition_doc = doc["transition"]
        policies_doc = doc["policies"]
    except KeyError as exc:
        raise ModelError(f"model file is missing required field {exc.args[0]!r}") from None
    turn_based = bool(doc.get("turn_based", False))
    action_sets = tuple(
        tuple(_check_label(a, f"agent {i} actions") for a in agent["actions"])
        for i, agent in enumerate(agents)
    )

    transition: dict[tuple[str, tuple[str, ...]], dict[str, float]] = {}
    for s, by_action in transition_doc.items():
        for action_key, row in by_action.items():
            acts = tuple(action_key.split(","))
            if len(acts) != len(action_sets):
                raise ModelError(f"transition key {action_key!r} has {len(acts)} actions, expected {len(action_sets)}")
            transition[(s, acts)] = {str(k): float(v) for k, v in row.items()}

    if len(policies_doc) != len(action_sets):
        raise ModelError(f"need one policy per agent, got {len(policies_doc)}")

    def parse_table(table: Mapping[str, Mapping[str, Any]]) -> dict:
        out: dict = {}
        for key, row in table.items():
            if "|" in key:
                state, earlier = key.split("|", 1)
                out[(state, tuple(earlier.split(",")))] = {str(a): float(p) for a, p in row.items()}
            else:
                out[key] = {str(a): float(p) for a, p in row.items()}
        return out

    tables = []
    time_indexed = False
    for entry in policies_doc:
        if "by_time" in entry:
            time_indexed = True
            tables.append([parse_table(t) for t in entry["by_time"]])
        else:
            tables.append(parse_table(entry))
    if time_indexed:
        tables = [t if isinstance(t, list) else [t] * horizon for t in tables]
        for t in tables:
            if len(t) != horizon:
                raise ModelError("time-indexed policies need one table per time step")

    spec = MmdpSpec(
        states=states,
        action_sets=action_sets,
        transition=transition,
        horizon=horizon,
        initial_dist=initial,
        turn_based=turn_based,
    )
    policy = JointPolicy.from_tables(tables, time_indexed=time_indexed)

    orderings_doc = doc.get("orderings") or {}
    overrides = {
        parse_var(name): tuple(order)
        for name, order in (orderings_doc.get("overrides") or {}).items()
    }
    orderings = Orderings(
        states=tuple(orderings_doc.get("states", states)),
        actions=tuple(tuple(o) for o in orderings_doc.get("actions", action_sets)),
        overrides=overrides,
    )
    return spec, policy, orderings


def load_model(path: str | Path) -> tuple[MmdpSpec, JointPolicy, Orderings]:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


def trajectory_from_dict(doc: Mapping[str, Any], spec: MmdpSpec) -> Trajectory:
    traj = Trajectory(
        states=tuple(doc["states"]),
        actions=tuple(tuple(a) for a in doc["actions"]),
    )
    if traj.horizon != spec.horizon:
        raise ModelError(f"trajectory has horizon {traj.horizon}, model expects {spec.horizon}")
    state_set = set(spec.states)
    for s in traj.states:
        if s not in state_set:
            raise ModelError(f"trajectory state {s!r} not in the model's state space")
    for joint in traj.actions:
        if len(joint) != spec.num_agents:
            raise ModelError("trajectory joint action arity does not match the model")
        for i, a in enumerate(joint):
            if a not in set(spec.action_sets[i]):
                raise ModelError(f"trajectory action {a!r} not in agent {i}'s action set")
    return traj


def load_trajectory(path: str | Path, spec: MmdpSpec) -> Trajectory:
    with open(path, "r", encoding="utf-8") as fh:
        return trajectory_from_dict(json.load(fh), spec)


def trajectory_to_dict(traj: Trajectory) -> dict:
    return {"states": list(traj.states), "actions": [list(a) for a in traj.actions]}
