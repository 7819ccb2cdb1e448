"""Layered-graph navigation benchmark with six simultaneously moving agents.

Agents start on a single entry node and cross three intermediate columns of
three nodes each before reaching one of three terminal nodes; per step they
move up, down or straight, with out-of-bounds moves resolving to straight.
The goal is an even split: two agents per terminal node.  Each agent acts
randomly with its own probability and otherwise follows a shared crowding
rule that steers surplus agents of an over-occupied node towards adjacent
rows holding fewer than two agents.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ..effects import Outcome
from ..model import (
    JointPolicy,
    MmdpScm,
    MmdpSpec,
    ModelError,
    Orderings,
    StateVar,
    Trajectory,
    build_scm,
)

ACTIONS = ("up", "down", "straight")
N_ROWS = 3
N_COLUMNS = 4  # intermediate columns 1..3 plus the terminal column
INITIAL_STATE = "init"
TARGET_PER_NODE = 2


def default_random_probs(num_agents: int) -> tuple[float, ...]:
    return tuple(0.05 * (i + 1) for i in range(num_agents))


@dataclass(frozen=True)
class GraphEnvConfig:
    num_agents: int = 6
    random_action_probs: tuple[float, ...] | None = None
    action_ordering: tuple[str, str, str] = ACTIONS

    def probs(self) -> tuple[float, ...]:
        p = self.random_action_probs or default_random_probs(self.num_agents)
        if len(p) != self.num_agents:
            raise ModelError("need one random-action probability per agent")
        if any(not 0.0 <= x <= 1.0 for x in p):
            raise ModelError("random-action probabilities must lie in [0, 1]")
        return tuple(p)


def state_id(column: int, rows: tuple[int, ...]) -> str:
    return f"c{column}:" + "".join(str(r) for r in rows)


def parse_state(state: str) -> tuple[int, tuple[int, ...]]:
    if state == INITIAL_STATE:
        raise ModelError("the entry state has no row layout")
    column, digits = state[1:].split(":")
    return int(column), tuple(int(ch) for ch in digits)


def _move(row: int, action: str) -> int:
    # out-of-bounds moves resolve to straight
    if action == "up":
        return row - 1 if row > 0 else row
    if action == "down":
        return row + 1 if row < N_ROWS - 1 else row
    return row


def _entry_move(action: str) -> int:
    return {"up": 0, "straight": 1, "down": 2}[action]


def all_states(num_agents: int) -> tuple[str, ...]:
    import itertools

    out = [INITIAL_STATE]
    for column in range(1, N_COLUMNS + 1):
        for rows in itertools.product(range(N_ROWS), repeat=num_agents):
            out.append(state_id(column, rows))
    return tuple(out)


def crowding_rule(row: int, occupancy: tuple[int, ...]) -> dict[str, float]:
    """Shared policy component for one agent standing on ``row``.

    Nodes holding at most two agents keep everyone moving straight.  On an
    over-occupied node, two stay-shares move straight and the surplus heads
    for adjacent in-bounds rows currently holding fewer than two agents
    (split evenly when both qualify, falling back to straight when neither
    does).
    """
    n_here = occupancy[row]
    if n_here <= TARGET_PER_NODE:
        return {"straight": 1.0}
    surplus = (n_here - TARGET_PER_NODE) / n_here
    dist = {"straight": TARGET_PER_NODE / n_here}
    targets = []
    if row > 0 and occupancy[row - 1] < TARGET_PER_NODE:
        targets.append("up")
    if row < N_ROWS - 1 and occupancy[row + 1] < TARGET_PER_NODE:
        targets.append("down")
    if not targets:
        dist["straight"] += surplus
    else:
        for a in targets:
            dist[a] = surplus / len(targets)
    return dist


def agent_policy_row(agent_row: int, occupancy: tuple[int, ...], p_random: float) -> dict[str, float]:
    dist = {a: p_random / 3.0 for a in ACTIONS}
    for a, q in crowding_rule(agent_row, occupancy).items():
        dist[a] += (1.0 - p_random) * q
    return dist


def build_graph_env(config: GraphEnvConfig = GraphEnvConfig()) -> tuple[MmdpSpec, JointPolicy, Orderings]:
    n = config.num_agents
    probs = config.probs()
    states = all_states(n)

    def transition(state, actions):
        if state == INITIAL_STATE:
            rows = tuple(_entry_move(a) for a in actions)
            return {state_id(1, rows): 1.0}
        column, rows = parse_state(state)
        if column >= N_COLUMNS:
            return {state: 1.0}
        new_rows = tuple(_move(r, a) for r, a in zip(rows, actions))
        return {state_id(column + 1, new_rows): 1.0}

    @lru_cache(maxsize=None)
    def occupancy_of(state: str) -> tuple[int, ...]:
        _, rows = parse_state(state)
        occ = [0] * N_ROWS
        for r in rows:
            occ[r] += 1
        return tuple(occ)

    def policy_rows(agent, t, state, earlier):
        if state == INITIAL_STATE:
            return {a: 1.0 / 3.0 for a in ACTIONS}
        _, rows = parse_state(state)
        return agent_policy_row(rows[agent], occupancy_of(state), probs[agent])

    spec = MmdpSpec(
        states=states,
        action_sets=tuple(ACTIONS for _ in range(n)),
        transition=transition,
        horizon=N_COLUMNS,
        initial_dist={INITIAL_STATE: 1.0},
        turn_based=False,
    )
    policy = JointPolicy(rows=policy_rows)
    orderings = Orderings(
        states=states,
        actions=tuple(config.action_ordering for _ in range(n)),
    )
    return spec, policy, orderings


def build_graph_scm(config: GraphEnvConfig = GraphEnvConfig()) -> MmdpScm:
    return build_scm(*build_graph_env(config))


def is_balanced(state: str) -> bool:
    column, rows = parse_state(state)
    if column != N_COLUMNS:
        return False
    occ = [0] * N_ROWS
    for r in rows:
        occ[r] += 1
    return all(c == TARGET_PER_NODE for c in occ)


def success_states(num_agents: int = 6) -> frozenset:
    return frozenset(s for s in all_states(num_agents) if s != INITIAL_STATE and is_balanced(s))


def success_outcome(num_agents: int = 6) -> Outcome:
    return Outcome(var=StateVar(N_COLUMNS), accepted=success_states(num_agents))


def is_failure(traj: Trajectory) -> bool:
    return not is_balanced(traj.states[-1])
