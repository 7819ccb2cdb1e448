from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from ase_lab.model import (
    ActionVar,
    JointPolicy,
    MmdpScm,
    MmdpSpec,
    Orderings,
    StateVar,
    Trajectory,
    build_scm,
)
from ase_lab.modelio import load_model
from ase_lab.oracle import AtomScm

FIXTURES = Path(__file__).parent / "fixtures"


def build_fixture(name: str) -> MmdpScm:
    spec, policy, orderings = load_model(FIXTURES / f"{name}.json")
    return build_scm(spec, policy, orderings)


@pytest.fixture
def m2() -> MmdpScm:
    return build_fixture("m2")


@pytest.fixture
def m2prime() -> MmdpScm:
    return build_fixture("m2prime")


def m2_factual() -> Trajectory:
    return Trajectory(states=("start", "v0"), actions=(("0", "0"),))


def witness_factual() -> Trajectory:
    return Trajectory(states=("s", "x0", "w0"), actions=(("0", "0"), ("0", "0")))


def witness_pair() -> tuple[AtomScm, AtomScm]:
    """(hand-built atom model, its canonical reconstruction), observationally equal.

    The hand-built model replaces the final state's noise mechanism with a
    three-atom table whose first two parent rows follow the classic
    monotone-but-not-noise-monotonic pattern and whose third row breaks the
    comonotone coupling that the quantile construction would impose.
    """
    scm = build_fixture("witness_base")
    canonical = AtomScm.from_scm(scm)
    rows = {}
    for s1 in ("x0", "x1", "x2"):
        for a0 in ("0", "1", "2"):
            for a1 in ("0", "1"):
                if s1 == "x0" and a1 == "0":
                    out = ("w1", "w0", "w0")
                elif s1 == "x0" and a1 == "1":
                    out = ("w0", "w1", "w1")
                else:
                    out = ("w1", "w0", "w1")
                rows[(s1, a0, a1)] = out
    hand = canonical.override_variable(StateVar(2), (0.25, 0.25, 0.5), rows)
    return hand, canonical


def random_mmdp(
    rng: np.random.Generator,
    n_states: int = 3,
    action_counts: tuple[int, ...] = (2, 2),
    horizon: int = 2,
    turn_based: bool = False,
    shuffle_orderings: bool = True,
) -> MmdpScm:
    """Fully random dense MMDP with full-support rows."""
    import itertools

    states = tuple(f"s{i}" for i in range(n_states))
    action_sets = tuple(tuple(str(a) for a in range(k)) for k in action_counts)
    initial = dict(zip(states, rng.dirichlet(np.ones(n_states))))
    transition = {}
    for s in states:
        for acts in itertools.product(*action_sets):
            transition[(s, acts)] = dict(zip(states, rng.dirichlet(np.ones(n_states))))
    tables = []
    for i, acts in enumerate(action_sets):
        table = {}
        for s in states:
            if turn_based and i > 0:
                for earlier in itertools.product(*action_sets[:i]):
                    table[(s, earlier)] = dict(zip(acts, rng.dirichlet(np.ones(len(acts)))))
            else:
                table[s] = dict(zip(acts, rng.dirichlet(np.ones(len(acts)))))
        tables.append(table)
    spec = MmdpSpec(
        states=states,
        action_sets=action_sets,
        transition=transition,
        horizon=horizon,
        initial_dist=initial,
        turn_based=turn_based,
    )
    policy = JointPolicy.from_tables(tables)
    if shuffle_orderings:
        orderings = Orderings(
            states=tuple(str(s) for s in rng.permutation(states)),
            actions=tuple(tuple(str(a) for a in rng.permutation(acts)) for acts in action_sets),
        )
    else:
        orderings = Orderings(states=states, actions=action_sets)
    return build_scm(spec, policy, orderings)


def random_fixture_scm(rng: np.random.Generator) -> MmdpScm:
    """Random enumerable fixture within the oracle-friendly size envelope."""
    shape = rng.integers(0, 3)
    if shape == 0:
        return random_mmdp(rng, n_states=3, action_counts=(2, 2), horizon=2)
    if shape == 1:
        return random_mmdp(rng, n_states=2, action_counts=(2, 2), horizon=3)
    return random_mmdp(rng, n_states=2, action_counts=(3, 2), horizon=2, turn_based=True)


def random_counterfactual_query(rng: np.random.Generator, scm: MmdpScm):
    """(trajectory, agent, t, alternative, effect_agents, outcome) drawn at random."""
    from ase_lab.effects import Outcome

    h, n = scm.spec.horizon, scm.spec.num_agents
    tau, _ = scm.sample_trajectory(rng)
    t = int(rng.integers(0, h))
    agent = int(rng.integers(0, n))
    acts = scm.spec.action_sets[agent]
    factual = tau.value(ActionVar(agent, t))
    alternatives = [a for a in acts if a != factual]
    alt = alternatives[int(rng.integers(0, len(alternatives)))]
    t_y = int(rng.integers(t + 1, h + 1))
    states = list(scm.spec.states)
    k = int(rng.integers(1, len(states)))
    accepted = frozenset(rng.choice(len(states), size=k, replace=False).tolist())
    accepted = frozenset(states[i] for i in accepted)
    subset_size = int(rng.integers(1, n + 1))
    effect_agents = frozenset(rng.choice(n, size=subset_size, replace=False).tolist())
    outcome = Outcome(var=StateVar(t_y), accepted=accepted)
    return tau, agent, t, alt, effect_agents, outcome
