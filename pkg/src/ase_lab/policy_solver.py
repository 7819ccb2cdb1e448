"""Tabular MDP solving for the treatment agents.

The patient-management problem is solved as a single-agent MDP over the raw
simulator table: reward is collected on arrival (+1 discharge, -1 death, 0
otherwise) and terminal states contribute nothing afterwards.  Policy
iteration with exact policy evaluation produces the deterministic policies
used by both agents; a plain value-iteration solver doubles as an
independent check.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .model import ModelError


@dataclass(frozen=True)
class MdpView:
    """Single-agent view: sparse per-action transition matrices over state ids.

    ``terminal_states`` self-loop in the raw table; their rows are zeroed
    here so the arrival reward is emitted exactly once.
    """

    states: tuple[str, ...]
    actions: tuple[str, ...]
    matrices: tuple[sp.csr_matrix, ...]
    reward: np.ndarray
    gamma: float
    terminal_states: frozenset = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if not (0.0 < self.gamma < 1.0):
            raise ModelError("gamma must lie in (0, 1)")
        index = {s: i for i, s in enumerate(self.states)}
        live = np.ones(len(self.states), dtype=bool)
        for s in self.terminal_states:
            live[index[s]] = False
        for a, m in zip(self.actions, self.matrices):
            rows = np.asarray(m.sum(axis=1)).ravel()
            bad = np.nonzero(live & (np.abs(rows - 1.0) > 1e-9))[0]
            if bad.size:
                raise ModelError(f"action {a!r}: transition row {self.states[bad[0]]!r} is not normalized")


def mdp_view_from_table(
    table: Mapping[str, Mapping[str, Mapping[str, float]]],
    reward_of: Mapping[str, float],
    gamma: float,
    terminal_states: Sequence[str] = (),
) -> MdpView:
    """Compile a nested state -> action -> next-state table into an MdpView."""
    states = tuple(sorted(table.keys()))
    index = {s: i for i, s in enumerate(states)}
    action_set: set[str] = set()
    for row in table.values():
        action_set.update(row.keys())
    actions = tuple(sorted(action_set))
    terminal = frozenset(terminal_states)
    matrices = []
    for a in actions:
        data, rows, cols = [], [], []
        for s, by_action in table.items():
            if s in terminal:
                continue
            row = by_action.get(a)
            if row is None:
                raise ModelError(f"state {s!r} has no row for action {a!r}")
            for s2, p in row.items():
                if p > 0.0:
                    rows.append(index[s])
                    cols.append(index[s2])
                    data.append(p)
        matrices.append(sp.csr_matrix((data, (rows, cols)), shape=(len(states), len(states))))
    reward = np.asarray([reward_of.get(s, 0.0) for s in states], dtype=np.float64)
    return MdpView(
        states=states, actions=actions, matrices=tuple(matrices), reward=reward,
        gamma=gamma, terminal_states=terminal,
    )


@dataclass(frozen=True)
class SolvedPolicy:
    policy: dict[str, str]
    values: dict[str, float]
    iterations: int

    def action_index(self, mdp: MdpView) -> np.ndarray:
        lookup = {a: i for i, a in enumerate(mdp.actions)}
        return np.asarray([lookup[self.policy[s]] for s in mdp.states])


def _q_matrix(mdp: MdpView, values: np.ndarray) -> np.ndarray:
    target = mdp.reward + mdp.gamma * values
    return np.stack([m @ target for m in mdp.matrices], axis=1)


def _evaluate(mdp: MdpView, policy_idx: np.ndarray) -> np.ndarray:
    n = len(mdp.states)
    p_pi = sp.lil_matrix((n, n))
    r_pi = np.zeros(n)
    for a_idx, m in enumerate(mdp.matrices):
        rows = np.nonzero(policy_idx == a_idx)[0]
        if rows.size:
            p_pi[rows] = m[rows]
            r_pi[rows] = (m[rows] @ mdp.reward)
    p_pi = p_pi.tocsr()
    system = sp.identity(n, format="csr") - mdp.gamma * p_pi
    return spsolve(system.tocsc(), r_pi)


def policy_iteration(
    mdp: MdpView,
    tol: float = 1e-10,
    max_iters: int = 1000,
    mode: str = "discounted",
    horizon: int | None = None,
) -> SolvedPolicy:
    """Deterministic optimal policy; ties broken by lowest action index.

    ``mode="finite_horizon"`` runs undiscounted backward induction over
    ``horizon`` steps instead and returns the first-step greedy policy.
    """
    if mode == "finite_horizon":
        if not horizon or horizon < 1:
            raise ModelError("finite-horizon mode needs a positive horizon")
        values = np.zeros(len(mdp.states))
        for _ in range(horizon):
            q = np.stack([m @ (mdp.reward + values) for m in mdp.matrices], axis=1)
            values = q.max(axis=1)
        policy_idx = q.argmax(axis=1)
        return SolvedPolicy(
            policy={s: mdp.actions[a] for s, a in zip(mdp.states, policy_idx)},
            values=dict(zip(mdp.states, values.tolist())),
            iterations=horizon,
        )
    if mode != "discounted":
        raise ModelError(f"unknown mode {mode!r}")

    n = len(mdp.states)
    policy_idx = np.zeros(n, dtype=np.int64)
    previous_values = None
    for iteration in range(1, max_iters + 1):
        values = _evaluate(mdp, policy_idx)
        if previous_values is not None and (values < previous_values - tol).any():
            raise RuntimeError("policy iteration regressed; inconsistent model")
        previous_values = values
        q = _q_matrix(mdp, values)
        best = q.max(axis=1)
        if (best - q[np.arange(n), policy_idx] <= tol).all():
            # stable under one improvement step; collapse ties to the lowest
            # action index so the output is reproducible
            final_idx = (q >= (best - tol)[:, None]).argmax(axis=1)
            return SolvedPolicy(
                policy={s: mdp.actions[a] for s, a in zip(mdp.states, final_idx)},
                values=dict(zip(mdp.states, values.tolist())),
                iterations=iteration,
            )
        policy_idx = q.argmax(axis=1)
    raise RuntimeError(f"policy iteration did not converge within {max_iters} iterations")


def value_iteration(mdp: MdpView, tol: float = 1e-10, max_iters: int = 100_000) -> dict[str, float]:
    """Independent fixed-point solver used to cross-check policy iteration."""
    values = np.zeros(len(mdp.states))
    for _ in range(max_iters):
        new = _q_matrix(mdp, values).max(axis=1)
        delta = np.abs(new - values).max()
        values = new
        if delta < tol * (1 - mdp.gamma):
            return dict(zip(mdp.states, values.tolist()))
    raise RuntimeError("value iteration did not converge")


def save_policy(policy: Mapping[str, str], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"policy": dict(sorted(policy.items()))}, fh, indent=0, sort_keys=True)


def load_policy(path: str | Path) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as fh:
        return dict(json.load(fh)["policy"])
