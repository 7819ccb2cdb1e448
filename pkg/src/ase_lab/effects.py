"""Monte Carlo estimators for counterfactual and interventional effect queries.

Counterfactual estimators follow the abduction / action / prediction recipe:
noise is drawn from its posterior given the observed trajectory, the relevant
worlds are evaluated under that same noise (common random numbers across
worlds of one draw), and outcome hits are averaged.  Interventional
estimators use prior noise.  Small table-backed models are evaluated in
batch; large lazily-specified models fall back to a per-draw loop that
produces bit-identical results for the same seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from . import worlds
from .dense import DenseScm, dense_view, simulate_batch
from .model import (
    ActionVar,
    MmdpScm,
    ModelError,
    StateVar,
    Trajectory,
    Value,
    Var,
    posterior_noise_value,
)


@dataclass(frozen=True)
class Outcome:
    """Predicate over a designated outcome state variable."""

    var: StateVar
    accepted: frozenset

    def matches(self, value: Value) -> bool:
        return value in self.accepted


def outcome_equals(t: int, value: Value) -> Outcome:
    return Outcome(var=StateVar(t), accepted=frozenset([value]))


@dataclass(frozen=True)
class EffectQuery:
    """One effect question about an acting variable A_{agent,t}.

    ``trajectory`` is required for counterfactual kinds and absent for
    interventional ones; ``reference`` is only used by interventional kinds.
    ``effect_agents`` selects the agents whose mediation is measured.
    """

    agent: int
    t: int
    alternative: Value
    outcome: Outcome
    samples: int
    seed: int
    trajectory: Trajectory | None = None
    reference: Value | None = None
    effect_agents: frozenset | None = None

    @property
    def acting(self) -> ActionVar:
        return ActionVar(self.agent, self.t)


@dataclass(frozen=True)
class EffectEstimate:
    """Point estimate with its success count and normal-approximation SE."""

    value: float
    successes: int
    samples: int
    se: float

    def as_dict(self) -> dict:
        return {"value": self.value, "successes": self.successes, "samples": self.samples, "se": self.se}


def _binomial_se(c: int, n: int) -> float:
    p = c / n
    return math.sqrt(p * (1.0 - p) / n)


def _validate_query(scm: MmdpScm, q: EffectQuery, *, needs_trajectory: bool, needs_effect_agents: bool,
                    needs_reference: bool = False) -> None:
    n, h = scm.spec.num_agents, scm.spec.horizon
    if not (0 <= q.agent < n):
        raise ModelError(f"agent index {q.agent} out of range")
    if not (0 <= q.t < h):
        raise ModelError(f"time {q.t} out of range for horizon {h}")
    if q.alternative not in set(scm.spec.action_sets[q.agent]):
        raise ModelError(f"action {q.alternative!r} not in agent {q.agent}'s action set")
    if q.samples < 1:
        raise ModelError("samples must be >= 1")
    if not isinstance(q.outcome.var, StateVar) or not (q.t < q.outcome.var.t <= h):
        raise ModelError("outcome variable must be a state variable after the acting time")
    if not q.outcome.accepted:
        raise ModelError("outcome predicate accepts no values")
    if not set(q.outcome.accepted) <= set(scm.spec.states):
        raise ModelError("outcome predicate mentions unknown states")
    if needs_trajectory and q.trajectory is None:
        raise ModelError("this effect kind conditions on a trajectory")
    if q.trajectory is not None and q.trajectory.horizon != h:
        raise ModelError("trajectory horizon does not match the model")
    if needs_effect_agents:
        if not q.effect_agents:
            raise ModelError("effect-agent set must be non-empty")
        if not set(q.effect_agents) <= set(range(n)):
            raise ModelError("effect-agent set mentions unknown agents")
    if needs_reference and q.reference is None:
        raise ModelError("this effect kind needs a reference action")
    if q.reference is not None and q.reference not in set(scm.spec.action_sets[q.agent]):
        raise ModelError(f"reference action {q.reference!r} not in agent {q.agent}'s action set")


# ---------------------------------------------------------------------------
# Noise columns
# ---------------------------------------------------------------------------


def _noise_matrix(scm: MmdpScm, n_draws: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.random((n_draws, len(scm.variables)))

def _prior_columns(scm: MmdpScm, raw: np.ndarray) -> dict[Var, np.ndarray]:
    return {var: 1.0 - raw[:, k] for k, var in enumerate(scm.variables)}


def _posterior_columns(scm: MmdpScm, trajectory: Trajectory, raw: np.ndarray) -> dict[Var, np.ndarray]:
    intervals = scm.posterior_intervals(trajectory)
    cols: dict[Var, np.ndarray] = {}
    for k, var in enumerate(scm.variables):
        lo, hi = intervals[var]
        col = hi - raw[:, k] * (hi - lo)
        np.maximum(col, math.nextafter(lo, math.inf), out=col)
        cols[var] = col
    return cols


# ---------------------------------------------------------------------------
# Scalar world evaluation (lazy models)
# ---------------------------------------------------------------------------


def _simulate_scalar(
    scm: MmdpScm,
    noise: Mapping[Var, float],
    do: Mapping[Var, Value] | None = None,
    splices=(),
    prefix: Mapping[Var, Value] | None = None,
    upto: int | None = None,
) -> dict[Var, Value]:
    do = do or {}
    values: dict[Var, Value] = {}
    variables = scm.variables if upto is None else scm.variables[: upto + 1]
    for var in variables:
        if var in do:
            values[var] = do[var]
            continue
        if prefix is not None and var in prefix:
            values[var] = prefix[var]
            continue
        pa = []
        for p in scm.parents(var):
            src = values[p]
            for edges, world in splices:
                if (p, var) in edges:
                    src = world[p]
                    break
            pa.append(src)
        values[var] = scm.row(var, tuple(pa)).quantile(noise[var])
    return values


# ---------------------------------------------------------------------------
# Counterfactual estimators
# ---------------------------------------------------------------------------

Runner = Callable[..., Mapping[Var, object]]


def _counterfactual_estimate(scm: MmdpScm, q: EffectQuery, runner: Runner) -> EffectEstimate:
    tau = q.trajectory
    assert tau is not None
    raw = _noise_matrix(scm, q.samples, q.seed)
    cols = _posterior_columns(scm, tau, raw)
    out_var = q.outcome.var
    base = 1 if q.outcome.matches(tau.value(out_var)) else 0
    dense = dense_view(scm)
    if dense is not None:
        tau_codes = dense.encode_assignment(tau.as_assignment())
        sim = lambda do=None, splices=(): simulate_batch(dense, cols, do, splices)
        world = runner(sim, tau_codes, dense)
        lut = dense.value_mask(out_var, q.outcome.accepted)
        c = int(lut[world[out_var]].sum())
    else:
        assign = tau.as_assignment()
        acting_pos = scm.var_index(q.acting)
        upto = scm.var_index(out_var)
        prefix = {v: assign[v] for v in scm.variables[:acting_pos]}
        relevant = scm.variables[: upto + 1]
        c = 0
        for h in range(q.samples):
            noise = {var: cols[var][h] for var in relevant}
            sim = lambda do=None, splices=(): _simulate_scalar(scm, noise, do, splices, prefix, upto)
            world = runner(sim, assign, None)
            if q.outcome.matches(world[out_var]):
                c += 1
    value = c / q.samples - base
    return EffectEstimate(value=value, successes=c, samples=q.samples, se=_binomial_se(c, q.samples))


def _encode_action(dense: DenseScm | None, var: ActionVar, value: Value):
    return dense.encode(var, value) if dense is not None else value


def estimate_tcfe(scm: MmdpScm, query: EffectQuery) -> EffectEstimate:
    """Total counterfactual effect of the alternative action on the outcome."""
    _validate_query(scm, query, needs_trajectory=True, needs_effect_agents=False)

    def runner(sim, tau_values, dense):
        alt = _encode_action(dense, query.acting, query.alternative)
        return worlds.run_tcfe(sim, query.acting, alt)

    return _counterfactual_estimate(scm, query, runner)


def estimate_cf_ase(scm: MmdpScm, query: EffectQuery) -> EffectEstimate:
    """Counterfactual agent-specific effect through the chosen effect agents."""
    _validate_query(scm, query, needs_trajectory=True, needs_effect_agents=True)

    def runner(sim, tau_values, dense):
        alt = _encode_action(dense, query.acting, query.alternative)
        return worlds.run_cf_ase(
            sim, scm, query.acting, alt, query.effect_agents, tau_values, upto=query.outcome.var
        )

    return _counterfactual_estimate(scm, query, runner)


def estimate_cf_pse(scm: MmdpScm, query: EffectQuery) -> EffectEstimate:
    """Counterfactual path-specific effect excluding non-effect agents' responses."""
    _validate_query(scm, query, needs_trajectory=True, needs_effect_agents=True)

    def runner(sim, tau_values, dense):
        alt = _encode_action(dense, query.acting, query.alternative)
        return worlds.run_cf_pse(
            sim, scm, query.acting, alt, query.effect_agents, tau_values, upto=query.outcome.var
        )

    return _counterfactual_estimate(scm, query, runner)


# ---------------------------------------------------------------------------
# Interventional estimators (prior noise)
# ---------------------------------------------------------------------------


def _difference_estimate(scm: MmdpScm, samples: int, seed: int, outcome: Outcome, pair_runner) -> EffectEstimate:
    raw = _noise_matrix(scm, samples, seed)
    cols = _prior_columns(scm, raw)
    out_var = outcome.var
    dense = dense_view(scm)
    if dense is not None:
        sim = lambda do=None, splices=(): simulate_batch(dense, cols, do, splices)
        primary, reference = pair_runner(sim, dense)
        lut = dense.value_mask(out_var, outcome.accepted)
        hit_p = lut[primary[out_var]]
        hit_r = lut[reference[out_var]]
    else:
        upto = scm.var_index(out_var)
        relevant = scm.variables[: upto + 1]
        hit_p = np.zeros(samples, dtype=bool)
        hit_r = np.zeros(samples, dtype=bool)
        for h in range(samples):
            noise = {var: cols[var][h] for var in relevant}
            sim = lambda do=None, splices=(): _simulate_scalar(scm, noise, do, splices, None, upto)
            primary, reference = pair_runner(sim, None)
            hit_p[h] = outcome.matches(primary[out_var])
            hit_r[h] = outcome.matches(reference[out_var])
    c = int(hit_p.sum())
    diffs = hit_p.astype(np.float64) - hit_r.astype(np.float64)
    value = float(diffs.sum()) / samples
    if samples > 1:
        se = float(np.std(diffs, ddof=1)) / math.sqrt(samples)
    else:
        se = 0.0
    return EffectEstimate(value=value, successes=c, samples=samples, se=se)


def estimate_ase(scm: MmdpScm, query: EffectQuery) -> EffectEstimate:
    """Interventional agent-specific effect relative to a reference action."""
    _validate_query(scm, query, needs_trajectory=False, needs_effect_agents=True, needs_reference=True)

    def pair_runner(sim, dense):
        alt = _encode_action(dense, query.acting, query.alternative)
        ref = _encode_action(dense, query.acting, query.reference)
        return worlds.run_ase(
            sim, scm, query.acting, alt, ref, query.effect_agents, upto=query.outcome.var
        )

    return _difference_estimate(scm, query.samples, query.seed, query.outcome, pair_runner)


def estimate_fpse(
    scm: MmdpScm,
    g: frozenset,
    g_star: frozenset,
    x_var: Var,
    x: Value,
    x_ref: Value,
    outcome: Outcome,
    samples: int,
    seed: int,
) -> EffectEstimate:
    """Fixed path-specific effect for explicit effect/reference edge subgraphs."""
    worlds.validate_subgraphs(scm, g, g_star)
    if samples < 1:
        raise ModelError("samples must be >= 1")
    if x_var not in set(scm.variables):
        raise ModelError(f"unknown variable {x_var}")
    domain = set(scm.domain(x_var))
    if x not in domain or x_ref not in domain:
        raise ModelError("intervention values outside the variable's domain")
    if not isinstance(outcome.var, StateVar) or not (0 < outcome.var.t <= scm.spec.horizon):
        raise ModelError("outcome variable must be a state variable inside the horizon")

    def pair_runner(sim, dense):
        if dense is not None:
            xv = dense.encode(x_var, x)
            xr = dense.encode(x_var, x_ref)
        else:
            xv, xr = x, x_ref
        return worlds.run_fpse(sim, x_var, xv, xr, g, g_star)

    return _difference_estimate(scm, samples, seed, outcome, pair_runner)
