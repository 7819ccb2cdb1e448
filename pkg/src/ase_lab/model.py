"""Multi-agent MDPs coupled with joint policies, viewed as structural causal models.

An MMDP under a fixed joint policy induces one random variable per state and
per agent action.  Each variable is driven by a scalar uniform noise through a
quantile structural function built from the variable's conditional
distribution and a declared total ordering of its domain.  This construction
is observationally equivalent to the MMDP and makes every structural function
monotone in its noise, which is what licenses the posterior noise sampling
used by the counterfactual estimators.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np

Value = Hashable

NORMALIZATION_TOL = 1e-9


class ModelError(ValueError):
    """Raised when a spec, policy, ordering or query fails validation."""


class ZeroProbabilityEvidence(ValueError):
    """Raised when an observed trajectory has probability zero under the model."""

    def __init__(self, variable: "Var", message: str | None = None):
        self.variable = variable
        super().__init__(message or f"observed value of {variable} has probability 0")


# ---------------------------------------------------------------------------
# Variable identifiers
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class StateVar:
    t: int

    def __str__(self) -> str:
        return f"S{self.t}"


@dataclass(frozen=True, order=True)
class ActionVar:
    agent: int
    t: int

    def __str__(self) -> str:
        return f"A{self.agent}@{self.t}"


Var = StateVar | ActionVar


def parse_var(text: str) -> Var:
    """Parse "S3" or "A1@2" into a variable identifier."""
    if text.startswith("S"):
        return StateVar(int(text[1:]))
    if text.startswith("A") and "@" in text:
        agent, t = text[1:].split("@", 1)
        return ActionVar(int(agent), int(t))
    raise ModelError(f"unrecognized variable name {text!r}")


# ---------------------------------------------------------------------------
# MMDP specification
# ---------------------------------------------------------------------------

TransitionTable = Mapping[tuple[Value, tuple[Value, ...]], Mapping[Value, float]]
TransitionFn = Callable[[Value, tuple[Value, ...]], Mapping[Value, float]]


def _check_dist(dist: Mapping[Value, float], what: str) -> None:
    total = 0.0
    for v, p in dist.items():
        if p < -1e-15 or p > 1 + 1e-12:
            raise ModelError(f"{what}: probability {p} for {v!r} outside [0, 1]")
        total += p
    if abs(total - 1.0) > NORMALIZATION_TOL:
        raise ModelError(f"{what}: row sums to {total}, expected 1")


@dataclass(frozen=True)
class MmdpSpec:
    """Finite multi-agent MDP: states, per-agent actions, transitions, horizon.

    ``transition`` is either an explicit table keyed by ``(state, joint
    action)`` or a callable returning a sparse next-state distribution; the
    callable form is used by the benchmark environments whose full tables
    would be too large to materialize.
    """

    states: tuple[Value, ...]
    action_sets: tuple[tuple[Value, ...], ...]
    transition: TransitionTable | TransitionFn
    horizon: int
    initial_dist: Mapping[Value, float]
    turn_based: bool = False

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ModelError("horizon must be >= 1")
        if not self.states or not self.action_sets:
            raise ModelError("states and action_sets must be non-empty")
        if len(set(self.states)) != len(self.states):
            raise ModelError("duplicate state identifiers")
        for i, acts in enumerate(self.action_sets):
            if not acts or len(set(acts)) != len(acts):
                raise ModelError(f"agent {i}: empty or duplicated action set")
        _check_dist(self.initial_dist, "initial distribution")
        for s in self.initial_dist:
            if s not in set(self.states):
                raise ModelError(f"initial distribution mentions unknown state {s!r}")
        if isinstance(self.transition, Mapping):
            state_set = set(self.states)
            for (s, acts), row in self.transition.items():
                _check_dist(row, f"transition row ({s!r}, {acts!r})")
                if s not in state_set or any(v not in state_set for v in row):
                    raise ModelError(f"transition row ({s!r}, {acts!r}) mentions unknown state")

    @property
    def num_agents(self) -> int:
        return len(self.action_sets)

    def transition_row(self, state: Value, actions: tuple[Value, ...]) -> Mapping[Value, float]:
        if isinstance(self.transition, Mapping):
            try:
                return self.transition[(state, actions)]
            except KeyError:
                raise ModelError(f"no transition row for ({state!r}, {actions!r})") from None
        return self.transition(state, actions)


# ---------------------------------------------------------------------------
# Joint policies
# ---------------------------------------------------------------------------

PolicyFn = Callable[[int, int, Value, tuple[Value, ...]], Mapping[Value, float]]


@dataclass(frozen=True)
class JointPolicy:
    """Per-agent conditional action distributions.

    Row lookup receives ``(agent, t, state, earlier)`` where ``earlier`` holds
    the same-step actions of earlier movers (empty unless the MMDP is
    turn-based).  Stationary policies ignore ``t``.
    """

    rows: PolicyFn

    @staticmethod
    def from_tables(tables: Sequence[Mapping], time_indexed: bool = False) -> "JointPolicy":
        """Build from per-agent dict tables keyed by state or (state, earlier)."""

        def lookup(agent: int, t: int, state: Value, earlier: tuple[Value, ...]):
            table = tables[agent]
            if time_indexed:
                table = table[t]
            key = state if not earlier else (state, earlier)
            try:
                return table[key]
            except KeyError:
                raise ModelError(
                    f"policy of agent {agent} has no row for state {state!r}, earlier {earlier!r}"
                ) from None

        return JointPolicy(rows=lookup)

    def row(self, agent: int, t: int, state: Value, earlier: tuple[Value, ...] = ()) -> Mapping[Value, float]:
        return self.rows(agent, t, state, earlier)


# ---------------------------------------------------------------------------
# Total orderings
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Orderings:
    """Total orderings of every variable family's domain.

    One ordering per state family and one per agent action family, with
    optional per-variable overrides.  Each ordering must be a permutation of
    the corresponding domain.
    """

    states: tuple[Value, ...]
    actions: tuple[tuple[Value, ...], ...]
    overrides: Mapping[Var, tuple[Value, ...]] = field(default_factory=dict)

    def for_var(self, var: Var) -> tuple[Value, ...]:
        if var in self.overrides:
            return tuple(self.overrides[var])
        if isinstance(var, StateVar):
            return self.states
        return self.actions[var.agent]

    def validate_against(self, spec: MmdpSpec) -> None:
        if sorted(map(repr, self.states)) != sorted(map(repr, spec.states)):
            raise ModelError("state ordering is not a permutation of the state space")
        if len(self.actions) != spec.num_agents:
            raise ModelError("need one action ordering per agent")
        for i, (order, acts) in enumerate(zip(self.actions, spec.action_sets)):
            if sorted(map(repr, order)) != sorted(map(repr, acts)):
                raise ModelError(f"agent {i}: action ordering is not a permutation of its action set")
        for var, order in self.overrides.items():
            base = spec.states if isinstance(var, StateVar) else spec.action_sets[var.agent]
            if sorted(map(repr, order)) != sorted(map(repr, base)):
                raise ModelError(f"override ordering for {var} is not a permutation")


# ---------------------------------------------------------------------------
# Trajectories and interventions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    """Realized states s_0..s_h and joint actions a_0..a_{h-1}."""

    states: tuple[Value, ...]
    actions: tuple[tuple[Value, ...], ...]

    def __post_init__(self) -> None:
        if len(self.states) != len(self.actions) + 1:
            raise ModelError("trajectory needs exactly one more state than joint actions")

    @property
    def horizon(self) -> int:
        return len(self.actions)

    def value(self, var: Var) -> Value:
        if isinstance(var, StateVar):
            return self.states[var.t]
        return self.actions[var.t][var.agent]

    def as_assignment(self) -> dict[Var, Value]:
        out: dict[Var, Value] = {}
        for t, s in enumerate(self.states):
            out[StateVar(t)] = s
        for t, joint in enumerate(self.actions):
            for i, a in enumerate(joint):
                out[ActionVar(i, t)] = a
        return out


class InterventionSet(dict):
    """Hard interventions: variable -> fixed value (at most one per variable)."""

    def __init__(self, items: Mapping[Var, Value] | Iterable[tuple[Var, Value]] = ()):
        super().__init__(items)


# ---------------------------------------------------------------------------
# Conditional rows under an ordering
# ---------------------------------------------------------------------------


class Row:
    """One conditional distribution, ordered by the variable's total ordering.

    Stores only the support (values with positive probability), sorted by
    ordering rank, together with cumulative probabilities whose last entry is
    pinned to exactly 1.0.  Quantile evaluation and the CDF bounds used for
    posterior sampling read the same float array, so a noise value drawn from
    ``(P(V < v), P(V <= v)]`` maps back to ``v`` exactly.
    """

    __slots__ = ("values", "ranks", "cum", "_index")

    def __init__(self, dist: Mapping[Value, float], order: Sequence[Value], what: str):
        rank_of = {v: r for r, v in enumerate(order)}
        total = 0.0
        support: list[tuple[int, Value, float]] = []
        for v, p in dist.items():
            if v not in rank_of:
                raise ModelError(f"{what}: value {v!r} not in the variable's domain")
            if p < -1e-15 or p > 1 + 1e-12:
                raise ModelError(f"{what}: probability {p} outside [0, 1]")
            total += p
            if p > 0.0:
                support.append((rank_of[v], v, p))
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise ModelError(f"{what}: row sums to {total}, expected 1")
        if not support:
            raise ModelError(f"{what}: empty support")
        support.sort()
        self.values: tuple[Value, ...] = tuple(v for _, v, _ in support)
        self.ranks: list[int] = [r for r, _, _ in support]
        cum = np.cumsum(np.asarray([p for _, _, p in support], dtype=np.float64) / total)
        cum[-1] = 1.0
        self.cum: np.ndarray = cum
        self._index = {v: i for i, (_, v, _) in enumerate(support)}

    def quantile(self, u: float) -> Value:
        """Smallest value (under the ordering) whose CDF reaches u."""
        return self.values[bisect_left(self.cum, u)]

    def bounds(self, value: Value, rank: int) -> tuple[float, float]:
        """(P(V < value), P(V <= value)) under the ordering; equal off-support."""
        i = self._index.get(value)
        if i is not None:
            lo = float(self.cum[i - 1]) if i > 0 else 0.0
            return lo, float(self.cum[i])
        j = bisect_left(self.ranks, rank)
        lo = float(self.cum[j - 1]) if j > 0 else 0.0
        return lo, lo

    def pmf(self, value: Value) -> float:
        i = self._index.get(value)
        if i is None:
            return 0.0
        return float(self.cum[i] - (self.cum[i - 1] if i > 0 else 0.0))

    def support_cdf_values(self) -> np.ndarray:
        return self.cum


def posterior_noise_value(lo: float, hi: float, r: float) -> float:
    """Map r in [0, 1) to Uniform(lo, hi]; guards against rounding onto lo."""
    u = hi - r * (hi - lo)
    floor = math.nextafter(lo, math.inf)
    if u < floor:
        u = floor
    return u


# ---------------------------------------------------------------------------
# The SCM view
# ---------------------------------------------------------------------------


class MmdpScm:
    """SCM over the state and action variables of an MMDP under a joint policy.

    Variables are evaluated in the fixed topological order
    S_0, A_{0,0}..A_{n-1,0}, S_1, ...  In turn-based mode each action variable
    additionally depends on the same-step actions of earlier movers.  The
    object is immutable after construction and safe to share across workers;
    all randomness is supplied by the caller.
    """

    def __init__(self, spec: MmdpSpec, policy: JointPolicy, orderings: Orderings):
        orderings.validate_against(spec)
        self.spec = spec
        self.policy = policy
        self.orderings = orderings
        self.variables: tuple[Var, ...] = self._build_variable_order()
        self._var_pos = {v: i for i, v in enumerate(self.variables)}
        self._parents: dict[Var, tuple[Var, ...]] = {v: self._parents_of(v) for v in self.variables}
        self._orders: dict[Var, tuple[Value, ...]] = {v: orderings.for_var(v) for v in self.variables}
        self._rank: dict[Var, dict[Value, int]] = {
            v: {x: r for r, x in enumerate(order)} for v, order in self._orders.items()
        }
        self._row_cache: dict[tuple[Var, tuple[Value, ...]], Row] = {}

    # ----- structure ------------------------------------------------------

    def _build_variable_order(self) -> tuple[Var, ...]:
        out: list[Var] = [StateVar(0)]
        for t in range(self.spec.horizon):
            out.extend(ActionVar(i, t) for i in range(self.spec.num_agents))
            out.append(StateVar(t + 1))
        return tuple(out)

    def _parents_of(self, var: Var) -> tuple[Var, ...]:
        if isinstance(var, StateVar):
            if var.t == 0:
                return ()
            return (StateVar(var.t - 1),) + tuple(
                ActionVar(i, var.t - 1) for i in range(self.spec.num_agents)
            )
        parents: tuple[Var, ...] = (StateVar(var.t),)
        if self.spec.turn_based:
            parents += tuple(ActionVar(j, var.t) for j in range(var.agent))
        return parents

    def parents(self, var: Var) -> tuple[Var, ...]:
        return self._parents[var]

    def domain(self, var: Var) -> tuple[Value, ...]:
        if isinstance(var, StateVar):
            return self.spec.states
        return self.spec.action_sets[var.agent]

    def ordering(self, var: Var) -> tuple[Value, ...]:
        return self._orders[var]

    def var_index(self, var: Var) -> int:
        return self._var_pos[var]

    def graph_edges(self) -> tuple[tuple[Var, Var], ...]:
        return tuple((p, v) for v in self.variables for p in self._parents[v])

    def out_edges(self, var: Var) -> tuple[tuple[Var, Var], ...]:
        return tuple((var, v) for v in self.variables if var in self._parents[v])

    def downstream_action_vars(self, agent: int, t: int) -> tuple[ActionVar, ...]:
        """Action variables that are causal descendants of A_{agent,t}.

        All later-step actions; in turn-based mode also the same-step actions
        of later movers.
        """
        out: list[ActionVar] = []
        if self.spec.turn_based:
            out.extend(ActionVar(j, t) for j in range(agent + 1, self.spec.num_agents))
        for t2 in range(t + 1, self.spec.horizon):
            out.extend(ActionVar(j, t2) for j in range(self.spec.num_agents))
        return tuple(out)

    # ----- conditional rows -----------------------------------------------

    def row(self, var: Var, pa: tuple[Value, ...]) -> Row:
        key = (var, pa)
        cached = self._row_cache.get(key)
        if cached is not None:
            return cached
        if isinstance(var, StateVar):
            if var.t == 0:
                dist = self.spec.initial_dist
            else:
                dist = self.spec.transition_row(pa[0], tuple(pa[1:]))
        else:
            dist = self.policy.row(var.agent, var.t, pa[0], tuple(pa[1:]))
        row = Row(dist, self._orders[var], what=f"{var} | {pa!r}")
        self._row_cache[key] = row
        return row

    def quantile_eval(self, var: Var, pa: tuple[Value, ...], u: float) -> Value:
        """inf{v : P(V <= v | pa) >= u} under the variable's ordering."""
        if not 0.0 < u <= 1.0:
            raise ModelError(f"noise value {u} outside (0, 1]")
        return self.row(var, pa).quantile(u)

    def cdf_bounds(self, var: Var, pa: tuple[Value, ...], value: Value) -> tuple[float, float]:
        return self.row(var, pa).bounds(value, self._rank[var][value])

    # ----- simulation, abduction, intervention -----------------------------

    def _eval(self, var: Var, pa: tuple[Value, ...], u: float) -> Value:
        return self.row(var, pa).quantile(u)

    def _assignment_to_trajectory(self, values: Mapping[Var, Value]) -> Trajectory:
        h, n = self.spec.horizon, self.spec.num_agents
        states = tuple(values[StateVar(t)] for t in range(h + 1))
        actions = tuple(tuple(values[ActionVar(i, t)] for i in range(n)) for t in range(h))
        return Trajectory(states=states, actions=actions)

    def simulate_assignment(
        self,
        noise: Mapping[Var, float],
        interventions: Mapping[Var, Value] | None = None,
        prefix: Mapping[Var, Value] | None = None,
    ) -> dict[Var, Value]:
        """Evaluate all variables under the given noise and hard interventions.

        ``prefix`` supplies already-known values for an initial segment of the
        variable order (an optimization for counterfactual worlds that share
        the factual past); it must be consistent with the noise.
        """
        do = interventions or {}
        values: dict[Var, Value] = {}
        for var in self.variables:
            if var in do:
                values[var] = do[var]
            elif prefix is not None and var in prefix:
                values[var] = prefix[var]
            else:
                pa = tuple(values[p] for p in self._parents[var])
                values[var] = self._eval(var, pa, noise[var])
        return values

    def simulate_with_noise(
        self,
        noise: Mapping[Var, float],
        interventions: Mapping[Var, Value] | None = None,
    ) -> Trajectory:
        return self._assignment_to_trajectory(self.simulate_assignment(noise, interventions))

    def sample_trajectory(self, rng: np.random.Generator) -> tuple[Trajectory, dict[Var, float]]:
        """Draw one trajectory together with the noise that produced it."""
        noise = {var: 1.0 - rng.random() for var in self.variables}
        return self.simulate_with_noise(noise), noise

    def posterior_intervals(self, trajectory: Trajectory) -> dict[Var, tuple[float, float]]:
        """Per-variable noise intervals (lo, hi] consistent with the trajectory.

        Raises ZeroProbabilityEvidence naming the first variable whose
        observed value is impossible given its observed parents.
        """
        if trajectory.horizon != self.spec.horizon:
            raise ModelError("trajectory horizon does not match the model")
        assign = trajectory.as_assignment()
        out: dict[Var, tuple[float, float]] = {}
        for var in self.variables:
            pa = tuple(assign[p] for p in self._parents[var])
            lo, hi = self.cdf_bounds(var, pa, assign[var])
            if not hi > lo:
                raise ZeroProbabilityEvidence(var)
            out[var] = (lo, hi)
        return out

    def sample_posterior_noise(
        self, trajectory: Trajectory, rng: np.random.Generator
    ) -> dict[Var, float]:
        """Sample noise from its posterior given the trajectory.

        Under the quantile construction the posterior factorizes per variable
        and is uniform on the CDF preimage of the observed value.
        """
        intervals = self.posterior_intervals(trajectory)
        return {
            var: posterior_noise_value(lo, hi, rng.random())
            for var, (lo, hi) in intervals.items()
        }

    # ----- observational fidelity ------------------------------------------

    def implied_pmf(self, var: Var, pa: tuple[Value, ...]) -> dict[Value, float]:
        """Probability mass the quantile function assigns to each domain value."""
        row = self.row(var, pa)
        return {v: row.pmf(v) for v in self.domain(var)}


def build_scm(spec: MmdpSpec, policy: JointPolicy, orderings: Orderings) -> MmdpScm:
    """Couple an MMDP with a joint policy as an SCM with quantile structural functions."""
    return MmdpScm(spec, policy, orderings)
