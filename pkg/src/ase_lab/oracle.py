"""Exact computation of effect queries by enumerating noise cells.

Every structural function here is driven by a scalar noise whose domain can
be partitioned into finitely many cells (intervals of the unit interval for
quantile functions, explicit atoms for hand-supplied tables) on which the
function's output is constant for every parent configuration.  Enumerating
the product of these per-variable partitions and evaluating the relevant
worlds cell by cell yields exact values for all counterfactual and
interventional quantities on small models; the Monte Carlo estimators are
tested against these values.

Only feasible for toy models: the oracle is a test instrument, not a
production evaluator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import worlds
from .dense import DenseScm, dense_view, simulate_batch
from .effects import EffectQuery, Outcome, _validate_query
from .model import (
    ActionVar,
    MmdpScm,
    ModelError,
    StateVar,
    Trajectory,
    Value,
    Var,
    ZeroProbabilityEvidence,
)

DEFAULT_CELL_BUDGET = 10_000_000
_CHUNK = 1 << 17


class CellBudgetExceeded(RuntimeError):
    """The noise-cell product is larger than the configured budget."""

    def __init__(self, required: int | None, budget: int):
        self.required = required
        self.budget = budget
        if required is None:
            msg = f"model too large to compile enumeration tables (budget {budget})"
        else:
            msg = f"enumeration needs {required} cells, budget is {budget}"
        super().__init__(msg)


# ---------------------------------------------------------------------------
# Counterfactual factor probabilities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CondTable:
    """A conditional probability table with a total ordering of its domain."""

    ordering: tuple[Value, ...]
    rows: Mapping[tuple, Mapping[Value, float]]

    def cdf_bounds(self, value: Value, pa: tuple) -> tuple[float, float]:
        """(P(X < value | pa), P(X <= value | pa)) under the ordering."""
        row = self.rows[pa]
        lo = 0.0
        for v in self.ordering:
            p = row.get(v, 0.0)
            if v == value:
                return lo, lo + p
            lo += p
        raise ModelError(f"value {value!r} not in the ordering")


def ctf_factor_prob(table: CondTable, pairs: Sequence[tuple[Value, tuple]]) -> float:
    """Probability that X_{pa^i} = x^i holds jointly for all given pairs.

    For a variable that is noise-monotonic w.r.t. the table's ordering, the
    joint counterfactual probability is the measure of the intersection of
    the per-pair CDF preimage intervals:
    max(0, min_i P(X <= x^i | pa^i) - max_i P(X < x^i | pa^i)).
    """
    if not pairs:
        raise ModelError("ctf_factor_prob needs at least one (value, parents) pair")
    lo = 0.0
    hi = 1.0
    for value, pa in pairs:
        below, at = table.cdf_bounds(value, pa)
        lo = max(lo, below)
        hi = min(hi, at)
    return max(0.0, hi - lo)


# ---------------------------------------------------------------------------
# Atom models
# ---------------------------------------------------------------------------


class AtomScm:
    """A model whose noises have finite atom decompositions.

    Built from a quantile SCM by cutting each variable's unit interval at the
    union of its CDF values, or by overriding chosen variables with explicit
    atom probabilities and function tables (used for counterfactual
    non-identifiability witnesses).  Overridden variables need not be
    noise-monotonic.
    """

    def __init__(self, scm: MmdpScm, dense: DenseScm, atoms: dict[Var, np.ndarray],
                 func: dict[Var, np.ndarray], breakpoints: dict[Var, np.ndarray | None]):
        self.scm = scm
        self.dense = dense
        self.variables = scm.variables
        self.atoms = atoms
        self.func = func
        self.breakpoints = breakpoints

    @staticmethod
    def from_scm(scm: MmdpScm) -> "AtomScm":
        dense = dense_view(scm)
        if dense is None:
            raise CellBudgetExceeded(required=None, budget=DEFAULT_CELL_BUDGET)
        atoms: dict[Var, np.ndarray] = {}
        func: dict[Var, np.ndarray] = {}
        breaks: dict[Var, np.ndarray | None] = {}
        for var in scm.variables:
            cdf = dense.tables[var].cdf
            edges = np.unique(cdf)
            edges = edges[edges > 0.0]
            atoms[var] = np.diff(np.concatenate(([0.0], edges)))
            func[var] = (cdf[:, None, :] < edges[None, :, None]).sum(axis=2).astype(np.int64)
            breaks[var] = edges
        return AtomScm(scm, dense, atoms, func, breaks)

    def override_variable(
        self,
        var: Var,
        atom_probs: Sequence[float],
        rows: Mapping[tuple, Sequence[Value]],
    ) -> "AtomScm":
        """Replace one variable's noise mechanism with an explicit atom table.

        ``rows`` maps each parent-value tuple to the variable's output per
        atom, in atom order.  The caller is responsible for keeping the
        observational distribution intact when that matters.
        """
        probs = np.asarray(atom_probs, dtype=np.float64)
        if abs(float(probs.sum()) - 1.0) > 1e-9 or (probs < 0).any():
            raise ModelError("atom probabilities must be non-negative and sum to 1")
        table = self.dense.tables[var]
        import itertools

        parent_values = [self.dense.active[p] for p in table.parents]
        matrix = np.empty((table.n_cfgs, len(probs)), dtype=np.int64)
        for idx, pa in enumerate(itertools.product(*parent_values)):
            try:
                outputs = rows[pa]
            except KeyError:
                raise ModelError(f"override for {var} is missing parent configuration {pa!r}") from None
            if len(outputs) != len(probs):
                raise ModelError(f"override row {pa!r} has {len(outputs)} outputs, expected {len(probs)}")
            matrix[idx] = [self.dense.encode(var, v) for v in outputs]
        atoms = dict(self.atoms)
        func = dict(self.func)
        breaks = dict(self.breakpoints)
        atoms[var] = probs
        func[var] = matrix
        breaks[var] = None
        return AtomScm(self.scm, self.dense, atoms, func, breaks)

    # ----- engine interface -------------------------------------------------

    def parents_of(self, var: Var):
        return self.dense.tables[var].parents

    def strides_of(self, var: Var):
        return self.dense.tables[var].strides

    def eval_batch(self, var: Var, cfg_idx: np.ndarray, noise: np.ndarray) -> np.ndarray:
        return self.func[var][cfg_idx, noise]

    # ----- distributions ----------------------------------------------------

    def factual_cfg(self, var: Var, assign_codes: Mapping[Var, int]) -> int:
        table = self.dense.tables[var]
        idx = 0
        for p, stride in zip(table.parents, table.strides):
            idx += assign_codes[p] * stride
        return idx

    def observational_pmf(self, var: Var, pa: tuple[Value, ...]) -> dict[Value, float]:
        """Marginal of the variable given parent values, implied by the atoms."""
        import itertools

        table = self.dense.tables[var]
        parent_values = [self.dense.active[p] for p in table.parents]
        idx = 0
        for values, stride, v in zip(parent_values, table.strides, pa):
            idx += values.index(v) * stride
        out: dict[Value, float] = {}
        row = self.func[var][idx]
        for code, p in zip(row, self.atoms[var]):
            v = self.dense.decode(var, int(code))
            out[v] = out.get(v, 0.0) + float(p)
        return out

    def posterior_atoms(self, trajectory: Trajectory) -> dict[Var, np.ndarray]:
        """Atom indexes consistent with the trajectory, per variable.

        Under independent noises the posterior factorizes per variable, so
        conditioning is exactly the restriction of each variable's atoms to
        those reproducing its observed value under its observed parents.
        """
        assign = trajectory.as_assignment()
        codes = self.dense.encode_assignment(assign)
        out: dict[Var, np.ndarray] = {}
        for var in self.variables:
            cfg = self.factual_cfg(var, codes)
            keep = np.nonzero(self.func[var][cfg] == codes[var])[0]
            if keep.size == 0:
                raise ZeroProbabilityEvidence(var)
            out[var] = keep
        return out


# ---------------------------------------------------------------------------
# Cell partitions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseCellPartition:
    """Product partition of the joint noise space of a model."""

    atom_probs: dict[Var, np.ndarray]
    breakpoints: dict[Var, np.ndarray | None]

    @property
    def cell_count(self) -> int:
        n = 1
        for p in self.atom_probs.values():
            n *= len(p)
        return n

    def variable_masses(self, var: Var) -> np.ndarray:
        return self.atom_probs[var]


def enumerate_cells(model: MmdpScm | AtomScm, cell_budget: int = DEFAULT_CELL_BUDGET) -> NoiseCellPartition:
    """Exhaustive product partition; errors if it exceeds the cell budget."""
    atom = model if isinstance(model, AtomScm) else AtomScm.from_scm(model)
    total = 1
    for var in atom.variables:
        total *= len(atom.atoms[var])
    if total > cell_budget:
        raise CellBudgetExceeded(required=total, budget=cell_budget)
    return NoiseCellPartition(atom_probs=dict(atom.atoms), breakpoints=dict(atom.breakpoints))


# ---------------------------------------------------------------------------
# Exact queries
# ---------------------------------------------------------------------------

CONDITIONAL_KINDS = ("tcfe", "cf_ase", "cf_pse", "cf_fpse")
INTERVENTIONAL_KINDS = ("ase", "fpse", "pse", "tce")
ALL_KINDS = CONDITIONAL_KINDS + INTERVENTIONAL_KINDS


def _product_iterator(sizes: Sequence[int], chunk: int):
    """Yield mixed-radix digit arrays covering range(prod(sizes)) in chunks."""
    total = 1
    for s in sizes:
        total *= s
    strides = []
    acc = 1
    for s in reversed(sizes):
        strides.append(acc)
        acc *= s
    strides.reverse()
    for lo in range(0, total, chunk):
        base = np.arange(lo, min(lo + chunk, total), dtype=np.int64)
        yield [(base // stride) % size for stride, size in zip(strides, sizes)]


def exact_query(
    model: MmdpScm | AtomScm,
    kind: str,
    *,
    trajectory: Trajectory | None = None,
    agent: int | None = None,
    t: int | None = None,
    alternative: Value | None = None,
    reference: Value | None = None,
    effect_agents=None,
    outcome: Outcome,
    g: frozenset | None = None,
    g_star: frozenset | None = None,
    x_var: Var | None = None,
    x: Value | None = None,
    x_ref: Value | None = None,
    cell_budget: int = DEFAULT_CELL_BUDGET,
) -> float:
    """Exact value of the requested effect kind by noise-cell enumeration.

    Action-centric kinds (tcfe, cf_ase, cf_pse, ase) take ``agent``/``t``/
    ``alternative`` (plus ``reference`` for ase); subgraph kinds (fpse,
    cf_fpse, pse) take ``x_var``/``x``(/``x_ref``) and edge subgraphs; tce
    takes ``x_var``/``x``/``x_ref``.
    """
    if kind not in ALL_KINDS:
        raise ModelError(f"unknown effect kind {kind!r}")
    atom = model if isinstance(model, AtomScm) else AtomScm.from_scm(model)
    scm = atom.scm
    dense = atom.dense
    conditional = kind in CONDITIONAL_KINDS

    if kind in ("tcfe", "cf_ase", "cf_pse", "ase"):
        if agent is None or t is None or alternative is None:
            raise ModelError(f"kind {kind!r} needs agent, t and alternative")
        query = EffectQuery(
            agent=agent, t=t, alternative=alternative, outcome=outcome, samples=1, seed=0,
            trajectory=trajectory, reference=reference, effect_agents=effect_agents,
        )
        _validate_query(
            scm, query,
            needs_trajectory=conditional,
            needs_effect_agents=kind in ("cf_ase", "cf_pse", "ase"),
            needs_reference=kind == "ase",
        )
        acting = ActionVar(agent, t)
    else:
        if x_var is None or x is None:
            raise ModelError(f"kind {kind!r} needs x_var and x")
        if kind in ("fpse", "pse", "tce") and x_ref is None:
            raise ModelError(f"kind {kind!r} needs x_ref")
        if x_var not in set(scm.variables):
            raise ModelError(f"unknown variable {x_var}")
        acting = None
    if kind in ("fpse", "cf_fpse"):
        if g is None or g_star is None:
            raise ModelError(f"kind {kind!r} needs edge subgraphs g and g_star")
        worlds.validate_subgraphs(scm, g, g_star)
    if kind == "pse" and g is None:
        raise ModelError("kind 'pse' needs the effect subgraph g")
    if conditional and trajectory is None:
        raise ModelError(f"kind {kind!r} conditions on a trajectory")

    total = 1
    for var in atom.variables:
        total *= len(atom.atoms[var])
    if total > cell_budget:
        raise CellBudgetExceeded(required=total, budget=cell_budget)

    if conditional:
        atom_ids = atom.posterior_atoms(trajectory)
        tau_codes = dense.encode_assignment(trajectory.as_assignment())
        base = 1.0 if outcome.matches(trajectory.value(outcome.var)) else 0.0
    else:
        atom_ids = {var: np.arange(len(atom.atoms[var])) for var in atom.variables}
        tau_codes = None
        base = 0.0

    out_var = outcome.var
    lut = dense.value_mask(out_var, outcome.accepted)

    def encode(var: Var, value: Value) -> int:
        return dense.encode(var, value)

    primary_sum: list[float] = []
    reference_sum: list[float] = []
    mass_sum: list[float] = []
    sizes = [len(atom_ids[var]) for var in atom.variables]

    for digits in _product_iterator(sizes, _CHUNK):
        noise = {
            var: atom_ids[var][dig]
            for var, dig in zip(atom.variables, digits)
        }
        probs = np.ones(len(digits[0]), dtype=np.float64)
        for var in atom.variables:
            probs *= atom.atoms[var][noise[var]]
        sim = lambda do=None, splices=(): simulate_batch(atom, noise, do, splices)

        if kind == "tcfe":
            world = worlds.run_tcfe(sim, acting, encode(acting, alternative))
            hits = lut[world[out_var]]
            primary_sum.append(float(np.dot(probs, hits)))
        elif kind == "cf_ase":
            world = worlds.run_cf_ase(sim, scm, acting, encode(acting, alternative), effect_agents, tau_codes)
            primary_sum.append(float(np.dot(probs, lut[world[out_var]])))
        elif kind == "cf_pse":
            world = worlds.run_cf_pse(sim, scm, acting, encode(acting, alternative), effect_agents, tau_codes)
            primary_sum.append(float(np.dot(probs, lut[world[out_var]])))
        elif kind == "cf_fpse":
            world = worlds.run_cf_fpse(
                sim, x_var, encode(x_var, x), tau_codes[x_var], g, g_star
            )
            primary_sum.append(float(np.dot(probs, lut[world[out_var]])))
        elif kind == "ase":
            primary, ref_world = worlds.run_ase(
                sim, scm, acting, encode(acting, alternative), encode(acting, reference), effect_agents
            )
            primary_sum.append(float(np.dot(probs, lut[primary[out_var]])))
            reference_sum.append(float(np.dot(probs, lut[ref_world[out_var]])))
        elif kind == "fpse":
            primary, ref_world = worlds.run_fpse(sim, x_var, encode(x_var, x), encode(x_var, x_ref), g, g_star)
            primary_sum.append(float(np.dot(probs, lut[primary[out_var]])))
            reference_sum.append(float(np.dot(probs, lut[ref_world[out_var]])))
        elif kind == "pse":
            primary, ref_world = worlds.run_pse(sim, scm, x_var, encode(x_var, x), encode(x_var, x_ref), g)
            primary_sum.append(float(np.dot(probs, lut[primary[out_var]])))
            reference_sum.append(float(np.dot(probs, lut[ref_world[out_var]])))
        elif kind == "tce":
            primary, ref_world = worlds.run_tce(sim, x_var, encode(x_var, x), encode(x_var, x_ref))
            primary_sum.append(float(np.dot(probs, lut[primary[out_var]])))
            reference_sum.append(float(np.dot(probs, lut[ref_world[out_var]])))
        mass_sum.append(float(probs.sum()))

    mass = math.fsum(mass_sum)
    if conditional:
        if mass <= 0.0:
            raise ZeroProbabilityEvidence(atom.variables[0], "trajectory has probability 0")
        return math.fsum(primary_sum) / mass - base
    return (math.fsum(primary_sum) - math.fsum(reference_sum)) / mass


# ---------------------------------------------------------------------------
# Monotonicity checks
# ---------------------------------------------------------------------------


def function_table_of(scm: MmdpScm, var: Var) -> dict[tuple, tuple[Value, ...]]:
    """Finite table of a quantile structural function, one output per noise cell."""
    import itertools

    atom = AtomScm.from_scm(scm)
    dense = atom.dense
    table = dense.tables[var]
    out: dict[tuple, tuple[Value, ...]] = {}
    for idx, pa in enumerate(itertools.product(*(dense.active[p] for p in table.parents))):
        codes = atom.func[var][idx]
        out[pa] = tuple(dense.decode(var, int(c)) for c in codes)
    return out


def check_noise_monotonic(function_table: Mapping[tuple, Sequence[Value]], ordering: Sequence[Value]) -> bool:
    """True iff every row's outputs are nondecreasing in the noise index."""
    rank = {v: r for r, v in enumerate(ordering)}
    for outputs in function_table.values():
        ranks = [rank[v] for v in outputs]
        if any(a > b for a, b in zip(ranks, ranks[1:])):
            return False
    return True


def check_binary_monotonic(model: MmdpScm | AtomScm, tol: float = 1e-12) -> bool:
    """Monotonicity of a two-variable binary cause-effect model.

    The model's first state variable plays the cause X and its second the
    effect Y; state labels must be interpretable as the integers 0 and 1.
    True iff P(Y_{x1} = 1 and Y_{x2} = 0) = 0 whenever E[Y|x1] <= E[Y|x2],
    with the joint counterfactual computed by atom enumeration.
    """
    atom = model if isinstance(model, AtomScm) else AtomScm.from_scm(model)
    scm = atom.scm
    if len(scm.spec.states) != 2:
        raise ModelError("check_binary_monotonic needs a binary state space")
    y_var = StateVar(1)
    numeric = {v: int(v) for v in scm.spec.states}
    if sorted(numeric.values()) != [0, 1]:
        raise ModelError("states must encode the values 0 and 1")
    dense = atom.dense
    table = dense.tables[y_var]
    probs = atom.atoms[y_var]
    one_codes = {code for code, v in enumerate(dense.active[y_var]) if numeric[v] == 1}

    rows = []
    for cfg in range(table.n_cfgs):
        codes = atom.func[y_var][cfg]
        is_one = np.asarray([c in one_codes for c in codes])
        rows.append((float(np.dot(probs, is_one)), is_one))
    for e1, row1 in rows:
        for e2, row2 in rows:
            if e1 <= e2:
                joint = float(np.dot(probs, row1 & ~row2))
                if joint > tol:
                    return False
    return True
