"""Dense table views and the batched world-evaluation engine.

Small table-backed models are compiled into per-variable CDF matrices over
their reachable values so that Monte Carlo draws (and the exact oracle's
noise cells) can be evaluated as whole numpy arrays instead of one Python
loop per draw.  Values inside the engine are local integer codes: the index
of the value in the variable's ordering-sorted reachable set.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .model import ActionVar, MmdpScm, ModelError, StateVar, Value, Var


class DenseUnavailable(RuntimeError):
    """The model is too large (or not table-backed) for dense compilation."""


def reachable_values(scm: MmdpScm) -> dict[Var, tuple[Value, ...]]:
    """Per-variable values that can occur under arbitrary action interventions.

    Action variables may be intervened to anything, so their reachable set is
    the full action set; state reachability is the forward closure of the
    transition supports over all joint actions.
    """
    rank = {var: {v: r for r, v in enumerate(scm.ordering(var))} for var in scm.variables}

    def ordered(var: Var, vals) -> tuple[Value, ...]:
        return tuple(sorted(vals, key=lambda v: rank[var][v]))

    out: dict[Var, tuple[Value, ...]] = {}
    out[StateVar(0)] = ordered(StateVar(0), [v for v, p in scm.spec.initial_dist.items() if p > 0])
    joint_actions = list(itertools.product(*scm.spec.action_sets))
    for t in range(scm.spec.horizon):
        for i in range(scm.spec.num_agents):
            out[ActionVar(i, t)] = ordered(ActionVar(i, t), scm.spec.action_sets[i])
        nxt: set[Value] = set()
        for s in out[StateVar(t)]:
            for acts in joint_actions:
                for v, p in scm.spec.transition_row(s, acts).items():
                    if p > 0:
                        nxt.add(v)
        out[StateVar(t + 1)] = ordered(StateVar(t + 1), nxt)
    return out


@dataclass(frozen=True)
class VarTable:
    """Compiled table of one variable: CDF rows over its reachable values."""

    active: tuple[Value, ...]          # reachable values, sorted by the ordering
    parents: tuple[Var, ...]
    strides: tuple[int, ...]           # mixed-radix strides over parent codes
    n_cfgs: int
    cdf: np.ndarray                    # (n_cfgs, len(active)), last column == 1.0


class DenseScm:
    """Vectorizable view of a small table-backed MmdpScm.

    The CDF matrices reuse the exact floats of the scalar rows, so batched and
    per-draw evaluation produce identical values.
    """

    def __init__(self, scm: MmdpScm, cell_limit: int = 2_000_000):
        self.scm = scm
        self.variables = scm.variables
        self.active = reachable_values(scm)
        self.code: dict[Var, dict[Value, int]] = {
            var: {v: i for i, v in enumerate(vals)} for var, vals in self.active.items()
        }
        self.tables: dict[Var, VarTable] = {}
        for var in self.variables:
            parents = scm.parents(var)
            radices = [len(self.active[p]) for p in parents]
            n_cfgs = 1
            for r in radices:
                n_cfgs *= r
            d = len(self.active[var])
            if n_cfgs * d > cell_limit:
                raise DenseUnavailable(
                    f"{var}: {n_cfgs} parent configurations x {d} values exceeds the dense limit"
                )
            strides = []
            acc = 1
            for r in reversed(radices):
                strides.append(acc)
                acc *= r
            strides.reverse()
            cdf = np.empty((n_cfgs, d), dtype=np.float64)
            for idx, pa in enumerate(itertools.product(*(self.active[p] for p in parents))):
                cdf[idx] = self._expanded_cdf(var, pa)
            self.tables[var] = VarTable(
                active=self.active[var],
                parents=parents,
                strides=tuple(strides),
                n_cfgs=n_cfgs,
                cdf=cdf,
            )

    def _expanded_cdf(self, var: Var, pa: tuple[Value, ...]) -> np.ndarray:
        """CDF over the full active set, copying the floats of the sparse row."""
        row = self.scm.row(var, pa)
        active = self.active[var]
        codes = self.code[var]
        out = np.empty(len(active), dtype=np.float64)
        acc = 0.0
        pos = 0
        sup = [(codes.get(v), i) for i, v in enumerate(row.values)]
        if any(c is None for c, _ in sup):
            raise ModelError(f"{var} | {pa!r}: support leaves the reachable set")
        for j in range(len(active)):
            while pos < len(sup) and sup[pos][0] <= j:
                acc = float(row.cum[sup[pos][1]])
                pos += 1
            out[j] = acc
        return out

    # ----- engine interface -------------------------------------------------

    def parents_of(self, var: Var):
        return self.tables[var].parents

    def strides_of(self, var: Var):
        return self.tables[var].strides

    def eval_batch(self, var: Var, cfg_idx: np.ndarray, noise: np.ndarray) -> np.ndarray:
        """Quantile-evaluate a batch: first active value whose CDF reaches u."""
        rows = self.tables[var].cdf[cfg_idx]
        return (rows < noise[:, None]).sum(axis=1)

    # ----- code conversions -------------------------------------------------

    def encode(self, var: Var, value: Value) -> int:
        try:
            return self.code[var][value]
        except KeyError:
            raise ModelError(f"value {value!r} unreachable for {var}") from None

    def decode(self, var: Var, code: int) -> Value:
        return self.active[var][int(code)]

    def encode_assignment(self, assign: Mapping[Var, Value]) -> dict[Var, int]:
        return {var: self.encode(var, assign[var]) for var in self.variables}

    def value_mask(self, var: Var, accepted) -> np.ndarray:
        """Boolean lookup table over the variable's active codes."""
        lut = np.zeros(len(self.active[var]), dtype=bool)
        for v in accepted:
            i = self.code[var].get(v)
            if i is not None:
                lut[i] = True
        return lut


_UNSET = object()


def dense_view(scm: MmdpScm, cell_limit: int = 2_000_000) -> "DenseScm | None":
    """Compile (and cache) a dense view of the model, or None if infeasible.

    A crude size bound rejects the benchmark-scale models before paying for
    reachability enumeration; genuinely incomplete tables also fall back to
    the per-draw path, which touches only the rows it needs.
    """
    cached = getattr(scm, "_dense_view", _UNSET)
    if cached is not _UNSET:
        return cached
    view = None
    joint = 1
    for acts in scm.spec.action_sets:
        joint *= len(acts)
    if len(scm.spec.states) ** 2 * joint <= cell_limit:
        try:
            view = DenseScm(scm, cell_limit=cell_limit)
        except (DenseUnavailable, ModelError):
            view = None
    scm._dense_view = view
    return view


Splice = tuple[frozenset, Mapping[Var, np.ndarray]]


def simulate_batch(
    model,
    noise: Mapping[Var, np.ndarray],
    do: Mapping[Var, object] | None = None,
    splices: Sequence[Splice] = (),
) -> dict[Var, np.ndarray]:
    """Evaluate every variable of a compiled model over a batch of noises.

    ``model`` is a DenseScm or an oracle atom model: anything exposing
    ``variables``, ``parents_of``, ``strides_of`` and ``eval_batch``.
    ``do`` maps variables to an integer code or a per-draw code array.
    Each splice ``(edges, world)`` redirects the listed parent->child edges to
    read the parent's value from another world's result arrays.
    """
    do = do or {}
    n = None
    for arr in noise.values():
        n = len(arr)
        break
    values: dict[Var, np.ndarray] = {}
    for var in model.variables:
        if var in do:
            v = do[var]
            if np.ndim(v) == 0:
                values[var] = np.full(n, int(v), dtype=np.int64)
            else:
                values[var] = np.asarray(v, dtype=np.int64)
            continue
        parents = model.parents_of(var)
        strides = model.strides_of(var)
        if parents:
            cfg = np.zeros(n, dtype=np.int64)
            for p, stride in zip(parents, strides):
                src = values[p]
                for edges, world in splices:
                    if (p, var) in edges:
                        src = world[p]
                        break
                cfg += src * stride
        else:
            cfg = np.zeros(n, dtype=np.int64)
        values[var] = model.eval_batch(var, cfg, noise[var]).astype(np.int64)
    return values
