"""World construction for each effect kind.

Every quantity here is a functional of a single exogenous noise draw
evaluated in up to three alternative worlds.  The wiring of those worlds
(which variables are held fixed, which are transplanted from another world,
which parent edges are redirected) is defined once in this module and reused
by the Monte Carlo estimators and the exact enumeration oracle: both supply a
``sim(do=..., splices=...)`` callback plus the factual values, and get back
the outcome-variable values of the relevant worlds.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping

from .model import ActionVar, MmdpScm, ModelError, StateVar, Var

Edges = frozenset


def action_subgraph_pair(scm: MmdpScm, agent: int, t: int, effect_agents) -> tuple[Edges, Edges]:
    """Edge subgraphs carrying the effect/reference roles for a given action.

    The effect subgraph collects all outgoing edges of the downstream actions
    of the effect agents, the reference subgraph those of the remaining
    agents.  Under this mapping the fixed path-specific effect coincides with
    the agent-specific effect.
    """
    n_set = set(effect_agents)
    g: set[tuple[Var, Var]] = set()
    g_star: set[tuple[Var, Var]] = set()
    for av in scm.downstream_action_vars(agent, t):
        target = g if av.agent in n_set else g_star
        target.update(scm.out_edges(av))
    return frozenset(g), frozenset(g_star)


def complement_edges(scm: MmdpScm, edges: Edges) -> Edges:
    return frozenset(set(scm.graph_edges()) - set(edges))


def validate_subgraphs(scm: MmdpScm, g: Edges, g_star: Edges) -> None:
    all_edges = set(scm.graph_edges())
    if not set(g) <= all_edges or not set(g_star) <= all_edges:
        raise ModelError("edge subgraph contains edges outside the model graph")
    if set(g) & set(g_star):
        raise ModelError("effect and reference subgraphs must be edge-disjoint")


def split_downstream(
    scm: MmdpScm, agent: int, t: int, effect_agents, upto: Var | None = None
) -> tuple[list[ActionVar], list[ActionVar]]:
    """Downstream action variables split into (effect agents', others').

    ``upto`` drops actions at or after the given variable: interventions on
    non-ancestors of the outcome cannot influence it, so estimators cap the
    intervention set at the outcome variable and stop simulating there.
    """
    n_set = set(effect_agents)
    limit = scm.var_index(upto) if upto is not None else None
    mine: list[ActionVar] = []
    others: list[ActionVar] = []
    for av in scm.downstream_action_vars(agent, t):
        if limit is not None and scm.var_index(av) >= limit:
            continue
        (mine if av.agent in n_set else others).append(av)
    return mine, others


Sim = Callable[..., Mapping[Var, object]]


def run_tcfe(sim: Sim, acting: ActionVar, alt) -> Mapping[Var, object]:
    """Counterfactual world with the acting variable forced to the alternative."""
    return sim(do={acting: alt})


def run_cf_ase(
    sim: Sim,
    scm: MmdpScm,
    acting: ActionVar,
    alt,
    effect_agents,
    tau: Mapping[Var, object],
    upto: Var | None = None,
) -> Mapping[Var, object]:
    """Outcome world of the counterfactual agent-specific effect.

    World 2 realizes the alternative action; the outcome world keeps the
    acting variable natural (it reproduces its factual value under posterior
    noise) while downstream actions of effect agents are transplanted from
    world 2 and those of the remaining agents are pinned to their factual
    values.
    """
    world2 = sim(do={acting: alt})
    mine, others = split_downstream(scm, acting.agent, acting.t, effect_agents, upto)
    do: dict[Var, object] = {av: tau[av] for av in others}
    do.update({av: world2[av] for av in mine})
    return sim(do=do)


def run_cf_pse(
    sim: Sim,
    scm: MmdpScm,
    acting: ActionVar,
    alt,
    effect_agents,
    tau: Mapping[Var, object],
    upto: Var | None = None,
) -> Mapping[Var, object]:
    """Outcome world of the counterfactual path-specific variant.

    The acting variable is forced to the alternative and only the non-effect
    agents' downstream actions are pinned to their factual values; effect
    agents respond naturally.
    """
    _, others = split_downstream(scm, acting.agent, acting.t, effect_agents, upto)
    do: dict[Var, object] = {acting: alt}
    do.update({av: tau[av] for av in others})
    return sim(do=do)


def run_ase(
    sim: Sim,
    scm: MmdpScm,
    acting: ActionVar,
    alt,
    ref,
    effect_agents,
    upto: Var | None = None,
) -> tuple[Mapping[Var, object], Mapping[Var, object]]:
    """(outcome world, reference world) of the interventional agent-specific effect.

    Three worlds per noise draw: the alternative world records the effect
    agents' natural responses, the reference world the other agents'; the
    outcome world replays the reference action with both recordings imposed.
    """
    world_a = sim(do={acting: alt})
    world_b = sim(do={acting: ref})
    mine, others = split_downstream(scm, acting.agent, acting.t, effect_agents, upto)
    do: dict[Var, object] = {acting: ref}
    do.update({av: world_b[av] for av in others})
    do.update({av: world_a[av] for av in mine})
    return sim(do=do), world_b


def run_fpse(
    sim: Sim,
    x_var: Var,
    x,
    x_ref,
    g: Edges,
    g_star: Edges,
) -> tuple[Mapping[Var, object], Mapping[Var, object]]:
    """(modified world, reference world) of the fixed path-specific effect.

    The modified model reads parents through effect-subgraph edges from the
    do(x) world and through reference-subgraph edges from the do(x_ref)
    world, and is itself evaluated under do(x_ref).
    """
    world_e = sim(do={x_var: x})
    world_s = sim(do={x_var: x_ref})
    world_q = sim(do={x_var: x_ref}, splices=((g, world_e), (g_star, world_s)))
    return world_q, world_s


def run_cf_fpse(
    sim: Sim,
    x_var: Var,
    x,
    x_factual,
    g: Edges,
    g_star: Edges,
) -> Mapping[Var, object]:
    """Outcome world of the counterfactual fixed path-specific effect."""
    world_e = sim(do={x_var: x})
    world_s = sim(do={x_var: x_factual})
    return sim(do={x_var: x_factual}, splices=((g, world_e), (g_star, world_s)))


def run_pse(
    sim: Sim,
    scm: MmdpScm,
    x_var: Var,
    x,
    x_ref,
    g: Edges,
) -> tuple[Mapping[Var, object], Mapping[Var, object]]:
    """Both terms of the path-specific effect.

    The modified model keeps effect-subgraph parents live and reads all other
    parents from the do(x_ref) world; the effect is the outcome difference of
    that model under do(x) and under do(x_ref).
    """
    g_bar = complement_edges(scm, g)
    world_s = sim(do={x_var: x_ref})
    splices = ((g_bar, world_s),)
    world_gx = sim(do={x_var: x}, splices=splices)
    world_gref = sim(do={x_var: x_ref}, splices=splices)
    return world_gx, world_gref


def run_tce(sim: Sim, x_var: Var, x, x_ref) -> tuple[Mapping[Var, object], Mapping[Var, object]]:
    return sim(do={x_var: x}), sim(do={x_var: x_ref})
