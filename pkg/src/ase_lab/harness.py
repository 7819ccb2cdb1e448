"""Experiment pipelines: alternative-action selection, trust sweeps, robustness.

Each experiment turns failure trajectories into effect queries, runs the
Monte Carlo estimators, and writes one CSV of per-query rows plus one JSON
summary of aggregates.  Every row is reproducible from (config, seed): all
estimator seeds are derived from the global seed and the query's integer
coordinates, so results are independent of execution order and thread count.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.stats import spearmanr

from .effects import (
    EffectQuery,
    Outcome,
    estimate_cf_ase,
    estimate_cf_pse,
    estimate_tcfe,
)
from .environments import generate_failure_set
from .environments import graph as graph_env
from .environments import sepsis as sepsis_env
from .model import ActionVar, MmdpScm, ModelError, Trajectory

HISTOGRAM_EDGES = (0.25, 0.75)

# seed-derivation tags
_GEN, _SEL, _EFF, _TGT, _PERT, _AUDIT, _PROBE = 1, 2, 3, 4, 5, 6, 7


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(tuple(int(p) for p in parts)).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    environment: str = "graph"                      # "graph" or "sepsis"
    n_trajectories: int = 50                        # per mu for sepsis
    tcfe_threshold: float = 0.75
    samples: int = 100
    target_samples: int = 2000
    mu_grid: tuple[float, ...] = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
    epsilon_grid: tuple[float, ...] = (0.0, 0.025, 0.05, 0.1, 0.2)
    ordering_variants: tuple[str, ...] = ("uds", "usd", "dus", "dsu", "sud", "sdu")
    max_queries: int = 248                          # cap for the robustness experiments
    seed: int = 0
    out_dir: str = "results"
    threads: int = 1
    paper_scale: bool = False

    def __post_init__(self) -> None:
        if not (0.0 < self.tcfe_threshold <= 1.0):
            raise ModelError("TCFE threshold must lie in (0, 1]")
        if self.samples < 1 or self.target_samples < 1:
            raise ModelError("sample budgets must be >= 1")
        if not self.mu_grid or not self.epsilon_grid or not self.ordering_variants:
            raise ModelError("parameter grids must be non-empty")
        if self.environment not in ("graph", "sepsis"):
            raise ModelError(f"unknown environment {self.environment!r}")

    def scaled(self) -> "ExperimentConfig":
        if not self.paper_scale:
            return self
        n = 500 if self.environment == "graph" else 100
        return replace(self, n_trajectories=n, max_queries=10**9)


def desk_config(environment: str, **overrides) -> ExperimentConfig:
    base = dict(environment=environment)
    if environment == "sepsis":
        base.update(n_trajectories=20, tcfe_threshold=0.8)
    base.update(overrides)
    return ExperimentConfig(**base)


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    param: str
    method: str
    direction: str
    trajectory: int
    agent: int
    time: int
    action: str
    value: float
    se: float
    samples: int
    seed: int

    FIELDS = ("experiment", "param", "method", "direction", "trajectory",
              "agent", "time", "action", "value", "se", "samples", "seed")

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, f) for f in self.FIELDS)


def write_rows(rows: Sequence[ResultRow], path: Path) -> None:
    rows = sorted(rows, key=lambda r: (r.experiment, r.param, r.trajectory, r.time,
                                       r.agent, r.action, r.direction, r.method))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ResultRow.FIELDS)
        for r in rows:
            writer.writerow(r.as_tuple())


def write_summary(summary: dict, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def direction_id(effect_agents: Iterable[int]) -> str:
    return "+".join(str(a) for a in sorted(effect_agents))


def histogram_counts(values: Sequence[float]) -> list[int]:
    lo, hi = HISTOGRAM_EDGES
    bins = [0, 0, 0]
    for v in values:
        if v < lo:
            bins[0] += 1
        elif v < hi:
            bins[1] += 1
        else:
            bins[2] += 1
    return bins


def _mean(values: Sequence[float]) -> float | None:
    return sum(values) / len(values) if values else None


# ---------------------------------------------------------------------------
# Alternative-action selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SelectedQuery:
    trajectory_index: int
    trajectory: Trajectory
    agent: int
    t: int
    action: str
    action_index: int
    outcome: Outcome
    tcfe: float
    tcfe_se: float
    seed: int


def select_alternatives(
    scm: MmdpScm,
    trajectories: Sequence[Trajectory],
    theta: float,
    samples: int,
    seed: int,
    outcome_of: Callable[[Trajectory], Outcome],
    threads: int = 1,
) -> list[SelectedQuery]:
    """Estimate the total counterfactual effect of every non-factual action
    and keep those reaching the threshold."""
    if not (0.0 < theta <= 1.0):
        raise ModelError("TCFE threshold must lie in (0, 1]")
    jobs = []
    for ti, tau in enumerate(trajectories):
        outcome = outcome_of(tau)
        for t in range(min(outcome.var.t, scm.spec.horizon)):
            for agent in range(scm.spec.num_agents):
                factual = tau.value(ActionVar(agent, t))
                for ai, alt in enumerate(scm.spec.action_sets[agent]):
                    if alt == factual:
                        continue
                    jobs.append((ti, tau, agent, t, alt, ai, outcome))

    def run(job):
        ti, tau, agent, t, alt, ai, outcome = job
        q_seed = derive_seed(seed, _SEL, ti, t, agent, ai)
        est = estimate_tcfe(scm, EffectQuery(
            agent=agent, t=t, alternative=alt, outcome=outcome,
            samples=samples, seed=q_seed, trajectory=tau,
        ))
        return SelectedQuery(
            trajectory_index=ti, trajectory=tau, agent=agent, t=t, action=alt,
            action_index=ai, outcome=outcome, tcfe=est.value, tcfe_se=est.se, seed=q_seed,
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    return [r for r in results if r.tcfe >= theta]


def _audit_zero_at_factual(scm: MmdpScm, selected: Sequence[SelectedQuery], seed: int) -> None:
    """Spot-check: re-running the first query with the factual action is exactly 0."""
    if not selected:
        return
    s = selected[0]
    factual = s.trajectory.value(ActionVar(s.agent, s.t))
    est = estimate_tcfe(scm, EffectQuery(
        agent=s.agent, t=s.t, alternative=factual, outcome=s.outcome,
        samples=scm.spec.num_agents * 8, seed=derive_seed(seed, _AUDIT), trajectory=s.trajectory,
    ))
    if est.value != 0.0:
        raise RuntimeError("zero-at-factual audit failed")


def _check_bounds(rows: Iterable[ResultRow]) -> None:
    for r in rows:
        if not -1.0 <= r.value <= 1.0:
            raise RuntimeError(f"effect value {r.value} out of bounds in {r}")


# ---------------------------------------------------------------------------
# Trust sweep (sepsis)
# ---------------------------------------------------------------------------


def run_trust_sweep(config: ExperimentConfig) -> tuple[list[ResultRow], dict]:
    config = config.scaled()
    if config.environment != "sepsis":
        raise ModelError("the trust sweep runs on the sepsis environment")
    rows: list[ResultRow] = []
    per_mu: dict[str, dict] = {}
    for mi, mu in enumerate(config.mu_grid):
        scm = sepsis_env.build_sepsis_scm(sepsis_env.SepsisEnvConfig(trust=mu))
        rng = np.random.default_rng(derive_seed(config.seed, _GEN, mi))
        failures = generate_failure_set(scm, config.n_trajectories, rng, sepsis_env.is_failure)
        outcome_of = lambda tau: sepsis_env.failure_outcome(tau, scm.spec.states)
        selected = select_alternatives(
            scm, failures, config.tcfe_threshold, config.samples,
            derive_seed(config.seed, _SEL, mi), outcome_of, config.threads,
        )
        _audit_zero_at_factual(scm, selected, derive_seed(config.seed, _AUDIT, mi))
        mu_key = f"{mu:g}"
        values: dict[tuple[str, str], list[float]] = {}

        def run(item):
            k, s = item
            other = 1 - s.agent
            direction = frozenset([other])
            out_rows = []
            out_vals = []
            for method, estimator in (("cf_ase", estimate_cf_ase), ("cf_pse", estimate_cf_pse)):
                est = estimator(scm, EffectQuery(
                    agent=s.agent, t=s.t, alternative=s.action, outcome=s.outcome,
                    samples=config.samples,
                    seed=derive_seed(config.seed, _EFF, mi, s.trajectory_index, s.t, s.agent, s.action_index),
                    trajectory=s.trajectory, effect_agents=direction,
                ))
                out_rows.append(ResultRow(
                    experiment="trust_sweep", param=mu_key, method=method,
                    direction=direction_id(direction), trajectory=s.trajectory_index,
                    agent=s.agent, time=s.t, action=s.action, value=est.value,
                    se=est.se, samples=est.samples, seed=config.seed,
                ))
                out_vals.append((method, direction_id(direction), est.value))
            out_rows.append(ResultRow(
                experiment="trust_sweep", param=mu_key, method="tcfe", direction="",
                trajectory=s.trajectory_index, agent=s.agent, time=s.t, action=s.action,
                value=s.tcfe, se=s.tcfe_se, samples=config.samples, seed=config.seed,
            ))
            return out_rows, out_vals

        items = list(enumerate(selected))
        if config.threads > 1:
            with ThreadPoolExecutor(max_workers=config.threads) as pool:
                results = list(pool.map(run, items))
        else:
            results = [run(i) for i in items]
        for out_rows, out_vals in results:
            rows.extend(out_rows)
            for method, direction, value in out_vals:
                values.setdefault((method, direction), []).append(value)

        cf_ase_all = [v for (m, _), vs in values.items() if m == "cf_ase" for v in vs]
        per_mu[mu_key] = {
            "n_selected": len(selected),
            "means": {
                f"{m}@{d}": _mean(vs) for (m, d), vs in sorted(values.items())
            },
            "histogram_cf_ase": {
                "all": histogram_counts(cf_ase_all),
                **{d: histogram_counts(vs) for (m, d), vs in sorted(values.items()) if m == "cf_ase"},
            },
        }
    _check_bounds(rows)

    def trend(method: str, direction: str):
        xs, ys = [], []
        for mi, mu in enumerate(config.mu_grid):
            m = per_mu[f"{mu:g}"]["means"].get(f"{method}@{direction}")
            if m is not None:
                xs.append(mu)
                ys.append(m)
        if len(xs) < 2 or len(set(ys)) < 2:
            return {"mu": xs, "mean": ys, "spearman": None}
        rho = spearmanr(xs, ys).statistic
        return {"mu": xs, "mean": ys, "spearman": None if math.isnan(rho) else float(rho)}

    summary = {
        "experiment": "trust_sweep",
        "mu_grid": list(config.mu_grid),
        "per_mu": per_mu,
        "through_clinician_cf_ase": trend("cf_ase", "1"),
        "through_ai_cf_ase": trend("cf_ase", "0"),
        "through_clinician_cf_pse": trend("cf_pse", "1"),
        "through_ai_cf_pse": trend("cf_pse", "0"),
    }
    return rows, summary


# ---------------------------------------------------------------------------
# Graph robustness experiments
# ---------------------------------------------------------------------------


def _nonempty_subsets(agents: Sequence[int]) -> list[frozenset]:
    out = []
    for mask in range(1, 1 << len(agents)):
        out.append(frozenset(a for i, a in enumerate(agents) if mask >> i & 1))
    return out


@dataclass(frozen=True)
class GraphQuery:
    selected: SelectedQuery
    effect_agents: frozenset
    target: float
    target_se: float


def _graph_query_set(config: ExperimentConfig) -> tuple[MmdpScm, list[GraphQuery]]:
    """Selected alternatives x all non-empty subsets of the other agents,
    with target values estimated on the true model at the larger budget."""
    scm = graph_env.build_graph_scm()
    rng = np.random.default_rng(derive_seed(config.seed, _GEN))
    failures = generate_failure_set(scm, config.n_trajectories, rng, graph_env.is_failure)
    outcome = graph_env.success_outcome()
    selected = select_alternatives(
        scm, failures, config.tcfe_threshold, config.samples,
        derive_seed(config.seed, _SEL), lambda tau: outcome, config.threads,
    )
    _audit_zero_at_factual(scm, selected, derive_seed(config.seed, _AUDIT))
    n_agents = scm.spec.num_agents
    # Desk-scale cap.  Most selected alternatives are last-step self-fixes
    # whose effect cannot be mediated by anyone; a cheap probe (effect through
    # all other agents) stratifies the kept alternatives across carry levels
    # so the reported target-value ranges are all represented.  Paper scale
    # keeps everything.
    n_keep = max(1, config.max_queries // 31)
    if len(selected) > n_keep:
        def probe(s: SelectedQuery) -> float:
            others = frozenset(a for a in range(n_agents) if a != s.agent)
            est = estimate_cf_ase(scm, EffectQuery(
                agent=s.agent, t=s.t, alternative=s.action, outcome=s.outcome,
                samples=config.samples,
                seed=derive_seed(config.seed, _PROBE, s.trajectory_index, s.t, s.agent, s.action_index),
                trajectory=s.trajectory, effect_agents=others,
            ))
            return est.value

        bins: dict[int, list[SelectedQuery]] = {0: [], 1: [], 2: [], 3: []}
        for s in selected:
            v = probe(s)
            bins[min(3, int(v * 4))].append(s)
        pools = [bins[b] for b in (3, 2, 1, 0)]
        chosen: list[SelectedQuery] = []
        while len(chosen) < n_keep and any(pools):
            for pool in pools:
                if pool and len(chosen) < n_keep:
                    chosen.append(pool.pop(0))
    else:
        chosen = list(selected)
    queries: list[GraphQuery] = []
    for s in chosen:
        others = [a for a in range(n_agents) if a != s.agent]
        for ns in _nonempty_subsets(others):
            queries.append(GraphQuery(selected=s, effect_agents=ns, target=0.0, target_se=0.0))

    def run_target(gq: GraphQuery):
        s = gq.selected
        est = estimate_cf_ase(scm, EffectQuery(
            agent=s.agent, t=s.t, alternative=s.action, outcome=s.outcome,
            samples=config.target_samples,
            seed=derive_seed(config.seed, _TGT, s.trajectory_index, s.t, s.agent,
                             s.action_index, _subset_code(gq.effect_agents)),
            trajectory=s.trajectory, effect_agents=gq.effect_agents,
        ))
        return replace(gq, target=est.value, target_se=est.se)

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            queries = list(pool.map(run_target, queries))
    else:
        queries = [run_target(g) for g in queries]
    return scm, queries


def _subset_code(effect_agents: frozenset) -> int:
    return sum(1 << a for a in effect_agents)


def _target_rows(experiment: str, queries: Sequence[GraphQuery], config: ExperimentConfig) -> list[ResultRow]:
    return [
        ResultRow(
            experiment=experiment, param="target", method="cf_ase",
            direction=direction_id(g.effect_agents), trajectory=g.selected.trajectory_index,
            agent=g.selected.agent, time=g.selected.t, action=g.selected.action,
            value=g.target, se=g.target_se, samples=config.target_samples, seed=config.seed,
        )
        for g in queries
    ]


def _estimate_variant_rows(
    experiment: str,
    param: str,
    variant_scm: MmdpScm,
    queries: Sequence[GraphQuery],
    config: ExperimentConfig,
    variant_index: int,
) -> list[ResultRow]:
    def run(gq: GraphQuery):
        s = gq.selected
        est = estimate_cf_ase(variant_scm, EffectQuery(
            agent=s.agent, t=s.t, alternative=s.action, outcome=s.outcome,
            samples=config.samples,
            seed=derive_seed(config.seed, _EFF, variant_index, s.trajectory_index, s.t,
                             s.agent, s.action_index, _subset_code(gq.effect_agents)),
            trajectory=s.trajectory, effect_agents=gq.effect_agents,
        ))
        return ResultRow(
            experiment=experiment, param=param, method="cf_ase",
            direction=direction_id(gq.effect_agents), trajectory=s.trajectory_index,
            agent=s.agent, time=s.t, action=s.action, value=est.value, se=est.se,
            samples=est.samples, seed=config.seed,
        )

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            return list(pool.map(run, queries))
    return [run(g) for g in queries]


def _error_summary(queries: Sequence[GraphQuery], rows: Sequence[ResultRow]) -> dict:
    """Mean absolute deviation from targets, overall and by target-value range."""
    target_of = {
        (g.selected.trajectory_index, g.selected.t, g.selected.agent,
         g.selected.action, direction_id(g.effect_agents)): g.target
        for g in queries
    }
    edges = (0.25, 0.5, 0.75)
    by_range: dict[str, list[float]] = {"[0,0.25)": [], "[0.25,0.5)": [], "[0.5,0.75)": [], "[0.75,1]": []}
    errors = []
    for r in rows:
        tgt = target_of[(r.trajectory, r.time, r.agent, r.action, r.direction)]
        err = abs(r.value - tgt)
        errors.append(err)
        if tgt < edges[0]:
            by_range["[0,0.25)"].append(err)
        elif tgt < edges[1]:
            by_range["[0.25,0.5)"].append(err)
        elif tgt < edges[2]:
            by_range["[0.5,0.75)"].append(err)
        else:
            by_range["[0.75,1]"].append(err)
    return {
        "mean_abs_error": _mean(errors),
        "by_target_range": {k: {"n": len(v), "mean_abs_error": _mean(v)} for k, v in by_range.items()},
    }


def run_policy_perturbation(config: ExperimentConfig) -> tuple[list[ResultRow], dict]:
    config = config.scaled()
    if config.environment != "graph":
        raise ModelError("the policy-perturbation experiment runs on the graph environment")
    scm, queries = _graph_query_set(config)
    rows = _target_rows("policy_perturbation", queries, config)
    per_eps: dict[str, dict] = {}
    probs = graph_env.default_random_probs(scm.spec.num_agents)
    n_resamples = 4
    for ei, eps in enumerate(config.epsilon_grid):
        eps_key = f"{eps:g}"
        variant_rows: list[ResultRow] = []
        drawn = []
        # several independently perturbed models per grid point, each serving
        # a slice of the queries, so the realized perturbation size is not a
        # single lucky draw
        for ri in range(n_resamples):
            rng = np.random.default_rng(derive_seed(config.seed, _PERT, ei, ri))
            # floored slightly above zero so every observed action keeps
            # positive probability under the perturbed model
            noisy = tuple(
                float(min(1.0, max(1e-3, p + rng.uniform(-eps, eps)))) for p in probs
            )
            drawn.append(list(noisy))
            variant = graph_env.build_graph_scm(graph_env.GraphEnvConfig(random_action_probs=noisy))
            slice_queries = [q for k, q in enumerate(queries) if k % n_resamples == ri]
            variant_rows.extend(
                _estimate_variant_rows("policy_perturbation", eps_key, variant,
                                       slice_queries, config, ei * n_resamples + ri)
            )
        rows.extend(variant_rows)
        per_eps[eps_key] = _error_summary(queries, variant_rows)
        per_eps[eps_key]["probs"] = drawn
    _check_bounds(rows)
    mean_errors = [per_eps[f"{e:g}"]["mean_abs_error"] for e in config.epsilon_grid]
    summary = {
        "experiment": "policy_perturbation",
        "epsilon_grid": list(config.epsilon_grid),
        "n_queries": len(queries),
        "per_epsilon": per_eps,
        "mean_abs_error": mean_errors,
        "noise_floor": per_eps[f"{config.epsilon_grid[0]:g}"]["mean_abs_error"]
        if config.epsilon_grid[0] == 0.0 else None,
    }
    return rows, summary


def run_ordering_misspecification(config: ExperimentConfig) -> tuple[list[ResultRow], dict]:
    config = config.scaled()
    if config.environment != "graph":
        raise ModelError("the ordering experiment runs on the graph environment")
    scm, queries = _graph_query_set(config)
    rows = _target_rows("ordering_misspecification", queries, config)
    letter = {"u": "up", "d": "down", "s": "straight"}
    per_variant: dict[str, dict] = {}
    for vi, variant_id in enumerate(config.ordering_variants):
        ordering = tuple(letter[ch] for ch in variant_id)
        variant = graph_env.build_graph_scm(graph_env.GraphEnvConfig(action_ordering=ordering))
        variant_rows = _estimate_variant_rows(
            "ordering_misspecification", variant_id, variant, queries, config, vi
        )
        rows.extend(variant_rows)
        per_variant[variant_id] = _error_summary(queries, variant_rows)
    _check_bounds(rows)
    summary = {
        "experiment": "ordering_misspecification",
        "variants": list(config.ordering_variants),
        "n_queries": len(queries),
        "per_variant": per_variant,
        "correct_variant": "uds",
        "reversed_variant": "sdu",
    }
    return rows, summary


# ---------------------------------------------------------------------------
# Top-level runner
# ---------------------------------------------------------------------------

EXPERIMENTS = {
    "trust_sweep": run_trust_sweep,
    "policy_perturbation": run_policy_perturbation,
    "ordering_misspecification": run_ordering_misspecification,
}


def run_experiment(name: str, config: ExperimentConfig, out_dir: str | Path | None = None) -> dict:
    """Run one experiment and write `<name>.csv` and `<name>_summary.json`."""
    if name not in EXPERIMENTS:
        raise ModelError(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}")
    rows, summary = EXPERIMENTS[name](config)
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{name}.csv"
    write_rows(rows, csv_path)
    write_summary(summary, out / f"{name}_summary.json")
    summary["csv"] = str(csv_path)
    return summary
