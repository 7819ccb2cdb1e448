"""Two-agent sepsis management benchmark.

A recommender agent proposes one of eight treatment combinations (antibiotics
A, vasopressors V, mechanical ventilation E); a supervising clinician then
either accepts it (no-op, with trust probability mu) or overrides it with
their own choice.  Patient state tracks four discretized vitals (heart rate,
systolic blood pressure, oxygen saturation, glucose), a static diabetes flag,
and the currently applied treatment bits; three or more abnormal vitals kill
the patient, while all-normal vitals without active treatment discharge them.

The transition table follows the discrete-level design of the classic
simulator for this task: binary treatment effects per vital, withdrawal
rebounds, and random fluctuation that is stronger for glucose in diabetic
patients.  Its exact numbers are configuration shipped as a checksummed
asset, not ground truth; experiments treat them as the environment.
"""

from __future__ import annotations

import gzip
import hashlib
import itertools
import json
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path
from typing import Mapping

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
from ..policy_solver import MdpView, mdp_view_from_table, policy_iteration

HR_LEVELS = 3
BP_LEVELS = 3
O2_LEVELS = 2
GLUCOSE_LEVELS = 5
DEATH = "death"
DISCHARGE = "discharge"
TREATMENTS = tuple(f"t{k}" for k in range(8))
NOOP = "noop"

ASSET_NAME = "sepsis_transitions.json.gz"
ASSET_SHA256 = "4fa4518e885a69b451fda4a4a85c247b25cd19b366d3603c67bce814ee462fab"


def treatment_bits(treatment: str) -> tuple[int, int, int]:
    """(antibiotics, vasopressors, ventilation) bits of a treatment id."""
    k = int(treatment[1:])
    return (k >> 2) & 1, (k >> 1) & 1, k & 1


def treatment_id(abx: int, vaso: int, vent: int) -> str:
    return f"t{(abx << 2) | (vaso << 1) | vent}"


def state_id(hr: int, bp: int, o2: int, glucose: int, diabetic: int,
             abx: int, vaso: int, vent: int) -> str:
    return f"{hr}{bp}{o2}{glucose}{diabetic}{abx}{vaso}{vent}"


def parse_state(state: str) -> tuple[int, ...]:
    if state in (DEATH, DISCHARGE):
        raise ModelError(f"{state} has no vital layout")
    return tuple(int(ch) for ch in state)


def alive_states() -> tuple[str, ...]:
    out = []
    for hr in range(HR_LEVELS):
        for bp in range(BP_LEVELS):
            for o2 in range(O2_LEVELS):
                for glucose in range(GLUCOSE_LEVELS):
                    for diabetic in (0, 1):
                        for abx in (0, 1):
                            for vaso in (0, 1):
                                for vent in (0, 1):
                                    out.append(state_id(hr, bp, o2, glucose, diabetic, abx, vaso, vent))
    return tuple(out)


def abnormal_count(hr: int, bp: int, o2: int, glucose: int) -> int:
    return int(hr != 1) + int(bp != 1) + int(o2 != 1) + int(glucose != 2)


@dataclass(frozen=True)
class SepsisDynamicsParams:
    """Transition-probability configuration of the patient simulator."""

    abx_hr_effect: float = 0.5          # high heart rate -> normal while on antibiotics
    abx_bp_effect: float = 0.5          # high blood pressure -> normal while on antibiotics
    abx_withdraw: float = 0.1           # rebound normal -> high when antibiotics stop
    vent_effect: float = 0.7            # low oxygen -> normal while ventilated
    vent_withdraw: float = 0.1          # rebound normal -> low when ventilation stops
    vaso_low_to_normal: float = 0.7     # vasopressor raises low blood pressure
    vaso_normal_to_high: float = 0.7
    vaso_diab_low_to_normal: float = 0.5
    vaso_diab_low_to_high: float = 0.4
    vaso_diab_normal_to_high: float = 0.9
    vaso_diab_glucose_raise: float = 0.5
    vaso_withdraw: float = 0.1          # blood pressure drops one level when vaso stops
    vaso_diab_withdraw: float = 0.05
    fluctuation: float = 0.1            # baseline +/-1 level drift per untreated vital
    glucose_fluctuation_diabetic: float = 0.3

    def perturbed(self, abx_delta: float = 0.1, vaso_delta: float = 0.1) -> "SepsisDynamicsParams":
        """More optimistic antibiotics, less effective vasopressors.

        Used to train the recommender on slightly wrong dynamics so its
        treatment choices differ from the clinician's.
        """
        clip = lambda x: min(1.0, max(0.0, x))
        return replace(
            self,
            abx_hr_effect=clip(self.abx_hr_effect + abx_delta),
            abx_bp_effect=clip(self.abx_bp_effect + abx_delta),
            vaso_low_to_normal=clip(self.vaso_low_to_normal - vaso_delta),
            vaso_normal_to_high=clip(self.vaso_normal_to_high - vaso_delta),
            vaso_diab_low_to_normal=clip(self.vaso_diab_low_to_normal - vaso_delta),
            vaso_diab_normal_to_high=clip(self.vaso_diab_normal_to_high - vaso_delta),
        )


def _fluctuate(level: int, n_levels: int, p: float) -> dict[int, float]:
    dist = {level: 1.0 - p}
    down = level - 1 if level > 0 else level
    up = level + 1 if level < n_levels - 1 else level
    dist[down] = dist.get(down, 0.0) + p / 2.0
    dist[up] = dist.get(up, 0.0) + p / 2.0
    return dist


def _hr_dist(hr: int, abx_now: int, abx_prev: int, params: SepsisDynamicsParams) -> dict[int, float]:
    if abx_now:
        if hr == 2:
            return {1: params.abx_hr_effect, 2: 1.0 - params.abx_hr_effect}
        return {hr: 1.0}
    if abx_prev:
        if hr == 1:
            return {2: params.abx_withdraw, 1: 1.0 - params.abx_withdraw}
        return {hr: 1.0}
    return _fluctuate(hr, HR_LEVELS, params.fluctuation)


def _bp_dist(bp: int, diabetic: int, abx_now: int, abx_prev: int,
             vaso_now: int, vaso_prev: int, params: SepsisDynamicsParams) -> dict[int, float]:
    # vasopressors dominate blood pressure; antibiotics act only otherwise
    if vaso_now:
        if diabetic:
            if bp == 0:
                stay = 1.0 - params.vaso_diab_low_to_normal - params.vaso_diab_low_to_high
                return {1: params.vaso_diab_low_to_normal, 2: params.vaso_diab_low_to_high, 0: stay}
            if bp == 1:
                return {2: params.vaso_diab_normal_to_high, 1: 1.0 - params.vaso_diab_normal_to_high}
            return {bp: 1.0}
        if bp == 0:
            return {1: params.vaso_low_to_normal, 0: 1.0 - params.vaso_low_to_normal}
        if bp == 1:
            return {2: params.vaso_normal_to_high, 1: 1.0 - params.vaso_normal_to_high}
        return {bp: 1.0}
    if vaso_prev:
        p = params.vaso_diab_withdraw if diabetic else params.vaso_withdraw
        if bp > 0:
            return {bp - 1: p, bp: 1.0 - p}
        return {bp: 1.0}
    if abx_now:
        if bp == 2:
            return {1: params.abx_bp_effect, 2: 1.0 - params.abx_bp_effect}
        return {bp: 1.0}
    if abx_prev:
        if bp == 1:
            return {2: params.abx_withdraw, 1: 1.0 - params.abx_withdraw}
        return {bp: 1.0}
    return _fluctuate(bp, BP_LEVELS, params.fluctuation)


def _o2_dist(o2: int, vent_now: int, vent_prev: int, params: SepsisDynamicsParams) -> dict[int, float]:
    if vent_now:
        if o2 == 0:
            return {1: params.vent_effect, 0: 1.0 - params.vent_effect}
        return {o2: 1.0}
    if vent_prev:
        if o2 == 1:
            return {0: params.vent_withdraw, 1: 1.0 - params.vent_withdraw}
        return {o2: 1.0}
    return _fluctuate(o2, O2_LEVELS, params.fluctuation)


def _glucose_dist(glucose: int, diabetic: int, vaso_now: int, params: SepsisDynamicsParams) -> dict[int, float]:
    if vaso_now and diabetic:
        up = glucose + 1 if glucose < GLUCOSE_LEVELS - 1 else glucose
        dist = {glucose: 1.0 - params.vaso_diab_glucose_raise}
        dist[up] = dist.get(up, 0.0) + params.vaso_diab_glucose_raise
        return dist
    p = params.glucose_fluctuation_diabetic if diabetic else params.fluctuation
    return _fluctuate(glucose, GLUCOSE_LEVELS, p)


def transition_row(state: str, treatment: str, params: SepsisDynamicsParams) -> dict[str, float]:
    """Sparse next-state distribution for one (alive state, treatment) pair."""
    hr, bp, o2, glucose, diabetic, abx0, vaso0, vent0 = parse_state(state)
    abx, vaso, vent = treatment_bits(treatment)
    hr_d = _hr_dist(hr, abx, abx0, params)
    bp_d = _bp_dist(bp, diabetic, abx, abx0, vaso, vaso0, params)
    o2_d = _o2_dist(o2, vent, vent0, params)
    gl_d = _glucose_dist(glucose, diabetic, vaso, params)
    out: dict[str, float] = {}
    for (h, ph), (b, pb), (o, po), (g, pg) in itertools.product(
        hr_d.items(), bp_d.items(), o2_d.items(), gl_d.items()
    ):
        p = ph * pb * po * pg
        if p <= 0.0:
            continue
        if abnormal_count(h, b, o, g) >= 3:
            nxt = DEATH
        elif abnormal_count(h, b, o, g) == 0 and abx == 0 and vaso == 0 and vent == 0:
            nxt = DISCHARGE
        else:
            nxt = state_id(h, b, o, g, diabetic, abx, vaso, vent)
        out[nxt] = out.get(nxt, 0.0) + p
    return out


def build_transition_table(params: SepsisDynamicsParams = SepsisDynamicsParams()) -> dict:
    """Full table: state -> treatment -> sparse next-state distribution."""
    table: dict[str, dict[str, dict[str, float]]] = {}
    for s in alive_states():
        table[s] = {a: transition_row(s, a, params) for a in TREATMENTS}
    for s in (DEATH, DISCHARGE):
        table[s] = {a: {s: 1.0} for a in TREATMENTS}
    return table


def canonical_table_json(table: Mapping) -> str:
    return json.dumps(table, sort_keys=True, separators=(",", ":"))


def table_checksum(table: Mapping) -> str:
    return hashlib.sha256(canonical_table_json(table).encode("utf-8")).hexdigest()


def default_asset_path() -> Path:
    return Path(__file__).parent / "assets" / ASSET_NAME


def write_transition_asset(table: Mapping, path: str | Path) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = canonical_table_json(table)
    with open(path, "wb") as raw:
        with gzip.GzipFile(fileobj=raw, mode="wb", compresslevel=9, mtime=0) as fh:
            fh.write(text.encode("utf-8"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def load_transition_asset(path: str | Path | None = None, expected_sha256: str | None = None) -> dict:
    """Load the transition table, verifying the pinned checksum for the bundled asset."""
    if path is None:
        path = default_asset_path()
        expected_sha256 = expected_sha256 or ASSET_SHA256
    path = Path(path)
    if not path.exists():
        raise ModelError(f"transition asset {path} is missing")
    with gzip.open(path, "rt", encoding="utf-8") as fh:
        text = fh.read()
    if expected_sha256 is not None:
        digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
        if digest != expected_sha256:
            raise ModelError(f"transition asset checksum mismatch: {digest}")
    return json.loads(text)


# ---------------------------------------------------------------------------
# Agent policies
# ---------------------------------------------------------------------------


def sepsis_mdp_view(table: Mapping, gamma: float = 0.99) -> MdpView:
    return mdp_view_from_table(
        table,
        reward_of={DISCHARGE: 1.0, DEATH: -1.0},
        gamma=gamma,
        terminal_states=(DEATH, DISCHARGE),
    )


@lru_cache(maxsize=4)
def _solve_policies(params: SepsisDynamicsParams, gamma: float, abx_delta: float, vaso_delta: float):
    true_table = build_transition_table(params)
    perturbed_table = build_transition_table(params.perturbed(abx_delta, vaso_delta))
    clinician = policy_iteration(sepsis_mdp_view(true_table, gamma)).policy
    recommender = policy_iteration(sepsis_mdp_view(perturbed_table, gamma)).policy
    return recommender, clinician, true_table


def default_sepsis_agents(
    params: SepsisDynamicsParams = SepsisDynamicsParams(),
    gamma: float = 0.99,
    abx_delta: float = 0.2,
    vaso_delta: float = 0.4,
) -> tuple[dict[str, str], dict[str, str]]:
    """(recommender policy, clinician policy), both deterministic."""
    recommender, clinician, _ = _solve_policies(params, gamma, abx_delta, vaso_delta)
    return dict(recommender), dict(clinician)


# ---------------------------------------------------------------------------
# The two-agent MMDP
# ---------------------------------------------------------------------------

AI = 0
CLINICIAN = 1


@dataclass(frozen=True)
class SepsisEnvConfig:
    trust: float = 0.5                     # probability the clinician accepts (no-op)
    horizon: int = 20
    diabetes_prevalence: float = 0.2
    hr_marginal: tuple[float, ...] = (0.25, 0.5, 0.25)
    bp_marginal: tuple[float, ...] = (0.25, 0.5, 0.25)
    o2_marginal: tuple[float, ...] = (0.2, 0.8)
    glucose_marginal: tuple[float, ...] = (0.05, 0.15, 0.6, 0.15, 0.05)
    max_initial_abnormal: int = 1
    asset_path: str | None = None          # None: bundled asset
    gamma: float = 0.99
    abx_delta: float = 0.2
    vaso_delta: float = 0.4

    def __post_init__(self) -> None:
        if not 0.0 <= self.trust <= 1.0:
            raise ModelError("trust must lie in [0, 1]")
        if self.horizon < 1:
            raise ModelError("horizon must be >= 1")


def initial_distribution(config: SepsisEnvConfig) -> dict[str, float]:
    """Untreated admission states weighted by vital marginals.

    Admissions with more than one abnormal vital are excluded (and the rest
    renormalized) so that deterioration towards the three-abnormal death
    condition takes several treatment rounds.
    """
    weights: dict[str, float] = {}
    marginals = (config.hr_marginal, config.bp_marginal, config.o2_marginal, config.glucose_marginal)
    diab_p = (1.0 - config.diabetes_prevalence, config.diabetes_prevalence)
    for hr, bp, o2, glucose, diabetic in itertools.product(
        range(HR_LEVELS), range(BP_LEVELS), range(O2_LEVELS), range(GLUCOSE_LEVELS), (0, 1)
    ):
        if abnormal_count(hr, bp, o2, glucose) > config.max_initial_abnormal:
            continue
        w = (marginals[0][hr] * marginals[1][bp] * marginals[2][o2]
             * marginals[3][glucose] * diab_p[diabetic])
        if w > 0.0:
            weights[state_id(hr, bp, o2, glucose, diabetic, 0, 0, 0)] = w
    total = sum(weights.values())
    return {s: w / total for s, w in weights.items()}


def default_state_ordering(states: tuple[str, ...]) -> tuple[str, ...]:
    alive = sorted(s for s in states if s not in (DEATH, DISCHARGE))
    return (DEATH, *alive, DISCHARGE)


def build_sepsis_env(
    config: SepsisEnvConfig,
    ai_policy: Mapping[str, str] | None = None,
    clinician_policy: Mapping[str, str] | None = None,
    state_ordering: tuple[str, ...] | None = None,
    action_orderings: tuple[tuple[str, ...], tuple[str, ...]] | None = None,
) -> tuple[MmdpSpec, JointPolicy, Orderings]:
    """Turn-based MMDP: the recommender moves first, the clinician reviews.

    The applied treatment is the clinician's unless they take the no-op, in
    which case the recommendation goes through.  The clinician no-ops with
    probability ``config.trust`` in every state.
    """
    if ai_policy is None or clinician_policy is None:
        solved_ai, solved_cl = default_sepsis_agents(
            gamma=config.gamma, abx_delta=config.abx_delta, vaso_delta=config.vaso_delta
        )
        ai_policy = ai_policy or solved_ai
        clinician_policy = clinician_policy or solved_cl
    table = load_transition_asset(config.asset_path)
    states = tuple(sorted(table.keys()))
    mu = config.trust

    def transition(state, actions):
        a_ai, a_cl = actions
        applied = a_ai if a_cl == NOOP else a_cl
        row = table[state].get(applied)
        if row is None:
            raise ModelError(f"no transition row for ({state!r}, {applied!r})")
        return row

    def policy_rows(agent, t, state, earlier):
        if agent == AI:
            try:
                return {ai_policy[state]: 1.0}
            except KeyError:
                raise ModelError(f"recommender policy has no action for state {state!r}") from None
        if mu >= 1.0:
            return {NOOP: 1.0}
        try:
            own = clinician_policy[state]
        except KeyError:
            raise ModelError(f"clinician policy has no action for state {state!r}") from None
        if mu <= 0.0:
            return {own: 1.0}
        return {NOOP: mu, own: 1.0 - mu}

    spec = MmdpSpec(
        states=states,
        action_sets=(TREATMENTS, TREATMENTS + (NOOP,)),
        transition=transition,
        horizon=config.horizon,
        initial_dist=initial_distribution(config),
        turn_based=True,
    )
    policy = JointPolicy(rows=policy_rows)
    orderings = Orderings(
        states=state_ordering or default_state_ordering(states),
        actions=action_orderings or (TREATMENTS, TREATMENTS + (NOOP,)),
    )
    return spec, policy, orderings


def build_sepsis_scm(config: SepsisEnvConfig, **kw) -> MmdpScm:
    return build_scm(*build_sepsis_env(config, **kw))


def is_failure(traj: Trajectory) -> bool:
    return traj.states[-1] == DEATH


def death_time(traj: Trajectory) -> int:
    for t, s in enumerate(traj.states):
        if s == DEATH:
            return t
    raise ModelError("trajectory does not reach the death state")


def failure_outcome(traj: Trajectory, states: tuple[str, ...]) -> Outcome:
    """Survival predicate at the step the patient factually died."""
    t_star = death_time(traj)
    return Outcome(var=StateVar(t_star), accepted=frozenset(s for s in states if s != DEATH))
