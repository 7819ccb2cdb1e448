from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from ase_lab.effects import Outcome
from ase_lab.model import (
    ActionVar,
    JointPolicy,
    MmdpSpec,
    ModelError,
    Orderings,
    StateVar,
    Trajectory,
    build_scm,
)
from ase_lab.oracle import (
    AtomScm,
    CellBudgetExceeded,
    CondTable,
    check_binary_monotonic,
    check_noise_monotonic,
    ctf_factor_prob,
    enumerate_cells,
    exact_query,
    function_table_of,
)
from ase_lab.worlds import action_subgraph_pair, complement_edges

from conftest import (
    build_fixture,
    m2_factual,
    random_counterfactual_query,
    random_fixture_scm,
    random_mmdp,
    witness_factual,
    witness_pair,
)


def interval_measure(table: CondTable, pairs) -> float:
    """Independent oracle: measure the noise set by elementary-interval scan."""
    breaks = {0.0, 1.0}
    for pa, row in table.rows.items():
        acc = 0.0
        for v in table.ordering:
            acc += row.get(v, 0.0)
            breaks.add(min(acc, 1.0))
    edges = sorted(breaks)

    def quantile(pa, u):
        acc = 0.0
        for v in table.ordering:
            acc += table.rows[pa].get(v, 0.0)
            if acc >= u:
                return v
        return table.ordering[-1]

    total = []
    for a, b in zip(edges, edges[1:]):
        if b <= a:
            continue
        if all(quantile(pa, b) == x for x, pa in pairs):
            total.append(b - a)
    return math.fsum(total)


class TestCtfFactorProb:
    def table(self, rows, ordering=("0", "1")):
        return CondTable(ordering=ordering, rows=rows)

    def test_single_pair_is_pmf(self):
        t = self.table({("p",): {"0": 0.3, "1": 0.7}})
        assert ctf_factor_prob(t, [("1", ("p",))]) == pytest.approx(0.7, abs=1e-15)

    def test_binary_joint_example(self):
        t = self.table({("pa1",): {"0": 0.3, "1": 0.7}, ("pa2",): {"0": 0.6, "1": 0.4}})
        assert ctf_factor_prob(t, [("1", ("pa1",)), ("0", ("pa2",))]) == pytest.approx(0.3, abs=1e-15)
        assert ctf_factor_prob(t, [("0", ("pa1",)), ("1", ("pa2",))]) == 0.0

    def test_empty_pairs_rejected(self):
        with pytest.raises(ModelError):
            ctf_factor_prob(self.table({("p",): {"0": 1.0}}), [])

    def test_against_interval_oracle_random(self):
        rng = np.random.default_rng(101)
        for _ in range(300):
            d = int(rng.integers(2, 6))
            n_pa = int(rng.integers(1, 5))
            k = int(rng.integers(1, 5))
            ordering = tuple(f"v{i}" for i in range(d))
            rows = {}
            for j in range(n_pa):
                rows[(f"pa{j}",)] = dict(zip(ordering, rng.dirichlet(np.ones(d))))
            table = CondTable(ordering=ordering, rows=rows)
            pairs = [
                (ordering[int(rng.integers(0, d))], (f"pa{int(rng.integers(0, n_pa))}",))
                for _ in range(k)
            ]
            lhs = ctf_factor_prob(table, pairs)
            rhs = interval_measure(table, pairs)
            assert abs(lhs - rhs) < 1e-12


class TestEnumerateCells:
    def test_single_binary_variable(self):
        spec = MmdpSpec(
            states=("0", "1"),
            action_sets=(("a",),),
            transition={(s, ("a",)): {s: 1.0} for s in ("0", "1")},
            horizon=1,
            initial_dist={"0": 0.7, "1": 0.3},
        )
        policy = JointPolicy.from_tables([{"0": {"a": 1.0}, "1": {"a": 1.0}}])
        scm = build_scm(spec, policy, Orderings(states=("0", "1"), actions=(("a",),)))
        part = enumerate_cells(scm)
        masses = sorted(part.variable_masses(StateVar(0)).tolist())
        assert masses == pytest.approx([0.3, 0.7], abs=1e-15)
        # the other variables are deterministic: one cell each
        assert part.cell_count == 2

    def test_m2_cell_count_by_hand(self, m2):
        part = enumerate_cells(m2)
        sizes = {str(var): len(p) for var, p in part.atom_probs.items()}
        assert sizes == {"S0": 1, "A0@0": 2, "A1@0": 2, "S1": 1}
        assert part.cell_count == 4

    def test_identical_rows_deduplicate(self):
        rng = np.random.default_rng(5)
        # transition rows identical for every action: state atoms collapse
        states = ("s0", "s1")
        row = dict(zip(states, rng.dirichlet(np.ones(2))))
        spec = MmdpSpec(
            states=states,
            action_sets=(("a", "b"),),
            transition={(s, (x,)): dict(row) for s in states for x in ("a", "b")},
            horizon=1,
            initial_dist={"s0": 1.0},
        )
        policy = JointPolicy.from_tables([{s: {"a": 0.5, "b": 0.5} for s in states}])
        scm = build_scm(spec, policy, Orderings(states=states, actions=(("a", "b"),)))
        part = enumerate_cells(scm)
        assert len(part.atom_probs[StateVar(1)]) == 2

    def test_budget_error_reports_requirement(self):
        rng = np.random.default_rng(7)
        scm = random_mmdp(rng, n_states=3, action_counts=(2, 2), horizon=2)
        with pytest.raises(CellBudgetExceeded) as exc:
            enumerate_cells(scm, cell_budget=10)
        assert exc.value.required is not None and exc.value.required > 10


def m2_outcome():
    return Outcome(var=StateVar(1), accepted=frozenset(["v1"]))


class TestExactQueries:
    def test_factual_action_gives_zero(self, m2):
        tau = m2_factual()
        for kind in ("tcfe", "cf_ase", "cf_pse"):
            v = exact_query(
                m2, kind, trajectory=tau, agent=0, t=0, alternative="0",
                effect_agents=frozenset([1]), outcome=m2_outcome(),
            )
            assert v == 0.0

    def test_m2prime_deterministic_chain(self, m2prime):
        tau = m2_factual()
        v = exact_query(
            m2prime, "cf_ase", trajectory=tau, agent=0, t=0, alternative="1",
            effect_agents=frozenset([1]), outcome=m2_outcome(),
        )
        assert v == pytest.approx(1.0, abs=1e-15)

    def test_m2_stochastic_copy(self, m2):
        tau = m2_factual()
        for kind in ("tcfe", "cf_ase", "cf_pse"):
            v = exact_query(
                m2, kind, trajectory=tau, agent=0, t=0, alternative="1",
                effect_agents=frozenset([1]), outcome=m2_outcome(),
            )
            assert v == pytest.approx(0.8, abs=1e-12), kind

    def test_m2_ase(self, m2):
        v = exact_query(
            m2, "ase", agent=0, t=0, alternative="1", reference="0",
            effect_agents=frozenset([1]), outcome=m2_outcome(),
        )
        assert v == pytest.approx(0.8, abs=1e-12)

    def test_zero_probability_evidence(self, m2prime):
        from ase_lab.model import ZeroProbabilityEvidence

        tau = Trajectory(states=("start", "v0"), actions=(("1", "0"),))
        with pytest.raises(ZeroProbabilityEvidence):
            exact_query(
                m2prime, "tcfe", trajectory=tau, agent=0, t=0, alternative="0",
                outcome=m2_outcome(),
            )


class TestIdentities:
    def fixture_query(self, seed):
        rng = np.random.default_rng(seed)
        scm = random_fixture_scm(rng)
        tau, agent, t, alt, effect_agents, outcome = random_counterfactual_query(rng, scm)
        return scm, tau, agent, t, alt, effect_agents, outcome

    def test_ase_equals_fpse_under_action_subgraphs(self):
        for seed in range(6):
            scm, tau, agent, t, alt, ns, outcome = self.fixture_query(seed)
            ref_actions = [a for a in scm.spec.action_sets[agent] if a != alt]
            ref = ref_actions[0]
            ase = exact_query(
                scm, "ase", agent=agent, t=t, alternative=alt, reference=ref,
                effect_agents=ns, outcome=outcome,
            )
            g, g_star = action_subgraph_pair(scm, agent, t, ns)
            fpse = exact_query(
                scm, "fpse", x_var=ActionVar(agent, t), x=alt, x_ref=ref,
                g=g, g_star=g_star, outcome=outcome,
            )
            assert abs(ase - fpse) < 1e-12

    def test_cf_ase_equals_cf_fpse(self):
        for seed in range(6, 12):
            scm, tau, agent, t, alt, ns, outcome = self.fixture_query(seed)
            cf_ase = exact_query(
                scm, "cf_ase", trajectory=tau, agent=agent, t=t, alternative=alt,
                effect_agents=ns, outcome=outcome,
            )
            g, g_star = action_subgraph_pair(scm, agent, t, ns)
            cf_fpse = exact_query(
                scm, "cf_fpse", trajectory=tau, x_var=ActionVar(agent, t), x=alt,
                g=g, g_star=g_star, outcome=outcome,
            )
            assert abs(cf_ase - cf_fpse) < 1e-12

    def test_pse_decomposes_into_fpse_plus_tce(self):
        for seed in range(12, 18):
            scm, tau, agent, t, alt, ns, outcome = self.fixture_query(seed)
            ref = [a for a in scm.spec.action_sets[agent] if a != alt][0]
            x_var = ActionVar(agent, t)
            g, _ = action_subgraph_pair(scm, agent, t, ns)
            pse = exact_query(
                scm, "pse", x_var=x_var, x=alt, x_ref=ref, g=g, outcome=outcome,
            )
            fpse = exact_query(
                scm, "fpse", x_var=x_var, x=ref, x_ref=alt,
                g=complement_edges(scm, g), g_star=frozenset(), outcome=outcome,
            )
            tce = exact_query(scm, "tce", x_var=x_var, x=alt, x_ref=ref, outcome=outcome)
            assert abs(pse - (fpse + tce)) < 1e-12


class TestWitness:
    def test_observational_tables_agree(self):
        hand, canonical = witness_pair()
        s2 = StateVar(2)
        for pa in itertools.product(("x0", "x1", "x2"), ("0", "1", "2"), ("0", "1")):
            lhs = hand.observational_pmf(s2, pa)
            rhs = canonical.observational_pmf(s2, pa)
            for v in ("w0", "w1"):
                assert abs(lhs.get(v, 0.0) - rhs.get(v, 0.0)) < 1e-12

    def test_cf_ase_diverges(self):
        hand, canonical = witness_pair()
        tau = witness_factual()
        outcome = Outcome(var=StateVar(2), accepted=frozenset(["w1"]))
        v_hand = exact_query(
            hand, "cf_ase", trajectory=tau, agent=0, t=0, alternative="1",
            effect_agents=frozenset([1]), outcome=outcome,
        )
        v_canon = exact_query(
            canonical, "cf_ase", trajectory=tau, agent=0, t=0, alternative="1",
            effect_agents=frozenset([1]), outcome=outcome,
        )
        assert v_hand == pytest.approx(1.0, abs=1e-12)
        assert v_canon == pytest.approx(2.0 / 3.0, abs=1e-12)
        assert abs(v_hand - v_canon) >= 0.05


APP_L_TABLE = {
    ("0",): ("1", "0", "0"),
    ("1",): ("1", "0", "1"),
}


def binary_xy_scm(p_x=0.5, p_y_given=(1.0 / 3.0, 2.0 / 3.0)):
    """Two-variable cause-effect model X -> Y via a dummy single-action agent."""
    spec = MmdpSpec(
        states=("0", "1"),
        action_sets=(("a",),),
        transition={
            ("0", ("a",)): {"0": 1.0 - p_y_given[0], "1": p_y_given[0]},
            ("1", ("a",)): {"0": 1.0 - p_y_given[1], "1": p_y_given[1]},
        },
        horizon=1,
        initial_dist={"0": 1.0 - p_x, "1": p_x},
    )
    policy = JointPolicy.from_tables([{"0": {"a": 1.0}, "1": {"a": 1.0}}])
    return build_scm(spec, policy, Orderings(states=("0", "1"), actions=(("a",),)))


def app_l_model() -> AtomScm:
    """Binary model whose effect mechanism is the three-atom table that is
    monotonic in the classical sense yet not noise-monotonic."""
    scm = binary_xy_scm()
    atom = AtomScm.from_scm(scm)
    third = 1.0 / 3.0
    rows = {(x, "a"): APP_L_TABLE[(x,)] for x in ("0", "1")}
    return atom.override_variable(StateVar(1), (third, third, third), rows)


class TestMonotonicityChecks:
    def test_quantile_built_functions_are_noise_monotonic(self):
        rng = np.random.default_rng(51)
        for k in range(10):
            scm = random_mmdp(rng, n_states=3, action_counts=(2, 2), horizon=2, turn_based=bool(k % 2))
            for var in scm.variables:
                table = function_table_of(scm, var)
                assert check_noise_monotonic(table, scm.ordering(var))

    def test_app_l_table_fails_for_every_ordering(self):
        assert not check_noise_monotonic(APP_L_TABLE, ("0", "1"))
        assert not check_noise_monotonic(APP_L_TABLE, ("1", "0"))

    def test_reversed_ordering_of_increasing_table_fails(self):
        table = {("p",): ("0", "1")}
        assert check_noise_monotonic(table, ("0", "1"))
        assert not check_noise_monotonic(table, ("1", "0"))

    def test_binary_monotonic_for_quantile_models(self):
        rng = np.random.default_rng(77)
        for _ in range(20):
            scm = binary_xy_scm(
                p_x=float(rng.uniform(0.1, 0.9)),
                p_y_given=(float(rng.uniform(0, 1)), float(rng.uniform(0, 1))),
            )
            assert check_binary_monotonic(scm)

    def test_app_l_is_monotonic_but_not_noise_monotonic(self):
        model = app_l_model()
        assert check_binary_monotonic(model)
        table = {pa: tuple(model.dense.decode(StateVar(1), c) for c in row)
                 for pa, row in zip((("0",), ("1",)), model.func[StateVar(1)])}
        assert not check_noise_monotonic(table, ("0", "1"))
        assert not check_noise_monotonic(table, ("1", "0"))

    def test_independent_effect_is_monotonic(self):
        scm = binary_xy_scm(p_y_given=(0.4, 0.4))
        assert check_binary_monotonic(scm)

    def test_anti_comonotone_table_is_not_monotonic(self):
        scm = binary_xy_scm(p_y_given=(0.5, 0.5))
        atom = AtomScm.from_scm(scm)
        rows = {("0", "a"): ("0", "1"), ("1", "a"): ("1", "0")}
        crafted = atom.override_variable(StateVar(1), (0.5, 0.5), rows)
        assert not check_binary_monotonic(crafted)

    def test_non_binary_input_rejected(self, m2):
        with pytest.raises(ModelError):
            check_binary_monotonic(m2)
