import pytest
from hypothesis import given, settings, strategies as st

from stepeval.consistency import AnswerEquivalence, compute_consistency
from stepeval.diagnostics import (
    FLAG_FINAL_ONLY,
    RELIABLE_CORRECT,
    RELIABLE_INCORRECT,
    UNCERTAIN,
    RegionConfig,
    SimulatorConfig,
    classify_region,
    diagnose_pathset,
    final_correct,
    improvement_curve,
    inject_and_recover,
    threshold_sweep,
)

from conftest import make_pathset, question

EQ = AnswerEquivalence()


def diagnose(rows, finals, gold=None, qid="q"):
    ps = make_pathset(qid, rows, finals)
    q = question(qid=qid, gold=gold)
    return diagnose_pathset(ps, q, EQ, RegionConfig(0.5))


class TestFinalCorrect:
    def test_gold_mismatch(self):
        ps = make_pathset("q", [["40", "40"]], ["65", "25"])
        q = question(gold="25")
        assert final_correct(ps.paths[0], q, EQ, None) is False
        assert final_correct(ps.paths[1], q, EQ, None) is True

    def test_normalized_gold_match(self):
        ps = make_pathset("q", [["x", "x"]], ["24", "24.0"])
        q = question(gold="24")
        assert final_correct(ps.paths[1], q, EQ, None) is True

    def test_majority_fallback_without_gold(self):
        bundle, diags = diagnose([["a", "a", "a"]], ["x", "x", "y"])
        assert [d.correct_final for d in diags] == [True, True, False]

    def test_tied_majority_without_gold_is_undefined(self):
        bundle, diags = diagnose([["a", "a"]], ["x", "y"])
        assert all(d.correct_final is None for d in diags)


class TestFirstFailureStep:
    def test_deviation_with_wrong_final(self):
        # 3 consensus paths, 1 deviating at step 5 with a wrong final answer
        rows = [["40"] * 4, ["Yes"] * 4, ["90"] * 4, ["50"] * 4,
                ["80", "80", "80", "130"]]
        finals = ["25", "25", "25", "65"]
        bundle, diags = diagnose(rows, finals, gold="25")
        assert diags[3].ffs == 5
        assert all(d.ffs is None for d in diags[:3])

    def test_correct_path_has_no_ffs(self):
        bundle, diags = diagnose([["a", "a", "b"]], ["f", "f", "f"], gold="f")
        assert all(d.ffs is None for d in diags)

    def test_final_only_failure_flag(self):
        rows = [["a"] * 3, ["b"] * 3]
        bundle, diags = diagnose(rows, ["f", "f", "g"], gold="f")
        assert diags[2].ffs is None
        assert FLAG_FINAL_ONLY in diags[2].flags

    def test_tied_step_cannot_trigger(self):
        # step 1 is tied 2-2, step 2 has consensus; wrong path deviates at both
        rows = [["a", "a", "b", "b"], ["x", "x", "x", "y"]]
        finals = ["f", "f", "f", "g"]
        bundle, diags = diagnose(rows, finals, gold="f")
        assert bundle.question.majority[0] is None
        assert diags[3].ffs == 2

    def test_minimality_by_scan(self):
        rows = [["a", "a", "z"], ["b", "b", "w"], ["c", "c", "v"]]
        bundle, diags = diagnose(rows, ["f", "f", "g"], gold="f")
        d = diags[2]
        assert d.ffs == 1
        path = make_pathset("q", rows, ["f", "f", "g"]).paths[2]
        for i in range(1, d.ffs):
            consensus = bundle.question.majority[i - 1]
            assert consensus is None or path.answer(i) == consensus


class TestRegions:
    @pytest.mark.parametrize("pmc,gmc,t,expected", [
        (1.0, 1.0, 0.5, RELIABLE_CORRECT),
        (0.3, 0.4, 0.5, RELIABLE_INCORRECT),
        (0.5, 0.4, 0.5, UNCERTAIN),
        (0.6, 0.6, 0.6, RELIABLE_CORRECT),   # boundary: gmc == t counts as above
        (0.39, 0.4, 0.4, UNCERTAIN),         # gmc == t blocks reliable-incorrect
    ])
    def test_classification(self, pmc, gmc, t, expected):
        assert classify_region(pmc, gmc, RegionConfig(t)) == expected

    def test_partition_is_total_and_exclusive(self):
        import itertools
        for pmc, gmc, t in itertools.product([0, 0.25, 0.5, 0.75, 1.0], repeat=3):
            assert classify_region(pmc, gmc, RegionConfig(t)) in (
                RELIABLE_CORRECT, RELIABLE_INCORRECT, UNCERTAIN)


class TestThresholdSweep:
    def test_single_path_counted(self):
        pts = threshold_sweep([(0.9, 0.8, True)], t_grid=[0.5])
        assert pts[0].counts[RELIABLE_CORRECT] == 1
        assert pts[0].accuracies[RELIABLE_CORRECT] == 1.0

    def test_t_zero_has_no_reliable_incorrect(self):
        pts = threshold_sweep([(0.1, 0.2, False), (0.9, 0.5, True)], t_grid=[0.0])
        assert pts[0].counts[RELIABLE_INCORRECT] == 0

    def test_counts_sum_to_total(self):
        paths = [(0.2, 0.3, False), (0.9, 0.7, True), (0.5, 0.5, None)]
        for pt in threshold_sweep(paths):
            assert sum(pt.counts.values()) == 3

    def test_planted_population_matches_hand_table(self):
        paths = [
            (0.95, 0.9, True),    # rc for t <= 0.9
            (0.85, 0.9, True),    # below gmc, gmc high: uncertain or rc never
            (0.30, 0.40, False),  # ri for t > 0.4
            (0.45, 0.40, False),  # pmc >= gmc: uncertain once gmc < t
        ]
        pts = {p.t: p for p in threshold_sweep(paths, t_grid=[0.0, 0.5, 1.0])}
        assert pts[0.0].counts == {RELIABLE_CORRECT: 2, RELIABLE_INCORRECT: 0,
                                   UNCERTAIN: 2}
        assert pts[0.5].counts == {RELIABLE_CORRECT: 1, RELIABLE_INCORRECT: 1,
                                   UNCERTAIN: 2}
        assert pts[0.5].accuracies[RELIABLE_CORRECT] == 1.0
        assert pts[0.5].accuracies[RELIABLE_INCORRECT] == 0.0
        assert pts[1.0].counts[RELIABLE_CORRECT] == 0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1), st.booleans()),
                min_size=1, max_size=40))
def test_sweep_monotone_in_t(paths):
    grid = [i / 20 for i in range(21)]
    rc_sets = []
    ri_sets = []
    for t in grid:
        cfg = RegionConfig(t)
        rc_sets.append({i for i, (p, g, _) in enumerate(paths)
                        if classify_region(p, g, cfg) == RELIABLE_CORRECT})
        ri_sets.append({i for i, (p, g, _) in enumerate(paths)
                        if classify_region(p, g, cfg) == RELIABLE_INCORRECT})
    for a, b in zip(rc_sets, rc_sets[1:]):
        assert b <= a
    for a, b in zip(ri_sets, ri_sets[1:]):
        assert a <= b


class TestImprovementCurve:
    def test_uniform_improvement(self):
        pairs = [(0.8, 0.5)] * 5  # every question improves by exactly 0.3
        curve = dict(improvement_curve(pairs, [0.0, 0.3, 0.31, 1.0]))
        assert curve[0.0] == 1.0 and curve[0.3] == 1.0
        assert curve[0.31] == 0.0 and curve[1.0] == 0.0

    def test_mixed_improvements(self):
        pairs = [(1.0, 0.1), (0.6, 0.3), (0.3, 0.5)]  # gains 0.9, 0.3, -0.2
        curve = dict(improvement_curve(pairs, [0.3]))
        assert curve[0.3] == pytest.approx(2 / 3)

    def test_non_increasing_and_bounded(self):
        pairs = [(0.9, 0.2), (0.4, 0.4), (0.2, 0.7), (1.0, 0.0)]
        grid = [i / 10 for i in range(-10, 11)]
        curve = improvement_curve(pairs, grid)
        fracs = [f for _, f in curve]
        assert all(0.0 <= f <= 1.0 for f in fracs)
        assert all(a >= b for a, b in zip(fracs, fracs[1:]))

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            improvement_curve([(1.2, 0.0)], [0.0])


class TestInjectAndRecover:
    def test_single_plant_in_chain(self):
        # plant at node 2 of a 5-chain, 1 faulty path among 8
        from stepeval.diagnostics import simulate_planted_pathset
        from conftest import chain_ars
        ars = chain_ars("q", [f"s{i}" for i in range(1, 6)])
        ps = simulate_planted_pathset(ars, 8, planted=2, faulty_ids={3})
        q = question(gold="good-final")
        bundle, diags = diagnose_pathset(ps, q, EQ, RegionConfig(0.5))
        assert diags[2].ffs == 2

    def test_small_batch_full_recovery(self):
        report = inject_and_recover(SimulatorConfig(n_trials=50, seed=7))
        assert report.trials == 50
        assert report.no_consensus == 0  # 7 clean paths always dominate
        assert report.recovery_rate == 1.0

    def test_tied_consensus_counts_no_consensus(self):
        # 4 of 8 paths faulty at the same node: consensus ties at 4-4
        from stepeval.diagnostics import random_dag_ars, simulate_planted_pathset
        import random
        ars = random_dag_ars(random.Random(1), "q", 6)
        ps = simulate_planted_pathset(ars, 8, planted=1, faulty_ids={1, 2, 3, 4})
        bundle = compute_consistency(ps, EQ)
        assert bundle.question.majority[0] is None
