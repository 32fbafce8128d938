import math
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from stepeval.consistency import (
    EXACT_NORMALIZED,
    NUMERIC_TOLERANT,
    PZC_EPS,
    AnswerEquivalence,
    NotEnoughPathsError,
    agreement_matrix,
    compute_consistency,
    consistency_gap,
    equivalent,
    normalize_answer,
    parse_number,
    path_metrics,
    question_metrics,
)
from stepeval.models import PathSet

from conftest import make_pathset

EQ = AnswerEquivalence(mode=NUMERIC_TOLERANT)
EXACT = AnswerEquivalence(mode=EXACT_NORMALIZED)


class TestEquivalence:
    @pytest.mark.parametrize("a,b", [
        ("Yes", " yes."),
        ("130", "130°"),
        ("45 degrees", "45"),
        ("A  and  B", "a and b"),
    ])
    def test_normalized_matches(self, a, b):
        assert equivalent(a, b, EXACT)

    def test_distinct_numbers_differ(self):
        assert not equivalent("130", "80", EQ)

    @pytest.mark.parametrize("a,b", [
        ("0.5", "1/2"),
        ("0.25", "1/4"),
        ("2", "4/2"),
        ("1,000", "1000"),
        ("-0.75", "-3/4"),
        ("(5/4)", "1.25"),
    ])
    def test_fraction_decimal_pairs(self, a, b):
        # oracle: evaluate both sides exactly with Fraction
        def exact(s):
            s = s.strip("() ").replace(",", "")
            if "/" in s:
                num, den = s.split("/")
                return Fraction(num) / Fraction(den)
            return Fraction(s)
        assert exact(a) == exact(b)
        assert equivalent(a, b, EQ)

    def test_unparseable_radical_falls_back_to_string(self):
        assert parse_number("6√17") is None
        assert equivalent("6√17", "6√17", EQ)
        assert not equivalent("6√17", "24", EQ)

    def test_coordinates_are_not_conflated(self):
        assert not equivalent("(3,1)", "(31)", EQ)
        assert equivalent("(3,1)", "(3,1)", EQ)

    @given(st.text(max_size=30))
    def test_reflexive(self, s):
        assert equivalent(s, s, EQ)

    @given(st.text(max_size=30), st.text(max_size=30))
    def test_symmetric(self, a, b):
        assert equivalent(a, b, EQ) == equivalent(b, a, EQ)

    def test_normalize_strips_trailing_punctuation(self):
        assert normalize_answer("42.") == "42"
        assert normalize_answer("  x ,") == "x"


class TestAgreementMatrix:
    def test_hand_enumerated_row(self):
        ps = make_pathset("q", [["a", "a", "b"]], ["f", "f", "f"])
        m = agreement_matrix(ps, EQ)
        assert [m.c(0, j) for j in range(3)] == [2 / 3, 2 / 3, 1 / 3]

    def test_all_identical_gives_ones(self):
        ps = make_pathset("q", [["a"] * 4, ["b"] * 4], ["f"] * 4)
        m = agreement_matrix(ps, EQ)
        assert all(m.c(i, j) == 1.0 for i in range(2) for j in range(4))

    def test_total_disagreement_floor(self):
        ps = make_pathset("q", [["a", "b"], ["c", "d"]], ["f", "g"])
        m = agreement_matrix(ps, EQ)
        assert all(m.c(i, j) == 0.5 for i in range(2) for j in range(2))

    def test_needs_two_complete_paths(self):
        ps = make_pathset("q", [["a", "a"]], ["f", "f"])
        only_one = PathSet(question_id="q", ars=ps.ars,
                           paths=(ps.paths[0],))
        with pytest.raises(NotEnoughPathsError):
            agreement_matrix(only_one, EQ)


class TestPathMetrics:
    def test_hand_computed_column(self):
        # n=2, column [2/3, 1]
        ps = make_pathset("q", [["a", "a", "b"], ["x", "x", "x"]], ["f"] * 3)
        m = agreement_matrix(ps, EQ)
        pc = path_metrics(m, 0)
        assert pc.pmc == pytest.approx(5 / 6, abs=1e-15)
        assert pc.pdc == pytest.approx(1 / 6, abs=1e-15)
        assert not pc.degenerate

    def test_degenerate_constant_column(self):
        ps = make_pathset("q", [["a", "a", "b"], ["a", "a", "b"]], ["f"] * 3)
        m = agreement_matrix(ps, EQ)
        pc = path_metrics(m, 0)
        assert pc.degenerate and pc.pdc == 0.0
        n, v = 2, 2 / 3
        assert pc.pzc == pytest.approx(math.log((n - 1) * v / PZC_EPS))

    def test_reported_scale_implies_positive_deviation(self):
        # For plausible published magnitudes (pmc 0.92, pzc 5.83) the implied
        # deviation (n-1)*pmc/e^pzc must come out positive.
        for pmc, pzc in [(0.92, 5.83), (0.79, 3.83)]:
            for n in range(2, 12):
                assert (n - 1) * pmc / math.exp(pzc) > 0

    def test_pzc_identity_non_degenerate(self):
        ps = make_pathset("q", [["a", "a", "b"], ["x", "x", "x"]], ["f"] * 3)
        m = agreement_matrix(ps, EQ)
        for j in range(3):
            pc = path_metrics(m, j)
            assert pc.pzc == pytest.approx(
                math.log((m.n - 1) * pc.pmc / pc.pdc), abs=1e-9)


class TestQuestionMetrics:
    def test_all_ones(self):
        ps = make_pathset("q", [["a"] * 3], ["f"] * 3)
        bundle = compute_consistency(ps, EQ)
        assert bundle.question.gmc == 1.0

    def test_hand_computed_gmc(self):
        ps = make_pathset("q", [["a", "a", "b"], ["x", "x", "x"]], ["f"] * 3)
        m = agreement_matrix(ps, EQ)
        q = question_metrics(m, ps, EQ)
        assert q.gmc == pytest.approx(7 / 9, abs=1e-15)

    def test_majority_tie_is_absent(self):
        ps = make_pathset("q", [["a", "b"]], ["f", "f"])
        m = agreement_matrix(ps, EQ)
        q = question_metrics(m, ps, EQ)
        assert q.majority == (None,)

    def test_majority_representative(self):
        ps = make_pathset("q", [["a", "a", "b"]], ["x", "x", "y"])
        m = agreement_matrix(ps, EQ)
        q = question_metrics(m, ps, EQ)
        assert q.majority == ("a",)
        assert q.majority_final == "x"

    def test_gap_arithmetic(self):
        assert consistency_gap(Fraction(5, 6), Fraction(7, 9)) == Fraction(1, 18)
        assert consistency_gap(0.4, 0.4) == 0.0


# ---------------------------------------------------------------------------
# Brute-force oracle: exact-rational enumeration straight from the raw answers.

def oracle_metrics(rows, finals, eq):
    n, k = len(rows), len(finals)
    c = [[Fraction(sum(1 for j2 in range(k) if equivalent(rows[i][j2], rows[i][j], eq)), k)
          for j in range(k)] for i in range(n)]
    pmc = [sum(c[i][j] for i in range(n)) / n for j in range(k)]
    gmc = sum(sum(row) for row in c) / (n * k)
    pdc = [
        math.sqrt(sum((float(c[i][j]) - float(pmc[j])) ** 2 for i in range(n)) / n)
        for j in range(k)
    ]
    cg = [pmc[j] - gmc for j in range(k)]
    return c, pmc, pdc, gmc, cg


answers = st.sampled_from(["a", "b", "c", "d"])


@st.composite
def random_pathsets(draw):
    n = draw(st.integers(min_value=1, max_value=8))
    k = draw(st.integers(min_value=2, max_value=10))
    rows = [draw(st.lists(answers, min_size=k, max_size=k)) for _ in range(n)]
    finals = draw(st.lists(answers, min_size=k, max_size=k))
    return rows, finals


@settings(max_examples=200, deadline=None)
@given(random_pathsets())
def test_metrics_match_oracle(case):
    rows, finals = case
    ps = make_pathset("q", rows, finals)
    bundle = compute_consistency(ps, EQ)
    c, pmc, pdc, gmc, cg = oracle_metrics(rows, finals, EQ)
    m = bundle.matrix
    for i in range(m.n):
        for j in range(m.k):
            assert abs(m.c(i, j) - float(c[i][j])) < 1e-12
    for j, pc in enumerate(bundle.per_path):
        assert abs(pc.pmc - float(pmc[j])) < 1e-12
        assert abs(pc.pdc - pdc[j]) < 1e-12
        assert abs(pc.cg - float(cg[j])) < 1e-12
    assert abs(bundle.question.gmc - float(gmc)) < 1e-12
    assert abs(sum(pc.cg for pc in bundle.per_path)) < 1e-9


@settings(max_examples=100, deadline=None)
@given(random_pathsets(), st.randoms(use_true_random=False))
def test_column_permutation_invariance(case, rng):
    rows, finals = case
    k = len(finals)
    perm = list(range(k))
    rng.shuffle(perm)
    ps = make_pathset("q", rows, finals)
    ps2 = make_pathset("q", [[row[p] for p in perm] for row in rows],
                       [finals[p] for p in perm])
    b1 = compute_consistency(ps, EQ)
    b2 = compute_consistency(ps2, EQ)
    assert b1.question.gmc == pytest.approx(b2.question.gmc, abs=1e-12)
    # path j of ps2 is path perm[j] of ps
    for j2, pc2 in enumerate(b2.per_path):
        pc1 = b1.per_path[perm[j2]]
        assert pc2.pmc == pytest.approx(pc1.pmc, abs=1e-12)
        assert pc2.pdc == pytest.approx(pc1.pdc, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(random_pathsets())
def test_relabeling_invariance(case):
    rows, finals = case
    relabel = {"a": "zebra", "b": "yak", "c": "xerus", "d": "wombat"}
    ps = compute_consistency(make_pathset("q", rows, finals), EQ)
    ps2 = compute_consistency(
        make_pathset("q", [[relabel[a] for a in row] for row in rows],
                     [relabel[f] for f in finals]), EQ)
    for pc1, pc2 in zip(ps.per_path, ps2.per_path):
        assert pc1.pmc == pc2.pmc and pc1.pdc == pc2.pdc and pc1.pzc == pc2.pzc
    assert ps.question.gmc == ps2.question.gmc


@settings(max_examples=150, deadline=None)
@given(random_pathsets())
def test_metric_bounds(case):
    rows, finals = case
    bundle = compute_consistency(make_pathset("q", rows, finals), EQ)
    k = bundle.matrix.k
    for pc in bundle.per_path:
        assert 1 / k - 1e-12 <= pc.pmc <= 1 + 1e-12
        assert -1e-12 <= pc.pdc <= 0.5 + 1e-12
