import json

import pytest
from hypothesis import given, strategies as st

from stepeval.generation import parse_ars_response, render_ars, render_ars_text
from stepeval.models import (
    CYCLE,
    DANGLING,
    EMPTY_TEXT,
    SELF_DEPENDENCY,
    AuxiliaryReasoningSet,
    InvalidDecompositionError,
    SubQuestion,
    relabel_topologically,
    topo_order,
    validate_ars,
)

from conftest import chain_ars


def ars_from_deps(deps: list[list[int]], question_id="q") -> AuxiliaryReasoningSet:
    subs = tuple(
        SubQuestion(index=i, text=f"step {i}", depends_on_sub_question=tuple(d))
        for i, d in enumerate(deps, start=1)
    )
    return AuxiliaryReasoningSet(question_id=question_id, sub_questions=subs)


class TestValidate:
    def test_chain_is_valid(self):
        report = validate_ars(chain_ars("q", ["a", "b", "c"]))
        assert report.valid
        assert report.topo == (1, 2, 3)

    def test_self_dependency(self):
        report = validate_ars(ars_from_deps([[], [2]]))
        assert not report.valid
        assert any(v.index == 2 and v.kind == SELF_DEPENDENCY for v in report.violations)

    def test_two_cycle(self):
        report = validate_ars(ars_from_deps([[3], [], [1]]))
        kinds = {(v.index, v.kind) for v in report.violations}
        assert (1, CYCLE) in kinds and (3, CYCLE) in kinds

    def test_dangling_reference(self):
        report = validate_ars(ars_from_deps([[], [7]]))
        assert any(v.kind == DANGLING for v in report.violations)

    def test_empty_text(self):
        ars = AuxiliaryReasoningSet("q", (SubQuestion(index=1, text="  "),))
        assert any(v.kind == EMPTY_TEXT for v in validate_ars(ars).violations)


class TestTopoOrder:
    def test_independent_nodes_tie_break_by_index(self):
        assert topo_order(ars_from_deps([[], [], []])) == [1, 2, 3]

    def test_unique_order_by_enumeration(self):
        # Q3 deps [1], Q2 deps [3]: the only legal order among all 6
        # permutations is [1, 3, 2].
        ars = ars_from_deps([[], [3], [1]])
        assert topo_order(ars) == [1, 3, 2]

    def test_diamond_fan_in(self):
        # Three extraction nodes, two middle nodes reading them, one last node.
        ars = ars_from_deps([[], [], [], [1, 2], [1, 3], [4, 5]])
        order = topo_order(ars)
        pos = {i: order.index(i) for i in range(1, 7)}
        assert all(pos[i] < pos[4] for i in (1, 2))
        assert all(pos[i] < pos[5] for i in (1, 3))
        assert pos[4] < pos[6] and pos[5] < pos[6]
        assert order[:3] == [1, 2, 3]

    def test_cyclic_raises(self):
        with pytest.raises(InvalidDecompositionError):
            topo_order(ars_from_deps([[2], [1]]))

    def test_relabel_makes_deps_precede(self):
        ars = ars_from_deps([[3], [], []])
        fixed = relabel_topologically(ars)
        for sq in fixed.sub_questions:
            assert all(d < sq.index for d in sq.depends_on_sub_question)


@st.composite
def random_dags(draw, max_n=10):
    n = draw(st.integers(min_value=1, max_value=max_n))
    deps = []
    for i in range(1, n + 1):
        pool = list(range(1, i))
        deps.append(draw(st.lists(st.sampled_from(pool), unique=True, max_size=len(pool))
                         if pool else st.just([])))
    return ars_from_deps(deps)


@st.composite
def random_graphs(draw, max_n=10):
    """Arbitrary dependency structure, cycles allowed."""
    n = draw(st.integers(min_value=1, max_value=max_n))
    deps = []
    for i in range(1, n + 1):
        pool = [j for j in range(1, n + 1) if j != i]
        deps.append(draw(st.lists(st.sampled_from(pool), unique=True, max_size=len(pool))
                         if pool else st.just([])))
    return ars_from_deps(deps)


@given(random_dags())
def test_topo_is_valid_permutation(ars):
    order = topo_order(ars)
    assert sorted(order) == list(range(1, ars.n + 1))
    pos = {i: p for p, i in enumerate(order)}
    for sq in ars.sub_questions:
        for d in sq.depends_on_sub_question:
            assert pos[d] < pos[sq.index]


def brute_force_has_cycle(ars) -> bool:
    n = ars.n
    edge = {(sq.index, d) for sq in ars.sub_questions for d in sq.depends_on_sub_question}
    reach = dict.fromkeys(edge, True)
    for mid in range(1, n + 1):
        for a in range(1, n + 1):
            for b in range(1, n + 1):
                if (a, mid) in reach and (mid, b) in reach:
                    reach[(a, b)] = True
    return any((i, i) in reach for i in range(1, n + 1))


@given(random_graphs())
def test_cycle_flag_matches_reachability_oracle(ars):
    report = validate_ars(ars)
    flagged = any(v.kind == CYCLE for v in report.violations)
    assert flagged == brute_force_has_cycle(ars)


@given(random_dags())
def test_json_round_trip(ars):
    doc = render_ars(ars)
    # relabel so indices are exactly 1..n in declaration order, as rendered
    parsed, notes = parse_ars_response(json.dumps(doc), ars.question_id)
    assert render_ars(parsed) == doc
    assert notes == []
    assert render_ars_text(parsed) == render_ars_text(ars)
