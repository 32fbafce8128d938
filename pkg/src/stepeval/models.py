"""Domain types: questions, sub-question decompositions, and sampled reasoning paths.

A decomposition is an ordered list of sub-questions whose dependency metadata
forms a DAG. All types are immutable values; validation is pure, so instances
are safe to share across workers.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, replace
from typing import Optional


class InvalidDecompositionError(Exception):
    """Raised when an operation requires a valid DAG but got a broken one."""


@dataclass(frozen=True)
class MainQuestion:
    id: str
    text: str
    image_ref: Optional[str] = None
    gold_answer: Optional[str] = None
    subject: Optional[str] = None
    options: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("question id must be non-empty")
        if self.options is not None and not isinstance(self.options, tuple):
            object.__setattr__(self, "options", tuple(self.options))

    @classmethod
    def from_dict(cls, d: dict) -> "MainQuestion":
        return cls(
            id=str(d["id"]),
            text=d["text"],
            image_ref=d.get("image_ref"),
            gold_answer=d.get("gold_answer"),
            subject=d.get("subject"),
            options=tuple(d["options"]) if d.get("options") else None,
        )

    def to_dict(self) -> dict:
        out: dict = {"id": self.id, "text": self.text}
        if self.image_ref is not None:
            out["image_ref"] = self.image_ref
        if self.gold_answer is not None:
            out["gold_answer"] = self.gold_answer
        if self.subject is not None:
            out["subject"] = self.subject
        if self.options is not None:
            out["options"] = list(self.options)
        return out


@dataclass(frozen=True)
class SubQuestion:
    """One node of the decomposition. ``index`` is the 1-based ordinal."""

    index: int
    text: str
    depends_on_sub_question: tuple[int, ...] = ()
    depends_on_text: bool = True
    depends_on_image: bool = False

    def __post_init__(self):
        if not isinstance(self.depends_on_sub_question, tuple):
            object.__setattr__(
                self, "depends_on_sub_question", tuple(self.depends_on_sub_question)
            )


EXPLORATION = "exploration"
EXPLOITATION = "exploitation"


@dataclass(frozen=True)
class AuxiliaryReasoningSet:
    """Ordered sub-questions plus dependency DAG for one main question."""

    question_id: str
    sub_questions: tuple[SubQuestion, ...]
    strategy: str = EXPLORATION
    generator_model: str = "unknown"

    def __post_init__(self):
        if not isinstance(self.sub_questions, tuple):
            object.__setattr__(self, "sub_questions", tuple(self.sub_questions))
        if self.strategy not in (EXPLORATION, EXPLOITATION):
            raise ValueError(f"unknown strategy: {self.strategy}")

    @property
    def n(self) -> int:
        return len(self.sub_questions)

    def sub_question(self, index: int) -> SubQuestion:
        sq = self.sub_questions[index - 1]
        if sq.index != index:
            raise InvalidDecompositionError(f"index mismatch at position {index}")
        return sq


@dataclass(frozen=True)
class SamplingParams:
    temperature: float
    top_p: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 1.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 1]")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError(f"top_p {self.top_p} outside (0, 1]")

    def to_dict(self) -> dict:
        return {"temperature": self.temperature, "top_p": self.top_p, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "SamplingParams":
        return cls(temperature=d["temperature"], top_p=d.get("top_p", 0.9), seed=d.get("seed", 0))


@dataclass(frozen=True)
class ReasoningPath:
    """One sampled trajectory: an answer per sub-question plus a final answer."""

    path_id: int
    sub_answers: tuple[str, ...]
    final_answer: str
    sampling: SamplingParams
    model: str = "unknown"
    complete: bool = True

    def __post_init__(self):
        if not isinstance(self.sub_answers, tuple):
            object.__setattr__(self, "sub_answers", tuple(self.sub_answers))

    def answer(self, index: int) -> str:
        return self.sub_answers[index - 1]


@dataclass(frozen=True)
class PathSet:
    question_id: str
    ars: AuxiliaryReasoningSet
    paths: tuple[ReasoningPath, ...]

    def __post_init__(self):
        if not isinstance(self.paths, tuple):
            object.__setattr__(self, "paths", tuple(self.paths))
        for p in self.paths:
            if p.complete and len(p.sub_answers) != self.ars.n:
                raise ValueError(
                    f"path {p.path_id} has {len(p.sub_answers)} answers, expected {self.ars.n}"
                )

    @property
    def k(self) -> int:
        return len(self.paths)

    def complete_paths(self) -> tuple[ReasoningPath, ...]:
        return tuple(p for p in self.paths if p.complete)


# Violation kinds reported by validate_ars.
CYCLE = "cycle"
DANGLING = "dangling-reference"
SELF_DEPENDENCY = "self-dependency"
EMPTY_TEXT = "empty-text"
DUPLICATE_INDEX = "duplicate-index"


@dataclass(frozen=True)
class Violation:
    index: int
    kind: str
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()
    notes: tuple[str, ...] = ()  # normalization notes, not failures
    topo: Optional[tuple[int, ...]] = None

    @property
    def valid(self) -> bool:
        return not self.violations

    def __post_init__(self):
        for attr in ("violations", "notes"):
            v = getattr(self, attr)
            if not isinstance(v, tuple):
                object.__setattr__(self, attr, tuple(v))


def validate_ars(ars: AuxiliaryReasoningSet, notes: tuple[str, ...] = ()) -> ValidationReport:
    """Structural check of the dependency DAG.

    Violations are data, not faults: the report lists every problem found.
    For a valid decomposition the report carries the canonical topological
    order (stable among independent nodes).
    """
    violations: list[Violation] = []
    seen: set[int] = set()
    indices = [sq.index for sq in ars.sub_questions]
    for sq in ars.sub_questions:
        if sq.index in seen:
            violations.append(Violation(sq.index, DUPLICATE_INDEX))
        seen.add(sq.index)
        if not sq.text.strip():
            violations.append(Violation(sq.index, EMPTY_TEXT))
        for d in sq.depends_on_sub_question:
            if d == sq.index:
                violations.append(Violation(sq.index, SELF_DEPENDENCY))
            elif d not in indices:
                violations.append(Violation(sq.index, DANGLING, f"depends on missing Q{d}"))

    if not any(v.kind in (DUPLICATE_INDEX, DANGLING) for v in violations):
        cyc = _cycle_nodes(ars)
        if cyc:
            members = ",".join(str(i) for i in sorted(cyc))
            for i in sorted(cyc):
                violations.append(Violation(i, CYCLE, f"cycle among {{{members}}}"))

    topo = None
    if not violations:
        topo = tuple(topo_order(ars))
    return ValidationReport(tuple(violations), tuple(notes), topo)


def _cycle_nodes(ars: AuxiliaryReasoningSet) -> set[int]:
    """Indices that can reach themselves, by transitive closure."""
    reach: dict[int, set[int]] = {
        sq.index: set(d for d in sq.depends_on_sub_question if d != sq.index)
        for sq in ars.sub_questions
    }
    changed = True
    while changed:
        changed = False
        for i, deps in reach.items():
            extra = set()
            for d in deps:
                extra |= reach.get(d, set())
            if not extra <= deps:
                deps |= extra
                changed = True
    return {i for i, deps in reach.items() if i in deps}


def topo_order(ars: AuxiliaryReasoningSet) -> list[int]:
    """Topological order of sub-question indices, ties broken by ascending index.

    Raises InvalidDecompositionError on cyclic or dangling input; run
    validate_ars first.
    """
    indeg: dict[int, int] = {}
    children: dict[int, list[int]] = {sq.index: [] for sq in ars.sub_questions}
    for sq in ars.sub_questions:
        deps = set(sq.depends_on_sub_question)
        if sq.index in deps or not deps <= children.keys():
            raise InvalidDecompositionError(f"bad dependencies at Q{sq.index}")
        indeg[sq.index] = len(deps)
        for d in deps:
            children[d].append(sq.index)
    ready = [i for i, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    order: list[int] = []
    while ready:
        i = heapq.heappop(ready)
        order.append(i)
        for c in children[i]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(ready, c)
    if len(order) != ars.n:
        raise InvalidDecompositionError("dependency graph is cyclic")
    return order


def relabel_topologically(ars: AuxiliaryReasoningSet) -> AuxiliaryReasoningSet:
    """Renumber sub-questions so every dependency index precedes its dependent.

    Declaration order among independent nodes is preserved (stable).
    """
    order = topo_order(ars)
    remap = {old: new for new, old in enumerate(order, start=1)}
    subs = []
    for old in order:
        sq = ars.sub_question(old)
        subs.append(
            replace(
                sq,
                index=remap[old],
                depends_on_sub_question=tuple(
                    sorted(remap[d] for d in sq.depends_on_sub_question)
                ),
            )
        )
    return replace(ars, sub_questions=tuple(subs))
