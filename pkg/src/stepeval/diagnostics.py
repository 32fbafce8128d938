"""Failure localization and confidence-region analysis.

The first failure step of a wrong path is the smallest sub-question index
whose answer deviates from an existing consensus. Region labels partition
paths by how their mean consistency sits relative to the question-level mean
and a threshold t.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .consistency import (
    AnswerEquivalence,
    ConsistencyBundle,
    compute_consistency,
    equivalent,
)
from .models import (
    AuxiliaryReasoningSet,
    MainQuestion,
    PathSet,
    ReasoningPath,
    SamplingParams,
    SubQuestion,
)

RELIABLE_CORRECT = "reliable-correct"
RELIABLE_INCORRECT = "reliable-incorrect"
UNCERTAIN = "uncertain"

FLAG_FINAL_ONLY = "final-only-failure"
FLAG_UNDEFINED_CORRECTNESS = "undefined-correctness"
FLAG_DEGENERATE = "degenerate"


@dataclass(frozen=True)
class RegionConfig:
    t: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.t <= 1.0:
            raise ValueError(f"threshold t={self.t} outside [0, 1]")


@dataclass(frozen=True)
class PathDiagnostics:
    path_id: int
    correct_final: Optional[bool]  # None when correctness is undefined
    ffs: Optional[int]
    region: str
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "path_id": self.path_id,
            "correct_final": self.correct_final,
            "ffs": self.ffs,
            "region": self.region,
            "flags": list(self.flags),
        }


def final_correct(path: ReasoningPath, question: MainQuestion, eq: AnswerEquivalence,
                  majority_final: Optional[str]) -> Optional[bool]:
    """Correctness against gold, else against the majority final answer.

    Returns None (undefined) when there is no gold answer and the final
    majority is tied; such paths are excluded from accuracy denominators.
    """
    if question.gold_answer is not None:
        return equivalent(path.final_answer, question.gold_answer, eq)
    if majority_final is None:
        return None
    return equivalent(path.final_answer, majority_final, eq)


def first_failure_step(path: ReasoningPath,
                       majority: Sequence[Optional[str]],
                       correct_final: Optional[bool],
                       eq: AnswerEquivalence) -> tuple[Optional[int], tuple[str, ...]]:
    """Smallest index deviating from an existing consensus, for wrong paths.

    Steps whose consensus is tied can never trigger; a wrong path with no
    deviating step gets the final-only-failure flag.
    """
    if correct_final is None:
        return None, (FLAG_UNDEFINED_CORRECTNESS,)
    if correct_final:
        return None, ()
    for i, consensus in enumerate(majority, start=1):
        if consensus is None:
            continue
        if not equivalent(path.answer(i), consensus, eq):
            return i, ()
    return None, (FLAG_FINAL_ONLY,)


def classify_region(pmc: float, gmc: float, cfg: RegionConfig) -> str:
    if gmc >= cfg.t and pmc >= gmc:
        return RELIABLE_CORRECT
    if gmc < cfg.t and pmc < gmc:
        return RELIABLE_INCORRECT
    return UNCERTAIN


def diagnose_pathset(pathset: PathSet, question: MainQuestion, eq: AnswerEquivalence,
                     cfg: RegionConfig, majority_scope: str = "all",
                     bundle: Optional[ConsistencyBundle] = None
                     ) -> tuple[ConsistencyBundle, tuple[PathDiagnostics, ...]]:
    bundle = bundle or compute_consistency(pathset, eq, majority_scope)
    paths = {p.path_id: p for p in pathset.complete_paths()}
    out = []
    for pc in bundle.per_path:
        path = paths[pc.path_id]
        correct = final_correct(path, question, eq, bundle.question.majority_final)
        ffs, flags = first_failure_step(path, bundle.question.majority, correct, eq)
        if pc.degenerate:
            flags = flags + (FLAG_DEGENERATE,)
        region = classify_region(pc.pmc, bundle.question.gmc, cfg)
        out.append(PathDiagnostics(pc.path_id, correct, ffs, region, flags))
    return bundle, tuple(out)


@dataclass(frozen=True)
class SweepPoint:
    t: float
    counts: dict[str, int]
    accuracies: dict[str, Optional[float]]


def default_t_grid(step: float = 0.05) -> list[float]:
    k = round(1.0 / step)
    return [round(i * step, 10) for i in range(k + 1)]


def threshold_sweep(paths: Sequence[tuple[float, float, Optional[bool]]],
                    t_grid: Optional[Sequence[float]] = None) -> list[SweepPoint]:
    """Region counts and accuracy per threshold.

    ``paths`` holds (pmc, gmc, correct_final) per path; undefined correctness
    is counted but excluded from accuracy.
    """
    grid = list(t_grid) if t_grid is not None else default_t_grid()
    points = []
    for t in grid:
        cfg = RegionConfig(t)
        counts = {RELIABLE_CORRECT: 0, RELIABLE_INCORRECT: 0, UNCERTAIN: 0}
        hits = {RELIABLE_CORRECT: 0, RELIABLE_INCORRECT: 0, UNCERTAIN: 0}
        graded = {RELIABLE_CORRECT: 0, RELIABLE_INCORRECT: 0, UNCERTAIN: 0}
        for pmc, gmc, correct in paths:
            region = classify_region(pmc, gmc, cfg)
            counts[region] += 1
            if correct is not None:
                graded[region] += 1
                if correct:
                    hits[region] += 1
        accuracies = {
            r: (hits[r] / graded[r] if graded[r] else None) for r in counts
        }
        points.append(SweepPoint(t=t, counts=counts, accuracies=accuracies))
    return points


def improvement_curve(pairs: Sequence[tuple[float, float]],
                      x_grid: Sequence[float]) -> list[tuple[float, float]]:
    """Fraction of questions whose (ars - baseline) accuracy gain is >= x."""
    for a, b in pairs:
        if not (0.0 <= a <= 1.0 and 0.0 <= b <= 1.0):
            raise ValueError(f"accuracy pair ({a}, {b}) outside [0, 1]")
    if not pairs:
        return [(float(x), 0.0) for x in x_grid]
    gains = [a - b for a, b in pairs]
    return [
        (float(x), sum(1 for g in gains if g >= x) / len(gains))
        for x in x_grid
    ]


# ---------------------------------------------------------------------------
# Fault-injection simulator: plant a first error and check it is recovered.

@dataclass(frozen=True)
class SimulatorConfig:
    n_trials: int = 500
    k: int = 8
    max_nodes: int = 10
    faulty_paths: int = 1
    seed: int = 0


@dataclass
class RecoveryReport:
    trials: int = 0
    recovered: int = 0
    no_consensus: int = 0
    mismatched: list[int] = field(default_factory=list)  # trial numbers

    @property
    def eligible(self) -> int:
        return self.trials - self.no_consensus

    @property
    def recovery_rate(self) -> float:
        return self.recovered / self.eligible if self.eligible else 1.0


def random_dag_ars(rng: random.Random, question_id: str, max_nodes: int = 10,
                   min_nodes: int = 2) -> AuxiliaryReasoningSet:
    """Random DAG whose dependency indices always precede the dependent."""
    n = rng.randint(min_nodes, max_nodes)
    subs = []
    for i in range(1, n + 1):
        pool = list(range(1, i))
        deps = tuple(sorted(rng.sample(pool, rng.randint(0, len(pool))))) if pool else ()
        subs.append(SubQuestion(index=i, text=f"step {i} of {question_id}",
                                depends_on_sub_question=deps,
                                depends_on_image=(i == 1)))
    return AuxiliaryReasoningSet(question_id=question_id, sub_questions=tuple(subs))


def _descendants(ars: AuxiliaryReasoningSet, root: int) -> set[int]:
    out: set[int] = set()
    frontier = {root}
    while frontier:
        nxt = set()
        for sq in ars.sub_questions:
            if sq.index in out or sq.index in frontier:
                continue
            if set(sq.depends_on_sub_question) & (frontier | out):
                nxt.add(sq.index)
        out |= frontier
        frontier = nxt
    out.discard(root)
    return out


def simulate_planted_pathset(ars: AuxiliaryReasoningSet, k: int, planted: int,
                             faulty_ids: set[int]) -> PathSet:
    """K paths where faulty ones first deviate at ``planted`` and corrupt all
    downstream answers and the final answer; clean paths agree everywhere."""
    corrupted = _descendants(ars, planted) | {planted}
    paths = []
    for j in range(1, k + 1):
        faulty = j in faulty_ids
        answers = tuple(
            f"bad-{i}" if faulty and i in corrupted else f"value-{i}"
            for i in range(1, ars.n + 1)
        )
        paths.append(ReasoningPath(
            path_id=j, sub_answers=answers,
            final_answer="bad-final" if faulty else "good-final",
            sampling=SamplingParams(temperature=0.2, seed=j),
            model="simulator",
        ))
    return PathSet(question_id=ars.question_id, ars=ars, paths=tuple(paths))


def inject_and_recover(cfg: SimulatorConfig, eq: Optional[AnswerEquivalence] = None
                       ) -> RecoveryReport:
    """Plants a single first-error node per faulty path across random DAGs and
    reports how often first_failure_step recovers the planted node."""
    eq = eq or AnswerEquivalence()
    rng = random.Random(cfg.seed)
    report = RecoveryReport()
    for trial in range(cfg.n_trials):
        ars = random_dag_ars(rng, f"sim-{trial}", cfg.max_nodes)
        planted = rng.randint(1, ars.n)
        faulty_ids = set(rng.sample(range(1, cfg.k + 1), cfg.faulty_paths))
        pathset = simulate_planted_pathset(ars, cfg.k, planted, faulty_ids)
        question = MainQuestion(id=ars.question_id, text="simulated",
                                gold_answer="good-final")
        bundle, diags = diagnose_pathset(pathset, question, eq, RegionConfig(0.5))
        for d in diags:
            if d.path_id not in faulty_ids:
                continue
            report.trials += 1
            if bundle.question.majority[planted - 1] is None:
                report.no_consensus += 1
            elif d.ffs == planted:
                report.recovered += 1
            else:
                report.mismatched.append(trial)
    return report
