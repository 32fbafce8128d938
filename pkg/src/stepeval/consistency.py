"""Agreement matrix and path/question consistency metrics.

For n sub-questions and K complete paths, c[i][j] is the fraction of paths
(including path j itself) whose answer at sub-question i is equivalent to
path j's answer. Per-path metrics summarize one column; the question-level
mean equals the mean of per-path means by construction.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Optional

from .models import PathSet

PZC_EPS = 1e-9

EXACT_NORMALIZED = "exact-normalized"
NUMERIC_TOLERANT = "numeric-tolerant"
JUDGE_BACKED = "judge-backed"


class NotEnoughPathsError(Exception):
    """Consistency needs at least two complete paths."""


@dataclass(frozen=True)
class AnswerEquivalence:
    mode: str = NUMERIC_TOLERANT
    numeric_rel_tol: float = 1e-6
    judge: Optional[object] = None  # backend used by judge-backed mode

    def __post_init__(self):
        if self.mode not in (EXACT_NORMALIZED, NUMERIC_TOLERANT, JUDGE_BACKED):
            raise ValueError(f"unknown equivalence mode: {self.mode}")


_TRAILING_JUNK = re.compile(r"[\s.,;:!?]+$")
_DEGREES = re.compile(r"(°|\bdegrees?\b)", re.IGNORECASE)


def normalize_answer(s: str) -> str:
    s = _DEGREES.sub("", s)
    s = " ".join(s.split()).strip()
    s = _TRAILING_JUNK.sub("", s)
    return s.casefold()


_FRACTION = re.compile(r"^([-+]?\d+(?:\.\d+)?)\s*/\s*(\d+(?:\.\d+)?)$")


_GROUPING_COMMA = re.compile(r"(?<=\d),(?=\d{3}\b)")


def parse_number(s: str) -> Optional[float]:
    """Numeric value of a plain number or simple fraction "a/b", else None."""
    s = _GROUPING_COMMA.sub("", normalize_answer(s)).lstrip("$").strip("()")
    m = _FRACTION.match(s)
    if m:
        denom = float(m.group(2))
        if denom == 0:
            return None
        return float(m.group(1)) / denom
    try:
        return float(s)
    except ValueError:
        return None


def equivalent(a: str, b: str, eq: AnswerEquivalence) -> bool:
    """Reflexive, symmetric answer comparison under the configured mode."""
    na, nb = normalize_answer(a), normalize_answer(b)
    if na == nb:
        return True
    if eq.mode == NUMERIC_TOLERANT or eq.mode == JUDGE_BACKED:
        va, vb = parse_number(a), parse_number(b)
        if va is not None and vb is not None:
            return math.isclose(va, vb, rel_tol=eq.numeric_rel_tol, abs_tol=0.0) or va == vb
    if eq.mode == JUDGE_BACKED and eq.judge is not None:
        verdict = _judge_equivalent(a, b, eq)
        if verdict is not None:
            return verdict
    return False


def _judge_equivalent(a: str, b: str, eq: AnswerEquivalence) -> Optional[bool]:
    from .backends import BackendError, Message
    from .models import SamplingParams

    prompt = (
        "Do the following two answers express the same value or choice?\n"
        f"Answer 1: {a}\nAnswer 2: {b}\n"
        "Reply with exactly one word: Yes or No."
    )
    try:
        text = eq.judge.complete([Message("user", prompt)], SamplingParams(temperature=0.0))
    except BackendError:
        return None  # degrade to exact-normalized result
    return text.strip().casefold().startswith("yes")


@dataclass(frozen=True)
class AgreementMatrix:
    """counts[i][j] is the number of paths agreeing with path j at row i."""

    counts: tuple[tuple[int, ...], ...]  # n rows x K columns
    k: int
    path_ids: tuple[int, ...]

    @property
    def n(self) -> int:
        return len(self.counts)

    def c(self, i: int, j: int) -> float:
        """Agreement fraction for row i, column j (0-based)."""
        return self.counts[i][j] / self.k

    def column(self, j: int) -> list[float]:
        return [row[j] / self.k for row in self.counts]


@dataclass(frozen=True)
class PathConsistency:
    path_id: int
    pmc: float
    pdc: float
    pzc: float
    cg: float
    degenerate: bool = False
    # Mean per-row z-score of this path's agreement values. Auxiliary
    # diagnostic only; not part of the metric family above.
    aux_mean_step_z: float = 0.0

    def to_dict(self) -> dict:
        return {
            "path_id": self.path_id,
            "pmc": self.pmc,
            "pdc": self.pdc,
            "pzc": self.pzc,
            "cg": self.cg,
            "degenerate": self.degenerate,
            "aux_mean_step_z": self.aux_mean_step_z,
        }


@dataclass(frozen=True)
class QuestionConsistency:
    gmc: float
    majority: tuple[Optional[str], ...]  # per sub-question; None = tied
    majority_final: Optional[str]

    def to_dict(self) -> dict:
        return {
            "gmc": self.gmc,
            "majority": list(self.majority),
            "majority_final": self.majority_final,
        }


def agreement_matrix(pathset: PathSet, eq: AnswerEquivalence) -> AgreementMatrix:
    """Builds the n x K agreement-count matrix over complete paths only."""
    paths = pathset.complete_paths()
    if len(paths) < 2:
        raise NotEnoughPathsError(
            f"question {pathset.question_id}: {len(paths)} complete paths, need >= 2"
        )
    k = len(paths)
    n = pathset.ars.n
    counts = []
    for i in range(1, n + 1):
        answers = [p.answer(i) for p in paths]
        row = tuple(
            sum(1 for other in answers if equivalent(other, mine, eq))
            for mine in answers
        )
        counts.append(row)
    return AgreementMatrix(tuple(counts), k, tuple(p.path_id for p in paths))


def path_metrics(matrix: AgreementMatrix, j: int, gmc: Optional[float] = None) -> PathConsistency:
    """Metrics for column j (0-based). cg is 0.0 until gmc is supplied."""
    col = matrix.column(j)
    n = matrix.n
    pmc = sum(col) / n
    pdc = math.sqrt(sum((v - pmc) ** 2 for v in col) / n)
    degenerate = len(set(matrix.counts[i][j] for i in range(n))) == 1
    if degenerate:
        pdc = 0.0
    numerator = sum(col) - pmc  # equals (n - 1) * pmc
    pzc = math.log(max(numerator, PZC_EPS) / max(pdc, PZC_EPS))
    row_z = []
    for i in range(n):
        row = [matrix.counts[i][jj] / matrix.k for jj in range(matrix.k)]
        mu = sum(row) / matrix.k
        sd = math.sqrt(sum((v - mu) ** 2 for v in row) / matrix.k)
        row_z.append((col[i] - mu) / sd if sd > 0 else 0.0)
    aux = sum(row_z) / n
    cg = pmc - gmc if gmc is not None else 0.0
    return PathConsistency(
        path_id=matrix.path_ids[j], pmc=pmc, pdc=pdc, pzc=pzc, cg=cg,
        degenerate=degenerate, aux_mean_step_z=aux,
    )


def _majority(answers: list[str], eq: AnswerEquivalence) -> Optional[str]:
    """Plurality representative under eq; None when the plurality is tied."""
    classes: list[tuple[str, int]] = []  # (representative, count)
    for a in answers:
        for pos, (rep, cnt) in enumerate(classes):
            if equivalent(a, rep, eq):
                classes[pos] = (rep, cnt + 1)
                break
        else:
            classes.append((a, 1))
    best = max(cnt for _, cnt in classes)
    winners = [rep for rep, cnt in classes if cnt == best]
    return winners[0] if len(winners) == 1 else None


def question_metrics(matrix: AgreementMatrix, pathset: PathSet, eq: AnswerEquivalence,
                     majority_scope: str = "all") -> QuestionConsistency:
    pmcs = [path_metrics(matrix, j).pmc for j in range(matrix.k)]
    gmc = sum(pmcs) / matrix.k
    flat = sum(matrix.c(i, j) for i in range(matrix.n) for j in range(matrix.k))
    assert abs(gmc - flat / (matrix.n * matrix.k)) < 1e-12

    paths = {p.path_id: p for p in pathset.complete_paths()}
    if majority_scope == "all":
        voters = [paths[pid] for pid in matrix.path_ids]
    elif majority_scope == "above_gmc":
        voters = [paths[pid] for j, pid in enumerate(matrix.path_ids)
                  if pmcs[j] >= gmc]
    else:
        raise ValueError(f"unknown majority_scope: {majority_scope}")
    majority = tuple(
        _majority([p.answer(i) for p in voters], eq) for i in range(1, matrix.n + 1)
    )
    majority_final = _majority([p.final_answer for p in voters], eq)
    return QuestionConsistency(gmc=gmc, majority=majority, majority_final=majority_final)


def consistency_gap(pmc: float, gmc: float) -> float:
    return pmc - gmc


@dataclass(frozen=True)
class ConsistencyBundle:
    matrix: AgreementMatrix
    per_path: tuple[PathConsistency, ...]
    question: QuestionConsistency


def compute_consistency(pathset: PathSet, eq: AnswerEquivalence,
                        majority_scope: str = "all") -> ConsistencyBundle:
    matrix = agreement_matrix(pathset, eq)
    question = question_metrics(matrix, pathset, eq, majority_scope)
    per_path = tuple(
        path_metrics(matrix, j, gmc=question.gmc) for j in range(matrix.k)
    )
    return ConsistencyBundle(matrix=matrix, per_path=per_path, question=question)
