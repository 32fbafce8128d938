"""Sub-question set generation: prompt assembly, output parsing, and filters.

Two construction strategies exist: exploration builds the decomposition from
the question alone; exploitation first elicits a step-by-step candidate
solution and decomposes that. Model output is a JSON object keyed "Q1", "Q2",
... which parse_ars_response normalizes into the internal integer-indexed
form.
"""
from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, replace
from importlib import resources
from typing import Optional

from .backends import BackendError, Message, ModelBackend, RetryPolicy
from .models import (
    EXPLOITATION,
    AuxiliaryReasoningSet,
    MainQuestion,
    SubQuestion,
    validate_ars,
)

logger = logging.getLogger(__name__)

# FilterOutcome reasons
OK = "ok"
LEAKAGE = "leakage"
BELOW_BASELINE = "below_baseline"
PARSE_FAILURE = "parse_failure"


class ArsParseError(Exception):
    """Model output could not be turned into a decomposition."""


@dataclass(frozen=True)
class GenerationRequest:
    question: MainQuestion
    strategy: str
    candidate_reasoning: Optional[str] = None

    def __post_init__(self):
        if self.strategy == EXPLOITATION and not (self.candidate_reasoning or "").strip():
            raise ValueError("exploitation requires candidate_reasoning")


@dataclass(frozen=True)
class FilterOutcome:
    kept: bool
    reason: str
    detail: str = ""

    def __post_init__(self):
        if self.kept != (self.reason == OK):
            raise ValueError("kept must hold exactly when reason is ok")

    def to_dict(self) -> dict:
        return {"kept": self.kept, "reason": self.reason, "detail": self.detail}


def load_template(name_or_path: str) -> str:
    """Loads a prompt template by bundled name or filesystem path."""
    bundled = resources.files("stepeval.prompts") / f"{name_or_path}.txt"
    if bundled.is_file():
        return bundled.read_text(encoding="utf-8")
    with open(name_or_path, encoding="utf-8") as f:
        return f.read()


def template_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _render_options(question: MainQuestion) -> str:
    if not question.options:
        return ""
    return "Options:\n" + "\n".join(question.options)


def fill_template(template: str, **values: str) -> str:
    out = template
    for key, val in values.items():
        out = out.replace("{{" + key + "}}", val)
    return out


def build_exploration_prompt(question: MainQuestion,
                             template: Optional[str] = None) -> str:
    if not question.text.strip():
        raise ValueError(f"question {question.id} has empty text")
    template = template if template is not None else load_template("exploration")
    return fill_template(
        template, question=question.text, options=_render_options(question)
    )


def build_exploitation_prompt(question: MainQuestion, candidate_reasoning: str,
                              template: Optional[str] = None) -> str:
    if not question.text.strip():
        raise ValueError(f"question {question.id} has empty text")
    if not (candidate_reasoning or "").strip():
        raise ValueError(f"question {question.id}: candidate_reasoning is required")
    template = template if template is not None else load_template("exploitation")
    return fill_template(
        template,
        question=question.text,
        options=_render_options(question),
        candidate_reasoning=candidate_reasoning,
    )


def step1_reasoning(question: MainQuestion, backend: ModelBackend,
                    retry: Optional[RetryPolicy] = None,
                    template: Optional[str] = None, *,
                    sampling=None) -> str:
    """Elicits the candidate step-by-step solution used by exploitation."""
    from .models import SamplingParams

    template = template if template is not None else load_template("step1_reasoning")
    prompt = fill_template(template, question=question.text,
                           options=_render_options(question))
    retry = retry or RetryPolicy()
    sampling = sampling or SamplingParams(temperature=0.0)
    messages = [Message("user", prompt, image_ref=question.image_ref)]
    try:
        text, _ = retry.call(backend, messages, sampling)
    except BackendError as e:
        raise BackendError(f"question {question.id}: {e}", retriable=e.retriable) from e
    return text


_QKEY = re.compile(r"^Q(\d+)$")


def _extract_json_object(raw: str) -> dict:
    """First balanced JSON object in raw text, fences and prose tolerated."""
    start = raw.find("{")
    while start != -1:
        depth = 0
        in_str = False
        esc = False
        for pos in range(start, len(raw)):
            ch = raw[pos]
            if esc:
                esc = False
            elif ch == "\\":
                esc = True
            elif ch == '"':
                in_str = not in_str
            elif not in_str:
                if ch == "{":
                    depth += 1
                elif ch == "}":
                    depth -= 1
                    if depth == 0:
                        try:
                            return json.loads(raw[start:pos + 1])
                        except json.JSONDecodeError:
                            break
        start = raw.find("{", start + 1)
    raise ArsParseError("no JSON object found in model output")


def _parse_flag(value, default: bool, notes: list[str], context: str) -> bool:
    if value is None:
        notes.append(f"{context}: missing flag, defaulted to {'Yes' if default else 'No'}")
        return default
    if isinstance(value, bool):
        notes.append(f"{context}: boolean flag normalized")
        return value
    if isinstance(value, str) and value.strip().lower() in ("yes", "no"):
        return value.strip().lower() == "yes"
    raise ArsParseError(f"{context}: flag value {value!r} is not yes/no")


def _parse_dep(value, notes: list[str], context: str) -> int:
    if isinstance(value, int) and not isinstance(value, bool):
        notes.append(f"{context}: integer dependency {value} normalized from non-'Qk' form")
        return value
    if isinstance(value, str):
        m = _QKEY.match(value.strip())
        if m:
            return int(m.group(1))
    raise ArsParseError(f"{context}: dependency {value!r} is neither 'Qk' nor an integer")


def parse_ars_response(raw: str, question_id: str, *,
                       strategy: str = "exploration",
                       generator_model: str = "unknown") -> tuple[AuxiliaryReasoningSet, list[str]]:
    """Parses generator output into a decomposition plus normalization notes.

    Raises ArsParseError when no JSON object is present, a key is not of the
    form "Qk", or a "question" field is missing. Structural DAG problems are
    not raised here; run validate_ars on the result.
    """
    obj = _extract_json_object(raw)
    if not obj:
        raise ArsParseError("empty JSON object")
    notes: list[str] = []
    entries: list[tuple[int, dict]] = []
    for key, val in obj.items():
        m = _QKEY.match(key)
        if not m:
            raise ArsParseError(f"non-'Qk' top-level key: {key!r}")
        if not isinstance(val, dict) or "question" not in val:
            raise ArsParseError(f"{key}: missing 'question' field")
        entries.append((int(m.group(1)), val))
    entries.sort(key=lambda e: e[0])

    subs = []
    for k, val in entries:
        ctx = f"Q{k}"
        deps = tuple(
            _parse_dep(d, notes, ctx) for d in val.get("depends_on_sub_question", [])
        )
        subs.append(
            SubQuestion(
                index=k,
                text=str(val["question"]),
                depends_on_sub_question=deps,
                depends_on_text=_parse_flag(val.get("depends_on_text"), True, notes, ctx),
                depends_on_image=_parse_flag(val.get("depends_on_image"), False, notes, ctx),
            )
        )
    ars = AuxiliaryReasoningSet(
        question_id=question_id,
        sub_questions=tuple(subs),
        strategy=strategy,
        generator_model=generator_model,
    )
    return ars, notes


def render_ars(ars: AuxiliaryReasoningSet) -> dict:
    """Inverse of parse_ars_response: the external "Qk"-keyed document."""
    doc = {}
    for sq in ars.sub_questions:
        doc[f"Q{sq.index}"] = {
            "question": sq.text,
            "depends_on_sub_question": [f"Q{d}" for d in sq.depends_on_sub_question],
            "depends_on_text": "Yes" if sq.depends_on_text else "No",
            "depends_on_image": "Yes" if sq.depends_on_image else "No",
        }
    return doc


def render_ars_text(ars: AuxiliaryReasoningSet) -> str:
    return json.dumps(render_ars(ars), indent=2, ensure_ascii=False) + "\n"


def _normalize_text(s: str) -> str:
    return " ".join(s.split()).strip().casefold().rstrip(".?!")


@dataclass(frozen=True)
class LeakageResult:
    ars: AuxiliaryReasoningSet
    outcomes: tuple[FilterOutcome, ...]  # aligned to the input sub-questions
    all_removed: bool


def leakage_filter(ars: AuxiliaryReasoningSet, question: MainQuestion,
                   backend: ModelBackend, retry: Optional[RetryPolicy] = None,
                   judge_template: Optional[str] = None) -> LeakageResult:
    """Removes sub-questions that restate the main question.

    Exact textual matches are removed without a backend call; otherwise a
    judge prompt asks the backend for a Yes/No verdict. Backend failure keeps
    the sub-question (fail-open) with a parse_failure outcome. Dependents of
    a removed node inherit its dependencies; indices are re-compacted.
    """
    from .models import SamplingParams

    judge_template = judge_template if judge_template is not None else load_template("leakage_judge")
    retry = retry or RetryPolicy()
    outcomes: list[FilterOutcome] = []
    removed: set[int] = set()
    q_norm = _normalize_text(question.text)
    for sq in ars.sub_questions:
        if _normalize_text(sq.text) == q_norm:
            outcomes.append(FilterOutcome(False, LEAKAGE, "identical to main question"))
            removed.add(sq.index)
            continue
        prompt = fill_template(judge_template, question=question.text, sub_question=sq.text)
        try:
            verdict, _ = retry.call(backend, [Message("user", prompt)],
                                    SamplingParams(temperature=0.0))
        except BackendError as e:
            logger.warning("leakage judge failed for %s/Q%d, keeping: %s",
                           question.id, sq.index, e)
            outcomes.append(FilterOutcome(True, OK, f"judge failed, retained: {e}"))
            continue
        if verdict.strip().casefold().startswith("yes"):
            outcomes.append(FilterOutcome(False, LEAKAGE, "judge verdict: yes"))
            removed.add(sq.index)
        else:
            outcomes.append(FilterOutcome(True, OK))
    new_ars = remove_sub_questions(ars, removed) if removed else ars
    return LeakageResult(new_ars, tuple(outcomes), all_removed=new_ars.n == 0)


def remove_sub_questions(ars: AuxiliaryReasoningSet,
                         removed: set[int]) -> AuxiliaryReasoningSet:
    """Graph rewrite: dependents of a removed node inherit its dependencies."""
    deps: dict[int, set[int]] = {
        sq.index: set(sq.depends_on_sub_question) for sq in ars.sub_questions
    }
    # Iterate until no removed index remains in any surviving dependency set.
    for _ in range(len(removed) + 1):
        dirty = False
        for i, d in deps.items():
            hit = d & removed
            if hit and i not in removed:
                for r in hit:
                    d.discard(r)
                    d |= deps[r] - {i}
                dirty = True
        if not dirty:
            break
    survivors = [sq for sq in ars.sub_questions if sq.index not in removed]
    remap = {sq.index: pos for pos, sq in enumerate(survivors, start=1)}
    subs = tuple(
        replace(
            sq,
            index=remap[sq.index],
            depends_on_sub_question=tuple(
                sorted(remap[d] for d in deps[sq.index] if d in remap)
            ),
        )
        for sq in survivors
    )
    out = replace(ars, sub_questions=subs)
    if subs:
        report = validate_ars(out)
        if not report.valid:
            raise RuntimeError(f"graph rewrite produced invalid DAG: {report.violations}")
    return out


def quality_filter(ars_accuracy: float, baseline_accuracy: float) -> FilterOutcome:
    """Keeps a decomposition unless its accuracy fell below the baseline."""
    for name, v in (("ars_accuracy", ars_accuracy), ("baseline_accuracy", baseline_accuracy)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name}={v} outside [0, 1]")
    if ars_accuracy >= baseline_accuracy:
        return FilterOutcome(True, OK, f"{ars_accuracy:.4f} >= {baseline_accuracy:.4f}")
    return FilterOutcome(False, BELOW_BASELINE,
                         f"{ars_accuracy:.4f} < {baseline_accuracy:.4f}")
