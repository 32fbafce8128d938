"""DAG execution: per-node prompt assembly, path sampling, and trace storage.

Within a path, nodes run strictly in topological order so intermediate
answers can be injected into downstream prompts. The final prompt sees every
sub-question and answer, since the decomposition is meant to carry all the
information the main question needs.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .backends import BackendError, Message, ModelBackend, RetryPolicy
from .generation import render_ars
from .models import (
    AuxiliaryReasoningSet,
    MainQuestion,
    PathSet,
    ReasoningPath,
    SamplingParams,
    topo_order,
    validate_ars,
)

logger = logging.getLogger(__name__)

CONCISE_INSTRUCTION = "Answer with a concise value: number, label, or yes/no."


@dataclass(frozen=True)
class SamplingPlan:
    k: int
    temperatures: tuple[float, ...] = (0.0, 0.2, 0.4)
    top_p: float = 0.9
    base_seed: int = 0

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(f"k={self.k}, need at least 2 paths")
        if not isinstance(self.temperatures, tuple):
            object.__setattr__(self, "temperatures", tuple(self.temperatures))
        if not self.temperatures:
            raise ValueError("at least one temperature required")
        for t in self.temperatures:
            if not 0.0 <= t <= 0.5:
                raise ValueError(f"temperature {t} outside [0, 0.5]")

    def sampling_for(self, path_id: int) -> SamplingParams:
        """Temperatures cycle across paths; seeds are base_seed + path_id."""
        temp = self.temperatures[(path_id - 1) % len(self.temperatures)]
        return SamplingParams(temperature=temp, top_p=self.top_p,
                              seed=self.base_seed + path_id)

    def to_dict(self) -> dict:
        return {"k": self.k, "temperatures": list(self.temperatures),
                "top_p": self.top_p, "base_seed": self.base_seed}

    @classmethod
    def from_dict(cls, d: dict) -> "SamplingPlan":
        return cls(k=d["k"], temperatures=tuple(d["temperatures"]),
                   top_p=d.get("top_p", 0.9), base_seed=d.get("base_seed", 0))


@dataclass
class NodeTrace:
    index: int
    ordinal: int
    raw_response: str
    retries: int = 0
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"index": self.index, "ordinal": self.ordinal,
                "raw_response": self.raw_response, "retries": self.retries,
                "warnings": self.warnings}


@dataclass
class PathTrace:
    path: ReasoningPath
    nodes: list[NodeTrace]
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "path_id": self.path.path_id,
            "model": self.path.model,
            "sampling": self.path.sampling.to_dict(),
            "sub_answers": list(self.path.sub_answers),
            "final_answer": self.path.final_answer,
            "complete": self.path.complete,
            "nodes": [n.to_dict() for n in self.nodes],
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PathTrace":
        path = ReasoningPath(
            path_id=d["path_id"],
            sub_answers=tuple(d["sub_answers"]),
            final_answer=d["final_answer"],
            sampling=SamplingParams.from_dict(d["sampling"]),
            model=d.get("model", "unknown"),
            complete=d.get("complete", True),
        )
        nodes = [NodeTrace(index=n["index"], ordinal=n["ordinal"],
                           raw_response=n["raw_response"], retries=n.get("retries", 0),
                           warnings=list(n.get("warnings", [])))
                 for n in d.get("nodes", [])]
        return cls(path=path, nodes=nodes, error=d.get("error"))


def _dep_lines(ars: AuxiliaryReasoningSet, deps: set[int],
               prior_answers: dict[int, str]) -> list[str]:
    return [
        f"Q{d}: {ars.sub_question(d).text} Answer: {prior_answers[d]}"
        for d in topo_order(ars) if d in deps
    ]


def assemble_subq_prompt(ars: AuxiliaryReasoningSet, index: int,
                         prior_answers: dict[int, str],
                         question: MainQuestion) -> tuple[list[Message], list[str]]:
    """Prompt for one node: main question, direct-dependency answers in topo
    order, the sub-question itself, and the concise-answer instruction."""
    sq = ars.sub_question(index)
    deps = set(sq.depends_on_sub_question)
    missing = deps - prior_answers.keys()
    if missing:
        raise ValueError(f"Q{index}: missing dependency answers for {sorted(missing)}")
    warnings = [f"Q{d}: empty dependency answer" for d in sorted(deps)
                if not prior_answers[d].strip()]
    parts = [f"Main question:\n{question.text}"]
    lines = _dep_lines(ars, deps, prior_answers)
    if lines:
        parts.append("Known intermediate results:\n" + "\n".join(lines))
    parts.append(f"Sub-question Q{index}: {sq.text}")
    parts.append(CONCISE_INSTRUCTION)
    image = question.image_ref if sq.depends_on_image else None
    return [Message("user", "\n\n".join(parts), image_ref=image)], warnings


def assemble_final_prompt(ars: AuxiliaryReasoningSet, answers: dict[int, str],
                          question: MainQuestion) -> list[Message]:
    """Final prompt carries every sub-question and answer, never the image."""
    parts = [f"Main question:\n{question.text}"]
    if question.options:
        parts.append("Options:\n" + "\n".join(question.options))
    lines = _dep_lines(ars, set(answers), answers)
    if lines:
        parts.append("Intermediate results:\n" + "\n".join(lines))
    if question.options:
        parts.append("Answer the main question by choosing exactly one option; "
                     "reply with that option string verbatim.")
    else:
        parts.append("Now answer the main question. " + CONCISE_INSTRUCTION)
    return [Message("user", "\n\n".join(parts))]


def run_path(ars: AuxiliaryReasoningSet, question: MainQuestion,
             backend: ModelBackend, sampling: SamplingParams, path_id: int,
             retry: Optional[RetryPolicy] = None) -> PathTrace:
    """One trajectory: every node in topo order, then the final answer.

    Backend exhaustion yields an incomplete path with the partial trace
    preserved, never an exception.
    """
    report = validate_ars(ars)
    if not report.valid:
        raise ValueError(f"invalid decomposition for {question.id}: {report.violations}")
    retry = retry or RetryPolicy()
    answers: dict[int, str] = {}
    nodes: list[NodeTrace] = []
    for ordinal, index in enumerate(report.topo, start=1):
        messages, warnings = assemble_subq_prompt(ars, index, answers, question)
        try:
            raw, retries = retry.call(backend, messages, sampling)
        except BackendError as e:
            logger.error("path %d of %s aborted at Q%d: %s", path_id, question.id, index, e)
            partial = ReasoningPath(
                path_id=path_id,
                sub_answers=tuple(answers.get(i, "") for i in range(1, ars.n + 1)),
                final_answer="", sampling=sampling, model=backend.name,
                complete=False,
            )
            return PathTrace(path=partial, nodes=nodes, error=f"Q{index}: {e}")
        answers[index] = raw.strip()
        nodes.append(NodeTrace(index=index, ordinal=ordinal, raw_response=raw,
                               retries=retries, warnings=warnings))

    final_messages = assemble_final_prompt(ars, answers, question)
    try:
        raw, retries = retry.call(backend, final_messages, sampling)
    except BackendError as e:
        partial = ReasoningPath(
            path_id=path_id,
            sub_answers=tuple(answers[i] for i in range(1, ars.n + 1)),
            final_answer="", sampling=sampling, model=backend.name, complete=False,
        )
        return PathTrace(path=partial, nodes=nodes, error=f"final: {e}")
    nodes.append(NodeTrace(index=0, ordinal=len(report.topo) + 1, raw_response=raw,
                           retries=retries))
    path = ReasoningPath(
        path_id=path_id,
        sub_answers=tuple(answers[i] for i in range(1, ars.n + 1)),
        final_answer=raw.strip(), sampling=sampling, model=backend.name,
    )
    return PathTrace(path=path, nodes=nodes)


def run_pathset(ars: AuxiliaryReasoningSet, question: MainQuestion,
                backend: ModelBackend, plan: SamplingPlan,
                retry: Optional[RetryPolicy] = None) -> tuple[PathSet, list[PathTrace]]:
    traces = [
        run_path(ars, question, backend, plan.sampling_for(j), j, retry)
        for j in range(1, plan.k + 1)
    ]
    pathset = PathSet(question_id=question.id, ars=ars,
                      paths=tuple(t.path for t in traces))
    usable = sum(1 for t in traces if t.path.complete)
    if usable < 2:
        logger.warning("question %s: only %d complete paths, unusable for metrics",
                       question.id, usable)
    return pathset, traces


def run_baseline(question: MainQuestion, backend: ModelBackend, plan: SamplingPlan,
                 retry: Optional[RetryPolicy] = None) -> list[str]:
    """Unstructured direct answers: question plus image, K samples."""
    retry = retry or RetryPolicy()
    parts = [f"Main question:\n{question.text}"]
    if question.options:
        parts.append("Options:\n" + "\n".join(question.options))
        parts.append("Answer by choosing exactly one option; reply with that "
                     "option string verbatim.")
    else:
        parts.append(CONCISE_INSTRUCTION)
    text = "\n\n".join(parts)
    answers = []
    for j in range(1, plan.k + 1):
        messages = [Message("user", text, image_ref=question.image_ref)]
        try:
            raw, _ = retry.call(backend, messages, plan.sampling_for(j))
            answers.append(raw.strip())
        except BackendError as e:
            logger.error("baseline sample %d of %s failed: %s", j, question.id, e)
            answers.append("")
    return answers


# ---------------------------------------------------------------------------
# Trace store: one directory per question id.

def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, ensure_ascii=False, sort_keys=True) + "\n",
                    encoding="utf-8")


def write_trace_store(root: Path, question: MainQuestion,
                      ars: AuxiliaryReasoningSet, traces: list[PathTrace],
                      baseline: Optional[list[str]] = None,
                      plan: Optional[SamplingPlan] = None) -> Path:
    qdir = root / question.id
    qdir.mkdir(parents=True, exist_ok=True)
    for t in traces:
        _dump_json(qdir / f"path_{t.path.path_id}.json", t.to_dict())
    manifest = {
        "question": question.to_dict(),
        "ars": {
            "question_id": ars.question_id,
            "strategy": ars.strategy,
            "generator_model": ars.generator_model,
            "doc": render_ars(ars),
        },
        "plan": plan.to_dict() if plan else None,
        "paths": [f"path_{t.path.path_id}.json" for t in traces],
    }
    if baseline is not None:
        _dump_json(qdir / "baseline.json", {"final_answers": baseline})
        manifest["baseline"] = "baseline.json"
    _dump_json(qdir / "pathset.json", manifest)
    return qdir


def read_trace_store(qdir: Path) -> tuple[MainQuestion, PathSet, list[PathTrace],
                                          Optional[list[str]], Optional[SamplingPlan]]:
    from .generation import parse_ars_response

    manifest = json.loads((qdir / "pathset.json").read_text(encoding="utf-8"))
    question = MainQuestion.from_dict(manifest["question"])
    meta = manifest["ars"]
    ars, _ = parse_ars_response(json.dumps(meta["doc"]), meta["question_id"],
                                strategy=meta.get("strategy", "exploration"),
                                generator_model=meta.get("generator_model", "unknown"))
    traces = [
        PathTrace.from_dict(json.loads((qdir / name).read_text(encoding="utf-8")))
        for name in manifest["paths"]
    ]
    baseline = None
    if manifest.get("baseline"):
        baseline = json.loads((qdir / manifest["baseline"]).read_text(encoding="utf-8"))["final_answers"]
    plan = SamplingPlan.from_dict(manifest["plan"]) if manifest.get("plan") else None
    pathset = PathSet(question_id=question.id, ars=ars,
                      paths=tuple(t.path for t in traces))
    return question, pathset, traces, baseline, plan
