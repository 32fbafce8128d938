from __future__ import annotations

import pytest

from stepeval.backends import BackendError, RetryPolicy
from stepeval.models import (
    AuxiliaryReasoningSet,
    MainQuestion,
    PathSet,
    ReasoningPath,
    SamplingParams,
    SubQuestion,
)


class ScriptedBackend:
    """Answers by first matching substring rule; counts calls."""

    deterministic = True
    name = "scripted"

    def __init__(self, rules=None, default="unscripted"):
        self.rules = list(rules or [])
        self.default = default
        self.calls = 0

    def complete(self, messages, sampling):
        self.calls += 1
        prompt = "\n".join(m.text for m in messages)
        for needle, answer in self.rules:
            if needle in prompt:
                return answer
        return self.default


class FlakyBackend:
    """Fails with a retriable error N times before delegating."""

    deterministic = False
    name = "flaky"

    def __init__(self, inner, fail_times: int, fail_on: str | None = None,
                 retriable: bool = True):
        self.inner = inner
        self.fail_times = fail_times
        self.fail_on = fail_on
        self.retriable = retriable
        self.failures = 0
        self.calls = 0

    def complete(self, messages, sampling):
        self.calls += 1
        prompt = "\n".join(m.text for m in messages)
        if (self.fail_on is None or self.fail_on in prompt) and self.failures < self.fail_times:
            self.failures += 1
            raise BackendError("scripted outage", retriable=self.retriable)
        return self.inner.complete(messages, sampling)


@pytest.fixture
def fast_retry():
    return RetryPolicy(attempts=3, base_delay=0.0, sleep=lambda _: None)


def chain_ars(question_id: str, texts: list[str]) -> AuxiliaryReasoningSet:
    """Q1 -> Q2 -> ... each depending on its predecessor."""
    subs = tuple(
        SubQuestion(index=i, text=t,
                    depends_on_sub_question=(i - 1,) if i > 1 else ())
        for i, t in enumerate(texts, start=1)
    )
    return AuxiliaryReasoningSet(question_id=question_id, sub_questions=subs)


def make_pathset(question_id: str, rows: list[list[str]], finals: list[str],
                 ars: AuxiliaryReasoningSet | None = None) -> PathSet:
    """rows[i][j] is the answer to sub-question i+1 in path j+1."""
    n, k = len(rows), len(finals)
    ars = ars or chain_ars(question_id, [f"step {i}" for i in range(1, n + 1)])
    paths = tuple(
        ReasoningPath(
            path_id=j + 1,
            sub_answers=tuple(rows[i][j] for i in range(n)),
            final_answer=finals[j],
            sampling=SamplingParams(temperature=0.2, seed=j + 1),
            model="fixture",
        )
        for j in range(k)
    )
    return PathSet(question_id=question_id, ars=ars, paths=paths)


def question(qid="q1", text="What is the value?", gold=None, **kw) -> MainQuestion:
    return MainQuestion(id=qid, text=text, gold_answer=gold, **kw)
