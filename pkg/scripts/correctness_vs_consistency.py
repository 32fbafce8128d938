#!/usr/bin/env python3
"""Simulated check of the directional claim that correct reasoning paths are
more self-consistent: sample a population where incorrect paths carry elevated
per-step error rates, then compare group means with a bootstrap interval."""
import argparse
import random

import numpy as np

from stepeval.consistency import AnswerEquivalence
from stepeval.diagnostics import RegionConfig, diagnose_pathset
from stepeval.models import (
    AuxiliaryReasoningSet,
    MainQuestion,
    PathSet,
    ReasoningPath,
    SamplingParams,
    SubQuestion,
)


def sample_question(rng, qid, k, n_steps, err_correct, err_incorrect):
    kinds = [rng.random() < 0.6 for _ in range(k)]
    if all(kinds) or not any(kinds):
        kinds[0] = not kinds[0]
    paths = []
    for j in range(k):
        err = err_correct if kinds[j] else err_incorrect
        subs = tuple(
            f"v{i}" if rng.random() >= err else f"e{i}-{rng.randint(0, 2)}"
            for i in range(n_steps))
        paths.append(ReasoningPath(
            path_id=j + 1, sub_answers=subs,
            final_answer="gold" if kinds[j] else f"wrong-{rng.randint(0, 1)}",
            sampling=SamplingParams(temperature=0.2, seed=j + 1),
            model="simulator"))
    ars = AuxiliaryReasoningSet(question_id=qid, sub_questions=tuple(
        SubQuestion(index=i, text=f"step {i}") for i in range(1, n_steps + 1)))
    return PathSet(question_id=qid, ars=ars, paths=tuple(paths))


def bootstrap_low(a, b, rng, n_boot, confidence):
    a, b = np.asarray(a), np.asarray(b)
    diffs = np.empty(n_boot)
    for r in range(n_boot):
        diffs[r] = (a[rng.integers(0, len(a), len(a))].mean()
                    - b[rng.integers(0, len(b), len(b))].mean())
    return float(np.quantile(diffs, 1 - confidence))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--questions", type=int, default=1000)
    ap.add_argument("--k", type=int, default=6)
    ap.add_argument("--steps", type=int, default=5)
    ap.add_argument("--err-correct", type=float, default=0.05)
    ap.add_argument("--err-incorrect", type=float, default=0.35)
    ap.add_argument("--bootstrap", type=int, default=2000)
    ap.add_argument("--confidence", type=float, default=0.99)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = random.Random(args.seed)
    eq = AnswerEquivalence()
    groups = {"correct": {"pmc": [], "pzc": []},
              "incorrect": {"pmc": [], "pzc": []}}
    for qi in range(args.questions):
        ps = sample_question(rng, f"pop{qi}", args.k, args.steps,
                             args.err_correct, args.err_incorrect)
        q = MainQuestion(id=ps.question_id, text="simulated", gold_answer="gold")
        bundle, diags = diagnose_pathset(ps, q, eq, RegionConfig(0.5))
        for pc, d in zip(bundle.per_path, diags):
            g = groups["correct" if d.correct_final else "incorrect"]
            g["pmc"].append(pc.pmc)
            g["pzc"].append(pc.pzc)

    np_rng = np.random.default_rng(args.seed + 1)
    for metric in ("pmc", "pzc"):
        correct = groups["correct"][metric]
        incorrect = groups["incorrect"][metric]
        low = bootstrap_low(correct, incorrect, np_rng, args.bootstrap,
                            args.confidence)
        print(f"{metric}: correct mean {np.mean(correct):.4f} "
              f"(n={len(correct)}), incorrect mean {np.mean(incorrect):.4f} "
              f"(n={len(incorrect)}), diff lower bound at "
              f"{args.confidence:.0%} confidence: {low:.4f}")


if __name__ == "__main__":
    main()
