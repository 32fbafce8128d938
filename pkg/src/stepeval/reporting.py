"""Report artifacts: DOT graphs, metric tables, dependency statistics.

Every emitter is deterministic given its inputs: stable orderings, fixed
float formatting (12 significant digits), RFC-4180 CSV quoting.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Optional, Sequence

from .consistency import AgreementMatrix, ConsistencyBundle
from .diagnostics import PathDiagnostics, SweepPoint
from .models import AuxiliaryReasoningSet, MainQuestion


def round12(x: float) -> float:
    return float(f"{x:.12g}")


def metrics_to_dict(bundle: ConsistencyBundle) -> dict:
    return {
        "gmc": round12(bundle.question.gmc),
        "majority": list(bundle.question.majority),
        "majority_final": bundle.question.majority_final,
        "per_path": [
            {
                "path_id": pc.path_id,
                "pmc": round12(pc.pmc),
                "pdc": round12(pc.pdc),
                "pzc": round12(pc.pzc),
                "cg": round12(pc.cg),
                "flags": (["degenerate"] if pc.degenerate else []),
                "aux_mean_step_z": round12(pc.aux_mean_step_z),
            }
            for pc in bundle.per_path
        ],
    }


def diagnostics_to_dict(diags: Sequence[PathDiagnostics], t: float) -> dict:
    return {
        "t": round12(t),
        "per_path": [d.to_dict() for d in diags],
    }


def _dot_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def emit_dot(ars: AuxiliaryReasoningSet, question: MainQuestion,
             diags: Sequence[PathDiagnostics], matrix: Optional[AgreementMatrix],
             highlight: str = "any-disagreement") -> str:
    """Reasoning graph with disagreement nodes filled red and the first
    failure step of any wrong path drawn with a bold border."""
    inconsistent: set[int] = set()
    if matrix is not None:
        for i in range(matrix.n):
            row = [matrix.counts[i][j] for j in range(matrix.k)]
            if highlight == "any-disagreement":
                if any(c < matrix.k for c in row):
                    inconsistent.add(i + 1)
            elif highlight == "below-majority":
                if any(c <= matrix.k / 2 for c in row):
                    inconsistent.add(i + 1)
            else:
                raise ValueError(f"unknown highlight criterion: {highlight}")
    ffs_nodes = {d.ffs for d in diags if d.ffs is not None}

    lines = ["digraph reasoning {", "  rankdir=TB;",
             '  node [shape=box, style="filled", fillcolor=white];']
    for sq in ars.sub_questions:
        attrs = [f'label="Q{sq.index}: {_dot_escape(sq.text)}"']
        if sq.index in inconsistent:
            attrs.append('fillcolor="#ffb3b3"')
        if sq.index in ffs_nodes:
            attrs.append("penwidth=3")
        lines.append(f"  q{sq.index} [{', '.join(attrs)}];")
    lines.append(f'  final [label="Final: {_dot_escape(question.text)}", shape=ellipse];')
    for sq in ars.sub_questions:
        for d in sq.depends_on_sub_question:
            lines.append(f"  q{d} -> q{sq.index};")
    for sq in ars.sub_questions:
        lines.append(f"  q{sq.index} -> final;")
    lines.append("}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class DependencyStats:
    strategy: str
    n_sets: int
    image_fraction: float
    mean_total_questions: float
    mean_dependency: float
    max_dependency: int
    histogram: dict[int, int]  # dependency count -> number of sub-questions

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "n_sets": self.n_sets,
            "image_fraction": round12(self.image_fraction),
            "mean_total_questions": round12(self.mean_total_questions),
            "mean_dependency": round12(self.mean_dependency),
            "max_dependency": self.max_dependency,
            "histogram": {str(k): v for k, v in sorted(self.histogram.items())},
        }


def dependency_stats(corpus: Sequence[AuxiliaryReasoningSet]) -> list[DependencyStats]:
    """Per-strategy structure statistics over a decomposition corpus."""
    if not corpus:
        raise ValueError("empty corpus")
    by_strategy: dict[str, list[AuxiliaryReasoningSet]] = {}
    for ars in corpus:
        by_strategy.setdefault(ars.strategy, []).append(ars)
    out = []
    for strategy in sorted(by_strategy):
        sets = by_strategy[strategy]
        subs = [sq for ars in sets for sq in ars.sub_questions]
        dep_counts = [len(sq.depends_on_sub_question) for sq in subs]
        hist: dict[int, int] = {}
        for c in dep_counts:
            hist[c] = hist.get(c, 0) + 1
        out.append(DependencyStats(
            strategy=strategy,
            n_sets=len(sets),
            image_fraction=sum(sq.depends_on_image for sq in subs) / len(subs),
            mean_total_questions=sum(ars.n for ars in sets) / len(sets),
            mean_dependency=sum(dep_counts) / len(dep_counts),
            max_dependency=max(dep_counts),
            histogram=hist,
        ))
    return out


@dataclass(frozen=True)
class SummaryRow:
    model: str
    dataset: str
    correctness: str  # correct | incorrect
    mean_pmc: float
    mean_pzc: float
    n_paths: int


def summary_table(records: Sequence[dict]) -> list[SummaryRow]:
    """Groups per-path metrics by (model, dataset, correctness).

    Each record needs: model, dataset, correct_final (bool or None), pmc,
    pzc. Paths with undefined correctness are excluded.
    """
    groups: dict[tuple[str, str, str], list[dict]] = {}
    for r in records:
        if r.get("correct_final") is None:
            continue
        key = (r["model"], r["dataset"],
               "correct" if r["correct_final"] else "incorrect")
        groups.setdefault(key, []).append(r)
    rows = []
    for (model, dataset, correctness) in sorted(groups):
        members = groups[(model, dataset, correctness)]
        rows.append(SummaryRow(
            model=model, dataset=dataset, correctness=correctness,
            mean_pmc=sum(m["pmc"] for m in members) / len(members),
            mean_pzc=sum(m["pzc"] for m in members) / len(members),
            n_paths=len(members),
        ))
    return rows


def summary_csv(rows: Sequence[SummaryRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "dataset", "correctness", "mean_pmc", "mean_pzc", "n_paths"])
    for r in rows:
        w.writerow([r.model, r.dataset, r.correctness,
                    f"{r.mean_pmc:.12g}", f"{r.mean_pzc:.12g}", r.n_paths])
    return buf.getvalue()


def sweep_csv(points: Sequence[SweepPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "region", "count", "accuracy"])
    for p in points:
        for region in sorted(p.counts):
            acc = p.accuracies[region]
            w.writerow([f"{p.t:.12g}", region, p.counts[region],
                        "" if acc is None else f"{acc:.12g}"])
    return buf.getvalue()


def improvement_csv(curve: Sequence[tuple[float, float]],
                    label: str = "all") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["subject", "x", "fraction"])
    for x, frac in curve:
        w.writerow([label, f"{x:.12g}", f"{frac:.12g}"])
    return buf.getvalue()


@dataclass(frozen=True)
class RunRecord:
    """Self-contained bundle for one question; reporting over the same record
    reproduces identical bytes."""

    config_hash: str
    prompt_hashes: dict[str, str]
    question: dict
    ars_doc: dict
    pathset_ref: str
    metrics: dict
    diagnostics: dict

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "prompt_hashes": dict(sorted(self.prompt_hashes.items())),
            "question": self.question,
            "ars": self.ars_doc,
            "pathset_ref": self.pathset_ref,
            "metrics": self.metrics,
            "diagnostics": self.diagnostics,
        }


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False, sort_keys=True) + "\n"
