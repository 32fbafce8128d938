"""Pipeline CLI: generate -> run -> score -> report.

Stages are decoupled through the filesystem so model calls are never repeated
while iterating on metrics. Exit codes: 0 success, 1 usage/config error,
2 partial data failure, 3 backend exhaustion.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import click

from . import diagnostics as diag
from . import generation as gen
from . import reporting as rep
from .backends import (
    BackendError,
    CachingBackend,
    ModelBackend,
    ResponseCache,
    RetryPolicy,
    make_backend,
)
from .config import Config
from .consistency import AnswerEquivalence, NotEnoughPathsError, compute_consistency, equivalent
from .diagnostics import RegionConfig, diagnose_pathset, threshold_sweep
from .execution import (
    read_trace_store,
    run_baseline,
    run_pathset,
    write_trace_store,
)
from .models import EXPLOITATION, EXPLORATION, MainQuestion, validate_ars

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARTIAL = 2
EXIT_BACKEND = 3


def load_dataset(path: Path) -> list[MainQuestion]:
    questions = []
    seen = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                q = MainQuestion.from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError, ValueError) as e:
                raise click.UsageError(f"{path}:{lineno}: bad question record: {e}")
            if q.id in seen:
                raise click.UsageError(f"{path}:{lineno}: duplicate question id {q.id}")
            seen.add(q.id)
            questions.append(q)
    if not questions:
        raise click.UsageError(f"{path}: dataset is empty")
    return questions


def _build_backend(cfg: Config) -> ModelBackend:
    try:
        backend = make_backend(cfg.backend.kind, base_url=cfg.backend.base_url,
                               model=cfg.backend.model, auth_env=cfg.backend.auth_env)
    except ValueError as e:
        raise click.UsageError(f"bad config: {e}")
    if cfg.cache_dir:
        backend = CachingBackend(backend, ResponseCache(cfg.cache_dir))
    return backend


def _equivalence(cfg: Config) -> AnswerEquivalence:
    return AnswerEquivalence(mode=cfg.equivalence_mode,
                             numeric_rel_tol=cfg.numeric_rel_tol)


def _apply_overrides(cfg: Config, backend: Optional[str], k: Optional[int],
                     t: Optional[float], seed: Optional[int]) -> Config:
    if backend:
        cfg = dataclasses.replace(cfg, backend=dataclasses.replace(cfg.backend, kind=backend))
    if k is not None:
        cfg = dataclasses.replace(cfg, plan=dataclasses.replace(cfg.plan, k=k))
    if seed is not None:
        cfg = dataclasses.replace(cfg, plan=dataclasses.replace(cfg.plan, base_seed=seed))
    if t is not None:
        cfg = dataclasses.replace(cfg, region_t=t)
    return cfg


@click.group()
@click.option("--config", "config_path", type=click.Path(path_type=Path),
              default=None, help="JSON config file; defaults apply if omitted.")
@click.option("--backend", type=click.Choice(["mock", "http"]), default=None)
@click.option("--k", type=int, default=None, help="Paths per question.")
@click.option("--t", type=float, default=None, help="Confidence-region threshold.")
@click.option("--seed", type=int, default=None, help="Base sampling seed.")
@click.pass_context
def cli(ctx, config_path, backend, k, t, seed):
    """Consistency diagnostics for multi-step reasoning."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = Config.load(config_path) if config_path else Config()
        cfg = _apply_overrides(cfg, backend, k, t, seed)
    except (OSError, ValueError, TypeError, KeyError) as e:
        raise click.UsageError(f"bad config: {e}")
    ctx.obj = cfg


@cli.command()
@click.argument("dataset", type=click.Path(exists=True, path_type=Path))
@click.option("--strategy", type=click.Choice([EXPLORATION, EXPLOITATION]),
              default=EXPLORATION)
@click.option("--out", type=click.Path(path_type=Path), default=None,
              help="ARS output directory (default <output_root>/ars).")
@click.pass_obj
def generate(cfg: Config, dataset: Path, strategy: str, out: Optional[Path]) -> int:
    """Generate one sub-question decomposition per dataset question."""
    questions = load_dataset(dataset)
    out = out or Path(cfg.output_root) / "ars"
    out.mkdir(parents=True, exist_ok=True)
    backend = _build_backend(cfg)
    retry = RetryPolicy(attempts=cfg.backend.retry_attempts)
    explo_tpl = gen.load_template(cfg.exploration_template)
    exploit_tpl = gen.load_template(cfg.exploitation_template)
    step1_tpl = gen.load_template(cfg.step1_template)
    judge_tpl = gen.load_template(cfg.leakage_template)
    log_lines = []
    failures = 0
    backend_down = False
    for q in questions:
        try:
            if strategy == EXPLOITATION:
                chain = gen.step1_reasoning(q, backend, retry, step1_tpl)
                prompt = gen.build_exploitation_prompt(q, chain, exploit_tpl)
            else:
                prompt = gen.build_exploration_prompt(q, explo_tpl)
            from .backends import Message
            from .models import SamplingParams
            raw, _ = retry.call(backend, [Message("user", prompt, image_ref=q.image_ref)],
                                SamplingParams(temperature=0.0))
            ars, notes = gen.parse_ars_response(raw, q.id, strategy=strategy,
                                               generator_model=backend.name)
            report = validate_ars(ars, tuple(notes))
            if not report.valid:
                failures += 1
                log_lines.append({"question_id": q.id, "stage": "validate",
                                  "violations": [dataclasses.asdict(v) for v in report.violations]})
                continue
            result = gen.leakage_filter(ars, q, backend, retry, judge_tpl)
            for sq, outcome in zip(ars.sub_questions, result.outcomes):
                if not outcome.kept or outcome.detail:
                    log_lines.append({"question_id": q.id, "stage": "leakage",
                                      "sub_question": sq.index, **outcome.to_dict()})
            if result.all_removed:
                failures += 1
                log_lines.append({"question_id": q.id, "stage": "leakage",
                                  "detail": "all sub-questions removed"})
                continue
            (out / f"{q.id}.json").write_text(gen.render_ars_text(result.ars),
                                              encoding="utf-8")
            for note in notes:
                log_lines.append({"question_id": q.id, "stage": "parse", "note": note})
        except gen.ArsParseError as e:
            failures += 1
            log_lines.append({"question_id": q.id, "stage": "parse",
                              "reason": gen.PARSE_FAILURE, "detail": str(e)})
        except BackendError as e:
            failures += 1
            backend_down = True
            log_lines.append({"question_id": q.id, "stage": "backend", "detail": str(e)})
    with open(out / "filter_log.jsonl", "w", encoding="utf-8") as f:
        for line in log_lines:
            f.write(json.dumps(line, ensure_ascii=False, sort_keys=True) + "\n")
    if failures == len(questions):
        click.echo("all questions failed", err=True)
        return EXIT_BACKEND if backend_down else EXIT_PARTIAL
    if failures:
        click.echo(f"{failures}/{len(questions)} questions failed", err=True)
        return EXIT_PARTIAL
    return EXIT_OK


@cli.command()
@click.argument("ars_dir", type=click.Path(exists=True, path_type=Path))
@click.argument("dataset", type=click.Path(exists=True, path_type=Path))
@click.option("--out", type=click.Path(path_type=Path), default=None,
              help="Trace store root (default <output_root>/traces).")
@click.pass_obj
def run(cfg: Config, ars_dir: Path, dataset: Path, out: Optional[Path]) -> int:
    """Sample K reasoning paths plus an unstructured baseline per question."""
    questions = {q.id: q for q in load_dataset(dataset)}
    out = out or Path(cfg.output_root) / "traces"
    backend = _build_backend(cfg)
    retry = RetryPolicy(attempts=cfg.backend.retry_attempts)
    plan = cfg.plan
    failures = 0
    ran = 0
    for ars_file in sorted(ars_dir.glob("*.json")):
        qid = ars_file.stem
        if qid not in questions:
            continue
        q = questions[qid]
        doc = ars_file.read_text(encoding="utf-8")
        try:
            ars, _ = gen.parse_ars_response(doc, qid, generator_model=cfg.backend.model)
        except gen.ArsParseError as e:
            logger.error("skipping %s: %s", qid, e)
            failures += 1
            continue
        pathset, traces = run_pathset(ars, q, backend, plan, retry)
        baseline = run_baseline(q, backend, plan, retry)
        write_trace_store(out, q, ars, traces, baseline, plan)
        if len(pathset.complete_paths()) < 2:
            failures += 1
        ran += 1
    if ran == 0:
        click.echo("no decompositions matched the dataset", err=True)
        return EXIT_PARTIAL
    return EXIT_PARTIAL if failures else EXIT_OK


@cli.command()
@click.argument("trace_root", type=click.Path(exists=True, path_type=Path))
@click.option("--out", type=click.Path(path_type=Path), default=None,
              help="Scores root (default <output_root>/scores).")
@click.pass_obj
def score(cfg: Config, trace_root: Path, out: Optional[Path]) -> int:
    """Compute consistency metrics and per-path diagnostics from traces."""
    out = out or Path(cfg.output_root) / "scores"
    eq = _equivalence(cfg)
    region = RegionConfig(cfg.region_t)
    failures = 0
    scored = 0
    for qdir in sorted(p for p in trace_root.iterdir() if p.is_dir()):
        if not (qdir / "pathset.json").exists():
            continue
        question, pathset, _traces, _baseline, _plan = read_trace_store(qdir)
        try:
            bundle, diags_ = diagnose_pathset(pathset, question, eq, region,
                                              cfg.majority_scope)
        except NotEnoughPathsError as e:
            logger.error("%s", e)
            failures += 1
            continue
        sdir = out / question.id
        sdir.mkdir(parents=True, exist_ok=True)
        (sdir / "metrics.json").write_text(rep.dump_json(rep.metrics_to_dict(bundle)),
                                           encoding="utf-8")
        (sdir / "diagnostics.json").write_text(
            rep.dump_json(rep.diagnostics_to_dict(diags_, cfg.region_t)),
            encoding="utf-8")
        scored += 1
    if scored == 0:
        click.echo(f"no trace stores found under {trace_root}", err=True)
        return EXIT_PARTIAL
    return EXIT_PARTIAL if failures else EXIT_OK


@cli.command()
@click.argument("run_root", type=click.Path(exists=True, path_type=Path))
@click.pass_obj
def report(cfg: Config, run_root: Path) -> int:
    """Emit DOT graphs, sweeps, summary and dependency statistics."""
    run_root = Path(run_root)
    trace_root = run_root / "traces"
    scores_root = run_root / "scores"
    report_root = run_root / "report"
    if not trace_root.is_dir():
        raise click.UsageError(f"missing trace store directory: {trace_root}")
    eq = _equivalence(cfg)
    corpus = []
    summary_records = []
    sweep_inputs = []
    improvement_pairs = []
    failures = 0
    reported = 0
    for qdir in sorted(p for p in trace_root.iterdir() if p.is_dir()):
        if not (qdir / "pathset.json").exists():
            continue
        question, pathset, _traces, baseline, _plan = read_trace_store(qdir)
        metrics_file = scores_root / question.id / "metrics.json"
        diags_file = scores_root / question.id / "diagnostics.json"
        if not metrics_file.exists() or not diags_file.exists():
            click.echo(f"question {question.id}: missing scores file "
                       f"{metrics_file if not metrics_file.exists() else diags_file}; "
                       f"run the score stage first", err=True)
            failures += 1
            continue
        metrics = json.loads(metrics_file.read_text(encoding="utf-8"))
        diags_doc = json.loads(diags_file.read_text(encoding="utf-8"))
        diags_ = tuple(
            diag.PathDiagnostics(d["path_id"], d["correct_final"], d["ffs"],
                                 d["region"], tuple(d["flags"]))
            for d in diags_doc["per_path"]
        )
        bundle = compute_consistency(pathset, eq, cfg.majority_scope)
        corpus.append(pathset.ars)
        qrep = report_root / question.id
        qrep.mkdir(parents=True, exist_ok=True)
        dot = rep.emit_dot(pathset.ars, question, diags_, bundle.matrix,
                           cfg.dot_highlight)
        (qrep / "graph.dot").write_text(dot, encoding="utf-8")
        (qrep / "metrics.json").write_text(rep.dump_json(metrics), encoding="utf-8")
        (qrep / "diagnostics.json").write_text(rep.dump_json(diags_doc), encoding="utf-8")
        per_path = {m["path_id"]: m for m in metrics["per_path"]}
        q_sweep = [
            (per_path[d.path_id]["pmc"], metrics["gmc"], d.correct_final)
            for d in diags_
        ]
        (qrep / "sweep.csv").write_text(rep.sweep_csv(threshold_sweep(q_sweep)),
                                        encoding="utf-8")
        sweep_inputs.extend(q_sweep)
        dataset_label = question.subject or "default"
        for d in diags_:
            summary_records.append({
                "model": pathset.paths[0].model if pathset.paths else "unknown",
                "dataset": dataset_label,
                "correct_final": d.correct_final,
                "pmc": per_path[d.path_id]["pmc"],
                "pzc": per_path[d.path_id]["pzc"],
            })
        if baseline and question.gold_answer is not None:
            graded = [d.correct_final for d in diags_ if d.correct_final is not None]
            if graded:
                ars_acc = sum(graded) / len(graded)
                base_acc = sum(
                    equivalent(a, question.gold_answer, eq) for a in baseline
                ) / len(baseline)
                improvement_pairs.append((ars_acc, base_acc))
        reported += 1
    if reported == 0:
        click.echo(f"nothing to report under {run_root}", err=True)
        return EXIT_PARTIAL
    report_root.mkdir(parents=True, exist_ok=True)
    (report_root / "summary.csv").write_text(
        rep.summary_csv(rep.summary_table(summary_records)), encoding="utf-8")
    stats = [s.to_dict() for s in rep.dependency_stats(corpus)]
    (report_root / "dependency_stats.json").write_text(rep.dump_json(stats),
                                                       encoding="utf-8")
    (report_root / "sweep.csv").write_text(
        rep.sweep_csv(threshold_sweep(sweep_inputs)), encoding="utf-8")
    x_grid = [round(0.1 * i, 10) for i in range(11)]
    curve = diag.improvement_curve(improvement_pairs, x_grid)
    (report_root / "improvement.csv").write_text(rep.improvement_csv(curve),
                                                 encoding="utf-8")
    return EXIT_PARTIAL if failures else EXIT_OK


def main(argv: Optional[list[str]] = None) -> None:
    try:
        rv = cli.main(args=argv, standalone_mode=False)
    except click.UsageError as e:
        e.show()
        sys.exit(EXIT_CONFIG)
    except click.ClickException as e:
        e.show()
        sys.exit(EXIT_CONFIG)
    except click.exceptions.Abort:
        sys.exit(EXIT_CONFIG)
    sys.exit(rv if isinstance(rv, int) else EXIT_OK)


if __name__ == "__main__":
    main()
