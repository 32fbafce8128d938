#!/usr/bin/env python3
"""Run the full generate -> run -> score -> report pipeline against the
deterministic mock backend on a tiny built-in dataset. Useful as a smoke test
and as a template for wiring a real HTTP backend via --config."""
import argparse
import json
from pathlib import Path

from stepeval.cli import main as cli_main
from stepeval.config import Config
from stepeval.execution import SamplingPlan

DATASET = [
    {"id": "demo-angle", "text": "What is the measure of angle A?",
     "gold_answer": "65", "subject": "geometry"},
    {"id": "demo-chord", "text": "What is the minimum length of the chord?",
     "gold_answer": "24", "subject": "geometry"},
    {"id": "demo-area", "text": "Find the area of the triangle.",
     "gold_answer": "10", "subject": "geometry"},
]


def stage(config_path, *args):
    try:
        cli_main(["--config", str(config_path), *map(str, args)])
    except SystemExit as e:
        if e.code not in (0, None):
            raise SystemExit(f"stage {args[0]} failed with exit code {e.code}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--root", type=Path, default=Path("out/mock-demo"))
    ap.add_argument("--k", type=int, default=4)
    ap.add_argument("--seed", type=int, default=11)
    args = ap.parse_args()

    args.root.mkdir(parents=True, exist_ok=True)
    dataset = args.root / "dataset.jsonl"
    dataset.write_text("".join(json.dumps(r) + "\n" for r in DATASET),
                       encoding="utf-8")
    cfg = Config(output_root=str(args.root / "out"),
                 plan=SamplingPlan(k=args.k, temperatures=(0.0, 0.2),
                                   base_seed=args.seed),
                 cache_dir=str(args.root / "cache"))
    config_path = args.root / "config.json"
    cfg.save(config_path)

    out = args.root / "out"
    stage(config_path, "generate", dataset)
    stage(config_path, "run", out / "ars", dataset)
    stage(config_path, "score", out / "traces")
    stage(config_path, "report", out)
    print(f"artifacts under {out}")
    for p in sorted((out / "report").rglob("*")):
        if p.is_file():
            print(f"  {p.relative_to(out)}")


if __name__ == "__main__":
    main()
