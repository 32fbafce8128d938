#!/usr/bin/env python3
"""Fault-injection experiment: plant a first-error node in one of K paths over
random dependency DAGs and measure how often failure localization recovers it."""
import argparse

from stepeval.diagnostics import SimulatorConfig, inject_and_recover


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=500)
    ap.add_argument("--k", type=int, default=8, help="paths per question")
    ap.add_argument("--max-nodes", type=int, default=10)
    ap.add_argument("--faulty-paths", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    report = inject_and_recover(SimulatorConfig(
        n_trials=args.trials, k=args.k, max_nodes=args.max_nodes,
        faulty_paths=args.faulty_paths, seed=args.seed))
    print(f"trials:        {report.trials}")
    print(f"no consensus:  {report.no_consensus}")
    print(f"recovered:     {report.recovered}/{report.eligible}")
    print(f"recovery rate: {report.recovery_rate:.4f}")
    if report.mismatched:
        print(f"mismatched trials: {report.mismatched[:20]}")


if __name__ == "__main__":
    main()
