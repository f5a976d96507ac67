"""Closed-loop benchmark on deterministic texts with the analytic oracle model.

Runs every stage through the CLI for each built-in dataset and prints the
local table. Because texts carry their concept values as markers, the gold
concept predictor and the bag-of-markers embedder stand in for trained
models, and the SCM editor stands in for an LLM counterfactual generator.

    python3 scripts/closed_loop_benchmark.py --out /tmp/closed-loop
"""

import argparse
from pathlib import Path

from scmbench.cli import main as cli
from scmbench.dgp import BUILTIN
from scmbench.report import read_table

METHODS = "ft_match,approx,convecs,random_match,cfgen"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="closed-loop-run")
    ap.add_argument("--sizes", default="0,0,500,300")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=4)
    ap.add_argument("--strategy", default="mediators_confounders")
    args = ap.parse_args()
    root = Path(args.out)
    for name in BUILTIN:
        d = str(root / name)
        steps = [
            ["generate", "--dataset", name, "--sizes", args.sizes, "--seed", str(args.seed), "--out", d,
             "--jobs", str(args.jobs)],
            ["predict", "--out", d],
            ["explain", "--out", d, "--methods", METHODS, "--strategy", args.strategy, "--cache-dir",
             str(root / "cache"), "--jobs", str(args.jobs)],
            ["evaluate", "--out", d],
        ]
        for step in steps:
            code = cli(step)
            if code:
                raise SystemExit(code)
        print(f"\n# {name}")
        print(f"  {'method':<40} {'ED':>8} {'OF':>8} {'coverage':>9}")
        for r in read_table(root / name / "report" / "local.csv"):
            of = f"{float(r['of_bar']):.3f}" if r["of_bar"] else "n/a"
            print(f"  {r['method']:<40} {float(r['ed_bar']):>8.3f} {of:>8} {float(r['coverage']):>9.2f}")


if __name__ == "__main__":
    main()
