"""Monte-Carlo true effects of every concept on the outcome, for all built-in graphs.

    python3 scripts/run_true_effects.py --samples 1000000 --mode individual
"""

import argparse
import time

from scmbench.dgp import BUILTIN, load_builtin
from scmbench.metrics import TRUE_EFFECT_MODES, true_effects


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--samples", type=int, default=1_000_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--mode", default="individual", choices=TRUE_EFFECT_MODES)
    args = ap.parse_args()
    for name in BUILTIN:
        g = load_builtin(name).graph
        t0 = time.perf_counter()
        effects = true_effects(g, n_samples=args.samples, seed=args.seed, mode=args.mode)
        print(f"# {name} ({args.mode}, n={args.samples}, {time.perf_counter() - t0:.1f}s)")
        for c, v in effects.items():
            print(f"  {g.concept(c).label:<24} {'not identifiable' if v is None else f'{v:.3f}'}")


if __name__ == "__main__":
    main()
