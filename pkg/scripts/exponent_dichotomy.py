"""Top Lyapunov exponent across the shipped representations.

Prints lambda+ with its bootstrap standard error. Non-elementary parabolic
representations should sit well above zero; the elementary upper-triangular
one (run with force) should sit near zero.
"""

import argparse

import numpy as np

from riccatilab.lyapunov import estimate_top_exponent
from riccatilab.riccati import BUILTIN_REPS, parabolic_family


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--T", type=float, default=1000.0)
    ap.add_argument("--ensemble", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    reps = {name: make() for name, make in BUILTIN_REPS.items() if name != "trivial"}
    reps["family(2+0.4i)"] = parabolic_family(2 + 0.4j)
    reps["family(-1+3i)"] = parabolic_family(-1 + 3j)
    print(f"{'representation':28s} {'verdict':16s} {'lambda+':>9s} {'stderr':>9s}")
    for k, (name, rep) in enumerate(reps.items()):
        rng = np.random.default_rng([args.seed, k])
        est = estimate_top_exponent(rep, rep.model, args.T, args.ensemble, rng, force=True)
        print(f"{name:28s} {rep.elementary_verdict:16s} {est.lambda_plus:9.4f} {est.stderr:9.1e}")


if __name__ == "__main__":
    main()
