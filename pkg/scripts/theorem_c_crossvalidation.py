"""Compare the four routes to the harmonic law at a base point.

Runs the measure suite for the Fuchsian representation and for
parabolic_family(a), then prints every pairwise energy distance next to its
bootstrap threshold along with the structural checks. The default is the
full budget (a few minutes per representation). The closed-form total
variation checks on 256 bins need about 1e4 samples; smaller --n values
are fine for the pairwise comparisons but can fail those checks.
"""

import argparse
import json

import numpy as np

from riccatilab.measures import SuiteBudgets, theorem_c_suite
from riccatilab.riccati import fuchsian, parabolic_family


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=10_000, help="samples per route")
    ap.add_argument("--a", type=complex, default=2 + 0.4j, help="family parameter, Python complex syntax")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", help="write the full reports here")
    args = ap.parse_args()

    b = SuiteBudgets(n_rays=args.n, n_paths=args.n, n_sigma=args.n)
    docs = {}
    for rep in (fuchsian(), parabolic_family(args.a)):
        res = theorem_c_suite(rep, rep.model, 1j, b, np.random.default_rng(args.seed))
        docs[rep.name] = res.to_json()
        print(f"\n{rep.name}: {'pass' if res.passed else 'FAIL'}")
        for c in res.comparisons:
            print(f"  {c.label:40s} E = {c.energy:.2e}  threshold {c.threshold:.2e}  {'ok' if c.passed else 'FAIL'}")
        for k, v in res.checks.items():
            print(f"  {k:40s} {'ok' if v['ok'] else 'FAIL'}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(docs, fh, indent=2, default=str)


if __name__ == "__main__":
    main()
