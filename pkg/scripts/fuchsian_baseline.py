"""Quick look at the Fuchsian baseline, where every quantity has a closed form.

lambda+ should be 1/2, developed rays should land on the forward endpoint,
and Brownian exit points from i should be standard Cauchy.
"""

import argparse

import numpy as np

from riccatilab.brownian import exit_law
from riccatilab.developed import GlobalSection, developed_rays
from riccatilab.hyperbolic import frames_from_point_angle, frames_to_endpoints
from riccatilab.lyapunov import estimate_top_exponent
from riccatilab.projective import chordal_pairs, normalize_pairs
from riccatilab.riccati import fuchsian


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    rep = fuchsian()
    m = rep.model

    est = estimate_top_exponent(rep, m, 500.0, 50, rng)
    print(f"lambda+ = {est.lambda_plus:.4f} +- {est.stderr:.4f} (closed form 0.5)")

    F = frames_from_point_angle(np.full(500, 1j), rng.uniform(0, 2 * np.pi, 500))
    tr = developed_rays(rep, m, GlobalSection.identity(), F, 30.0, dt=1.0)
    _, plus, _ = frames_to_endpoints(F)
    err = chordal_pairs(tr.final, normalize_pairs(plus.astype(complex)))
    print(f"rays at T = 30: median error {np.median(err):.1e}, {np.mean(err < 1e-3):.1%} within 1e-3")

    law = exit_law(1j, 1e-4, 1e-3, rng, 3000)
    print(f"exit law: KS distance to Cauchy {law.ks:.4f} (p = {law.ks_pvalue:.2f})")


if __name__ == "__main__":
    main()
