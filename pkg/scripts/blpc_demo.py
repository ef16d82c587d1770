"""BLPC marginal and ridge estimators over component thresholds.

Shows how accuracy changes as the per-block variance threshold tau grows,
next to the conditional BLPC theory computed on the first training
design.
"""

import argparse

from hdridge import harness
from hdridge.estimators import EstimatorSpec as E
from hdridge.spectrum import BlockSpec


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--blocks", type=int, default=10)
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--h2", type=float, default=0.5)
    ap.add_argument("--tau", type=float, nargs="+", default=[0.35, 0.5, 0.8, 1.0])
    ap.add_argument("--lam-scale", type=float, default=1.0)
    ap.add_argument("--reps", type=int, default=50)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args(argv)

    ests = [E("marginal")]
    for tau in args.tau:
        ests.append(E("blpc_marginal", tau=tau, label=f"pc_marginal[tau={tau}]"))
        ests.append(E("blpc_block_ridge", tau=tau, lam_scale=args.lam_scale, label=f"pc_ridge[tau={tau}]"))
    s = harness.Scenario((BlockSpec.ar1(0.8, 50),) * args.blocks, args.n, args.h2, tuple(ests),
                         replications=args.reps, scenario_id="blpc_demo")
    out = harness.run_scenario(s, args.workers)
    print(f"{'estimator':<24} {'mean':>7} {'mc_se':>7} {'theory':>7}")
    for e in out.estimators:
        th = "" if e.a2_theory is None else f"{e.a2_theory:7.4f}"
        print(f"{e.name:<24} {e.mean:7.4f} {e.mc_se:7.4f} {th}")


if __name__ == "__main__":
    main()
