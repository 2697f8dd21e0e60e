"""Coverage of the RR10 credible interval over replicate synthetic datasets.

    python3 scripts/posterior_recovery.py --replicates 20 --model iv
"""
import argparse
import time
from dataclasses import replace

import numpy as np

from exposure_erf.config import RunConfig
from exposure_erf.diagnostics import gelman_rubin
from exposure_erf.mcmc import build_model_spec, run_chains
from exposure_erf.synth import generate, load_scenario


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--scenario", help="scenario JSON (default: bundled)")
    p.add_argument("--model", default="iv", choices=("i", "ii", "iii", "iv"))
    p.add_argument("--replicates", type=int, default=20)
    p.add_argument("--burn-in", type=int, default=5000)
    p.add_argument("--iterations", type=int, default=20000)
    p.add_argument("--thin", type=int, default=10)
    args = p.parse_args()

    scenario, _ = load_scenario(args.scenario)
    truth = np.exp(10 * scenario.gamma)
    hits = 0
    for r in range(args.replicates):
        t0 = time.time()
        data = generate(replace(scenario, seed=scenario.seed + r))
        spec = build_model_spec(RunConfig(model=args.model), data.health, data.monitor, data.exposure)
        draws = run_chains(spec, 2, args.burn_in, args.iterations, args.thin, seed=r)
        rr = np.exp(10 * draws.gamma.ravel())
        lo, med, hi = np.quantile(rr, [0.025, 0.5, 0.975])
        hit = lo <= truth <= hi
        hits += hit
        rhat = max(gelman_rubin(draws).values())
        print(f"rep {r:2d}: {med:.4f} ({lo:.4f}, {hi:.4f}) {'covers' if hit else 'MISSES'}  R-hat {rhat:.3f}  {time.time() - t0:.0f}s")
    print(f"coverage {hits}/{args.replicates} of RR10 = {truth:.4f}")


if __name__ == "__main__":
    main()
