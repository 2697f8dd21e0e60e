"""Latent single-exposure variant with a Uniform(0, 25) variance prior.

Prints per-chain summaries of sigma2 and the R-hat values, next to a
model (iv) fit on the same data.

    python3 scripts/holloman_pathology.py --seed 2024
"""
import argparse
from dataclasses import replace

import numpy as np

from exposure_erf.config import RunConfig
from exposure_erf.diagnostics import gelman_rubin
from exposure_erf.mcmc import build_model_spec, holloman_variant, run_chains
from exposure_erf.synth import generate, load_scenario


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--chains", type=int, default=4)
    p.add_argument("--iterations", type=int, default=20000)
    args = p.parse_args()

    scenario, _ = load_scenario()
    data = generate(replace(scenario, seed=args.seed))
    spec_ii = build_model_spec(RunConfig(model="ii"), data.health, data.monitor, data.exposure)
    h = holloman_variant(spec_ii, args.chains, 5000, args.iterations, 10, seed=1)
    for c, s in enumerate(h.sigma2):
        q = np.quantile(s, [0.025, 0.5, 0.975])
        print(f"chain {c + 1}: sigma2 median {q[1]:.2f}  95% ({q[0]:.2f}, {q[2]:.2f})  range ({s.min():.2f}, {s.max():.2f})")
    print("variant R-hat:", {k: round(v, 3) for k, v in gelman_rubin(h).items() if k in ("gamma", "sigma2")})

    spec_iv = build_model_spec(RunConfig(model="iv"), data.health, data.monitor, data.exposure)
    iv = run_chains(spec_iv, 2, 5000, args.iterations, 10, seed=1)
    r = gelman_rubin(iv)
    print(f"model (iv) max R-hat {max(r.values()):.3f}")


if __name__ == "__main__":
    main()
