"""How often DIC picks the true seasonal spline df on synthetic data.

    python3 scripts/dic_df_selection.py --replicates 20 --dfs 8 11 15
"""
import argparse
import warnings

from exposure_erf.config import RunConfig
from exposure_erf.diagnostics import dic
from exposure_erf.mcmc import build_model_spec, run_chains
from exposure_erf.synth import SynthScenario, generate


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--replicates", type=int, default=20)
    p.add_argument("--dfs", type=int, nargs="+", default=[8, 11, 15])
    p.add_argument("--true-df", type=int, default=11)
    p.add_argument("--wiggle", type=float, default=0.05, help="alpha_noise_sd of the scenario")
    args = p.parse_args()
    warnings.simplefilter("ignore", RuntimeWarning)

    best_counts = {df: 0 for df in args.dfs}
    for rep in range(args.replicates):
        sc = SynthScenario(seed=100 + rep, count_model="ii", alpha_noise_sd=args.wiggle, replicates=10, time_df=args.true_df)
        data = generate(sc)
        res = {}
        for df in args.dfs:
            spec = build_model_spec(RunConfig(model="ii", time_df=df), data.health, data.monitor, data.exposure)
            res[df] = dic(run_chains(spec, 2, 2000, 10000, 5, seed=rep), spec).dic
        best = min(res, key=res.get)
        best_counts[best] += 1
        gaps = "  ".join(f"df{df}: {res[df] - res[args.true_df]:+6.1f}" for df in args.dfs)
        print(f"rep {rep:2d}  {gaps}  best df {best}")
    print("times chosen:", best_counts)


if __name__ == "__main__":
    main()
