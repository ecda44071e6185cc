"""Relative log-likelihood error on data drawn from the folded Matern truth."""
import argparse
import os

from fracgmrf.cli import main

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--N", default="50")
p.add_argument("--nu", default="0.3,0.6,1.4")
p.add_argument("--m", default="1,2,3")
p.add_argument("--sigma-eps", default="0.1,0.5")
p.add_argument("--replicates", default="100")
p.add_argument("--seed", default="0")
p.add_argument("--workers", default="1")
p.add_argument("--outdir", default="results")
args = p.parse_args()
os.makedirs(args.outdir, exist_ok=True)
out = os.path.join(args.outdir, f"bench_loglik_N{args.N}.csv")
code = main(["bench-loglik", "--N", args.N, "--nu", args.nu, "--m", args.m,
             "--sigma-eps", args.sigma_eps, "--replicates", args.replicates,
             "--per-replicate", "false", "--seed", args.seed, "--workers", args.workers, "--out", out])
print(f"exit {code}, wrote {out}")
