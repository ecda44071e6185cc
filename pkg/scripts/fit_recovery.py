"""Simulate from the fractional model and refit it, over several seeds.

Each seed takes one to two minutes on the default 50 x 50 mesh.
"""
import argparse
import os

from fracgmrf.cli import main

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--seeds", default="0,1,2")
p.add_argument("--n", default="50")
p.add_argument("--n-obs", default="2000")
p.add_argument("--outdir", default="results")
args = p.parse_args()
os.makedirs(args.outdir, exist_ok=True)
print("seed,nu,rho,sigma,sigma_eps,loglik")
for seed in args.seeds.split(","):
    obs = os.path.join(args.outdir, f"sim_seed{seed}.csv")
    out = os.path.join(args.outdir, f"fit_seed{seed}.csv")
    main(["simulate", "--n", args.n, "--n-obs", args.n_obs, "--nu", "0.6", "--range", "0.5",
          "--sigma", "1", "--sigma-eps", "0.1", "--seed", seed, "--out", obs])
    main(["fit", "--n", args.n, "--obs", obs, "--nu", "1.0", "--range", "0.3", "--sigma", "0.7",
          "--sigma-eps", "0.2", "--seed", seed, "--out", out])
    line = [l for l in open(out) if l.startswith("# result:")][0]
    r = dict(kv.split("=") for kv in line.split(":", 1)[1].split())
    print(",".join([seed, r["nu"], r["rho"], r["sigma"], r["sigma_eps"], r["loglik"]]))
