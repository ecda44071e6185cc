"""Covariance error of the GMRF approximation against the folded Matern truth.

Sweeps m for both rational approximations and writes one CSV per algorithm
to ``results/``. Use ``--N 100`` for the finer grid (several minutes).
"""
import argparse
import os

from fracgmrf.cli import main

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--N", default="50")
p.add_argument("--nu", default="0.6")
p.add_argument("--range", default="0.5,1.0")
p.add_argument("--m", default="1,2,3,4")
p.add_argument("--workers", default="1")
p.add_argument("--outdir", default="results")
args = p.parse_args()
os.makedirs(args.outdir, exist_ok=True)
for algo in ("brasil", "chebyshev-pade"):
    out = os.path.join(args.outdir, f"bench_cov_{algo}_N{args.N}.csv")
    code = main(["bench-cov", "--N", args.N, "--nu", args.nu, "--range", args.range, "--m", args.m,
                 "--algo", algo, "--timing", "true", "--workers", args.workers, "--out", out])
    print(f"{algo}: exit {code}, wrote {out}")
