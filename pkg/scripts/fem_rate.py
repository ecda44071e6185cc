"""FEM covariance error under refinement; prints observed and predicted slopes.

The predicted slope is min(4 beta - 1, 2) with 2 beta = nu + 1 in 2D.
"""
import argparse
import os

from fracgmrf.experiments import FemRateConfig, fem_rate

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--N", default="16,32,64")
p.add_argument("--nu", default="0.2,0.6,1.0")
p.add_argument("--workers", type=int, default=1)
p.add_argument("--outdir", default="results")
args = p.parse_args()
cfg = FemRateConfig(N=[int(x) for x in args.N.split(",")], nu=[float(x) for x in args.nu.split(",")])
rows = fem_rate(cfg, args.workers)
os.makedirs(args.outdir, exist_ok=True)
with open(os.path.join(args.outdir, "fem_rate.csv"), "w") as fh:
    fh.write("nu,N,h,l2_err,local_rate,fit_rate\n")
    for r in rows:
        fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in r) + "\n")
for nu in cfg.nu:
    fit = [r[5] for r in rows if r[0] == nu][0]
    print(f"nu={nu}: slope {fit:.3f}, predicted {min(2 * (nu + 1) - 1, 2):.3f}")
