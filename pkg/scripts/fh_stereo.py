"""Cap-partition sums and the stereographic identity, printed as tables.

    python scripts/fh_stereo.py --caps 64 --res 64,128,256
"""
import argparse

import numpy as np

from competlab import acf, pipeline
from competlab.fields import CoefficientSpec


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--caps", type=int, default=64)
    p.add_argument("--res", default="64,128,256")
    p.add_argument("--eps", type=float, default=0.1, help="perturbation of B for the second stereo run")
    args = p.parse_args()

    cert = acf.friedman_hayman_check(args.caps)
    f = cert.fitted
    print(f"hemisphere sum {f['hemisphere_sum']:.10f}  min {f['min_sum']:.10f} at theta = {f['argmin_theta']:.4f}")
    for t, s, lam in list(zip(f["theta"], f["sums"], f["lambda"]))[:: max(1, args.caps // 16)]:
        print(f"  theta {t:.4f}  lambda {lam:12.6f}  sum {s:.6f}")

    res = tuple(int(x) for x in args.res.split(","))
    B = acf.spec_B(CoefficientSpec(dim=3, matrix_family="rotated-perturbation", eps=args.eps))
    for name, Bfun in (("identity", None), (f"perturbed eps={args.eps:g}", B)):
        print(f"stereographic identity, B {name}")
        for k, rep in enumerate(pipeline.stereo_suite(res, Bfun)):
            gaps = " ".join(f"{g:.2e}" for g in rep["gaps"])
            print(f"  u{k}: gaps {gaps}  orders {np.round(rep['orders'], 3)}")


if __name__ == "__main__":
    main()
