"""Pohozaev gap of manufactured solutions under grid refinement.

The forcing is obtained by symbolic differentiation (sympy), so the fields
are exact solutions for A = I + eps sin(x_i + x_j).

    python scripts/manufactured_pohozaev.py --dim 2 --eps 0.1
"""
import argparse

import numpy as np
import sympy

from competlab import almgren
from competlab.fields import CoefficientSpec, SourceReaction
from competlab.grid import Grid, GridState


def manufactured(dim, eps):
    xs = sympy.symbols(f"x1:{dim + 1}")
    A = [[int(i == j) + eps * sympy.sin(xs[i] + xs[j]) for j in range(dim)] for i in range(dim)]
    us = [2 + sympy.cos(xs[0]) * sympy.exp(xs[1] / 2), 1 + xs[0] ** 2 * xs[1] + sympy.sin(xs[1])]
    fields, sources = [], []
    for u in us:
        g = -sum(sympy.diff(sum(A[k][l] * sympy.diff(u, xs[l]) for l in range(dim)), xs[k]) for k in range(dim))
        fields.append(sympy.lambdify(xs, u, "numpy"))
        sources.append(sympy.lambdify(xs, g, "numpy"))
    wrap = lambda f: (lambda X: f(*np.moveaxis(X, -1, 0)) + 0 * X[..., 0])
    spec = CoefficientSpec(dim=dim, matrix_family="rotated-perturbation", eps=eps,
                           reaction=SourceReaction(tuple(wrap(g) for g in sources)))
    return [wrap(f) for f in fields], spec


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--radii", default="0.3,0.4,0.5,0.6")
    p.add_argument("--levels", type=int, default=3, help="number of grids, coarsest h = 1/32 (2D) or 1/16 (3D)")
    args = p.parse_args()
    fields, spec = manufactured(args.dim, args.eps)
    radii = np.array([float(r) for r in args.radii.split(",")])
    h0 = 1 / 32 if args.dim == 2 else 1 / 16
    rows = []
    for k in range(args.levels):
        g = Grid(args.dim, 1.0, h0 / 2**k)
        X = g.nodes()
        st = GridState(g, np.stack([f(X) for f in fields]), spec, check=False)
        rows.append(almgren.radial_profile(st, radii).pohozaev_gap)
        print(f"h = 1/{round(1 / g.h)}  " + "  ".join(f"r={r:.2f}: {v:.3e}" for r, v in zip(radii, rows[-1])))
    G = np.array(rows)
    print("ratios under h -> h/2 (per radius):")
    print(np.round(G[1:] / G[:-1], 3))


if __name__ == "__main__":
    main()
