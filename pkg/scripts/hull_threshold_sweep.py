"""Discrete hull of a triangle as the sublevel threshold and grid change."""
import argparse

import numpy as np

from gpsh.dirichlet_solver import Lattice, hull_field
from gpsh.grassmann import FullGrassmannian

TRIANGLE = [(-0.5, -0.5), (0.5, -0.5), (0.0, 0.5)]


def inside_triangle(X, V):
    a, b, c = (np.asarray(v, float) for v in V)
    lam = np.linalg.solve(np.column_stack([b - a, c - a]), (X - a).T).T
    return (lam >= -1e-9).all(axis=1) & (lam.sum(axis=1) <= 1 + 1e-9)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--levels", type=int, nargs="+", default=[32, 64])
    ap.add_argument("--thresholds", type=float, nargs="+", default=[0.2, 0.1, 0.05, 0.025, 1e-9])
    args = ap.parse_args()
    print("h,threshold,mismatch_cells,mismatch_area")
    for m in args.levels:
        lat = Lattice(((-1.0, 1.0), (-1.0, 1.0)), 1.0 / m, layer=2)
        K = np.zeros(lat.shape, dtype=bool)
        for v in TRIANGLE:
            K[lat.index_of(v)] = True
        w = hull_field(K, FullGrassmannian(1, 2), lat).ravel()
        truth = inside_triangle(lat.coords(), TRIANGLE)
        for t in args.thresholds:
            diff = int(np.sum((w < t) ^ truth))
            print(f"1/{m},{t:g},{diff},{diff / m**2:.5f}")


if __name__ == "__main__":
    main()
