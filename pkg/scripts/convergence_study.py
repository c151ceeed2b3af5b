"""Grid-refinement study for the Dirichlet solver.

Solves with several boundary data on a sequence of grids and prints the
sup-norm error against the known classical solution, plus the ratio between
consecutive grids.
"""
import argparse
import time

import numpy as np

from gpsh.dirichlet_solver import Lattice, boundary_data, solve_dirichlet
from gpsh.grassmann import FullGrassmannian

EXACT = {
    "saddle": (FullGrassmannian(2, 2), lambda X: X[:, 0] ** 2 - X[:, 1] ** 2),
    "xsq": (FullGrassmannian(1, 2), lambda X: X[:, 0] ** 2),
    # flat along a lattice direction: the discrete equation holds exactly
    "exp": (FullGrassmannian(1, 2), lambda X: np.exp(X[:, 0])),
    # flat along (0.3, -1), which no radius-2 stencil direction matches
    "tilted-exp": (FullGrassmannian(1, 2), lambda X: np.exp(X[:, 0] + 0.3 * X[:, 1])),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--levels", type=int, nargs="+", default=[8, 16, 32, 64])
    ap.add_argument("--method", choices=["gs", "policy"], default="policy")
    args = ap.parse_args()
    for name, (G, exact) in EXACT.items():
        prev = None
        print(f"# {name}")
        for m in args.levels:
            lat = Lattice(((-1.0, 1.0), (-1.0, 1.0)), 2.0 / m, layer=2)
            t0 = time.time()
            g = exact(lat.coords()).reshape(lat.shape)
            r = solve_dirichlet(g, G, lat, tol=1e-13, method=args.method)
            err = float(np.max(np.abs(r.u.values.ravel() - exact(lat.coords()))))
            ratio = prev / err if prev and err > 0 else float("nan")
            print(f"h=2/{m:<4d} err={err:.3e} ratio={ratio:.3f} time={time.time() - t0:.2f}s")
            prev = err


if __name__ == "__main__":
    main()
