"""Angular resolution of the stencil families and the consistency constant.

For each radius, reports the worst angle from a plane to its nearest stencil
plane, and the ratio between the truncation error of the discrete operator on
a smooth test function and that angle.
"""
import argparse
import math

import numpy as np

from gpsh.dirichlet_solver import (Lattice, angular_resolution, build_stencil, min_max_traces,
                                   orthogonal_frames)
from gpsh.grassmann import FullGrassmannian
from gpsh.symcore import eigen_partial_sums


def test_function(X):
    return np.sin(1.3 * X[:, 0]) * np.cos(0.7 * X[:, 1]) + 0.4 * X[:, 0] * X[:, 1] ** 2


def test_hessian(x):
    s, c = math.sin(1.3 * x[0]), math.cos(0.7 * x[1])
    cs, sn = math.cos(1.3 * x[0]), math.sin(0.7 * x[1])
    return np.array([[-1.69 * s * c, -0.91 * cs * sn + 0.8 * x[1]],
                     [-0.91 * cs * sn + 0.8 * x[1], -0.49 * s * c + 0.8 * x[0]]])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--h", type=float, default=1 / 64)
    args = ap.parse_args()
    lat = Lattice(((-1.0, 1.0), (-1.0, 1.0)), args.h, layer=3)
    u = test_function(lat.coords())
    print("radius,dtheta_deg,max_error,error_over_dtheta")
    for radius in (1, 2, 3):
        dth = angular_resolution(orthogonal_frames(2, 1, radius), 2, 1)
        S = build_stencil(FullGrassmannian(1, 2), lat, radius)
        lo, _ = min_max_traces(u, lat, S)
        X = lat.coords()[lat.interior().ravel()]
        ok = ~np.isnan(lo)
        exact = np.array([eigen_partial_sums(test_hessian(x), 1)[0] for x in X[ok]])
        err = float(np.max(np.abs(lo[ok] - exact)))
        print(f"{radius},{math.degrees(dth):.3f},{err:.4e},{err / dth:.4f}")


if __name__ == "__main__":
    main()
