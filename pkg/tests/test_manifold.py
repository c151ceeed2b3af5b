import math

import numpy as np
import pytest

from gpsh.errors import MetricSingular, RankAmbiguous
from gpsh.manifold import (ChartMetric, catenoid, christoffel, euclidean_chart, g_orthonormalize, helicoid,
                           metric_compatibility_defect, normalize_constant_rank, plane_surface, polar_chart,
                           restriction_check, riemannian_hessian, sphere_chart, w_laplacian)
from gpsh.symcore import ScalarField


def test_polar_christoffel_symbols():
    x = np.array([1.3, 0.4])
    G = christoffel(polar_chart(), x)
    # Gamma^r_{theta theta} = -r, Gamma^theta_{r theta} = 1/r
    assert math.isclose(G[0, 1, 1], -1.3, abs_tol=1e-6)
    assert math.isclose(G[1, 0, 1], 1 / 1.3, abs_tol=1e-6)
    assert metric_compatibility_defect(polar_chart(), x) < 1e-5


def test_sphere_christoffel():
    th = 0.7
    G = christoffel(sphere_chart(), np.array([th, 0.2]))
    assert math.isclose(G[0, 1, 1], -math.sin(th) * math.cos(th), abs_tol=1e-6)


def test_euclidean_hessian_is_plain_hessian():
    u = ScalarField(2, lambda x: x[0] ** 2 * x[1])
    x = np.array([0.4, -0.3])
    assert np.allclose(riemannian_hessian(euclidean_chart(2), u, x), [[-0.6, 0.8], [0.8, 0.0]], atol=1e-5)


def test_polar_laplacian_of_r_squared():
    # |x|^2 = r^2 has Euclidean Laplacian 4 in any chart
    u = ScalarField(2, lambda q: q[0] ** 2)
    gm = polar_chart()
    x = np.array([1.1, 0.3])
    full = lambda q: np.eye(2)
    W = lambda q: g_orthonormalize(gm, np.eye(2), q)
    assert math.isclose(w_laplacian(gm, u, W, x), 4.0, abs_tol=1e-5)


def test_singular_metric():
    gm = ChartMetric(2, lambda x: np.diag([1.0, 0.0]), box=((0, 1), (0, 1)))
    with pytest.raises(MetricSingular):
        gm.metric([0.5, 0.5])


def test_normal_form_degenerate_case():
    nf = normalize_constant_rank(np.diag([4.0, 0.0]), np.zeros(2))
    assert nf.p == 1
    assert np.allclose(nf.h, np.diag([2.0, 1.0]), atol=1e-12)
    assert nf.residual <= 1e-12


def test_normal_form_rank_ambiguous():
    with pytest.raises(RankAmbiguous):
        normalize_constant_rank(np.diag([1.0, 1e-7]), np.zeros(2))


@pytest.mark.parametrize("surface", [catenoid, helicoid, plane_surface])
def test_minimal_surfaces_restrict_psh(surface):
    u = ScalarField(3, lambda x: float(x @ x), lambda x: 2 * x, lambda x: 2 * np.eye(3))
    r = restriction_check(surface(), u, samples=50)
    assert r.is_minimal and r.max_defect < 1e-4 and r.laplacian.min() > 0
