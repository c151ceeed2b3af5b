"""Riemannian calculus in a single chart.

Metrics are given in coordinates; Christoffel symbols come from centered
differences of the metric. The module also covers plane-field Laplacians,
the normal form of constant-rank second-order operators, surfaces in
Euclidean space and the horizontal-line field on the round 2-sphere.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import FrameError, MetricSingular, RankAmbiguous, SurfaceDegenerate
from .symcore import ScalarField, symform

RANGE_MIN = 1e-6
KERNEL_MAX = 1e-8


@dataclass(frozen=True)
class ChartMetric:
    dim: int
    g: Callable[[np.ndarray], np.ndarray]
    fd_step: float = 1e-4
    box: tuple = ()
    name: str = ""

    def metric(self, x) -> np.ndarray:
        G = symform(self.g(np.asarray(x, dtype=float)))
        lam = np.linalg.eigvalsh(G)
        if lam[0] <= 1e-8:
            raise MetricSingular(f"metric not positive definite at {np.asarray(x).tolist()}")
        return G

    def sample_points(self, count: int, seed) -> np.ndarray:
        rng = np.random.default_rng(seed)
        lo = np.array([b[0] for b in self.box])
        hi = np.array([b[1] for b in self.box])
        return lo + (hi - lo) * rng.uniform(size=(count, self.dim))


def metric_derivatives(gm: ChartMetric, x) -> np.ndarray:
    """dg[l, i, j] = d g_ij / d x_l by centered differences."""
    x = np.asarray(x, dtype=float)
    h = gm.fd_step
    out = np.empty((gm.dim, gm.dim, gm.dim))
    for l in range(gm.dim):
        e = np.zeros(gm.dim)
        e[l] = h
        out[l] = (symform(gm.g(x + e)) - symform(gm.g(x - e))) / (2 * h)
    return out


def christoffel(gm: ChartMetric, x) -> np.ndarray:
    """Gamma[k, i, j] of the Levi-Civita connection."""
    ginv = np.linalg.inv(gm.metric(x))
    dg = metric_derivatives(gm, x)
    # lowered symbols: Gamma_{l,ij} = ½(d_i g_jl + d_j g_il - d_l g_ij)
    low = 0.5 * (np.einsum("ijl->lij", dg) + np.einsum("jil->lij", dg) - dg)
    G = np.einsum("kl,lij->kij", ginv, low)
    return 0.5 * (G + np.swapaxes(G, 1, 2))


def metric_compatibility_defect(gm: ChartMetric, x) -> float:
    """max |nabla_k g_ij|, which vanishes for the Levi-Civita connection."""
    G = gm.metric(x)
    Gam = christoffel(gm, x)
    dg = metric_derivatives(gm, x)
    cov = dg - np.einsum("lki,lj->kij", Gam, G) - np.einsum("lkj,il->kij", Gam, G)
    return float(np.max(np.abs(cov)))


def riemannian_hessian(gm: ChartMetric, u: ScalarField, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    H = u.hessian(x) - np.einsum("kij,k->ij", christoffel(gm, x), u.gradient(x))
    return 0.5 * (H + H.T)


def g_orthonormalize(gm: ChartMetric, frame, x) -> np.ndarray:
    F = np.asarray(getattr(frame, "frame", frame), dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    if F.shape[0] != gm.dim:
        raise FrameError(f"frame has {F.shape[0]} rows, chart dimension is {gm.dim}")
    gram = F.T @ gm.metric(x) @ F
    if np.linalg.eigvalsh(gram)[0] <= 1e-12 * max(1.0, float(np.trace(gram))):
        raise FrameError("frame vectors are linearly dependent")
    L = np.linalg.cholesky(gram)
    return F @ np.linalg.inv(L).T


def w_laplacian(gm: ChartMetric, u: ScalarField, Wfield: Callable, x) -> float:
    """Trace of the Riemannian Hessian over the plane W_x."""
    F = g_orthonormalize(gm, Wfield(np.asarray(x, dtype=float)), x)
    return float(np.trace(F.T @ riemannian_hessian(gm, u, x) @ F))


def w_laplacian_coordinate_form(gm: ChartMetric, u: ScalarField, h: Callable, p: int, x) -> float:
    """<E, D^2 u> - <Gamma^t E, Du> with E the first p columns of h(x) squared.

    ``h(x)`` is a square matrix whose columns form a g-orthonormal frame
    with the first ``p`` columns spanning the plane.
    """
    x = np.asarray(x, dtype=float)
    Hm = np.asarray(h(x), dtype=float)
    if Hm.shape != (gm.dim, gm.dim):
        raise FrameError(f"frame matrix has shape {Hm.shape}")
    if np.max(np.abs(Hm.T @ gm.metric(x) @ Hm - np.eye(gm.dim))) > 1e-6:
        raise FrameError("frame is not g-orthonormal")
    E = Hm[:, :p] @ Hm[:, :p].T
    first = np.einsum("ij,kij->k", E, christoffel(gm, x))
    return float(np.sum(E * u.hessian(x)) - first @ u.gradient(x))


# ---------------------------------------------------------------- builtin charts

def _sphere_metric(x):
    return np.diag([1.0, math.sin(x[0]) ** 2])


def _polar_metric(x):
    return np.diag([1.0, x[0] ** 2])


def euclidean_chart(n: int = 2) -> ChartMetric:
    return ChartMetric(n, lambda x: np.eye(n), box=((-1.0, 1.0),) * n, name=f"euclidean{n}")


def polar_chart() -> ChartMetric:
    return ChartMetric(2, _polar_metric, box=((0.5, 2.0), (0.0, 2 * math.pi)), name="polar")


def sphere_chart(theta_margin: float = 0.1) -> ChartMetric:
    """Round S^2 in (theta, phi), poles excluded."""
    return ChartMetric(2, _sphere_metric,
                       box=((theta_margin, math.pi - theta_margin), (0.0, 2 * math.pi)),
                       name="sphere")


def sphere_embedding(q) -> np.ndarray:
    th, ph = q
    return np.array([math.sin(th) * math.cos(ph), math.sin(th) * math.sin(ph), math.cos(th)])


# ---------------------------------------------------------------- constant-rank normal form

@dataclass
class NormalForm:
    h: np.ndarray          # A + B
    frame: np.ndarray      # (A + B) R, with E = frame P frame^T
    p: int
    residual: float
    conjugation_residual: float
    first_order: np.ndarray  # H[k] with <P, H[k]> = b_k
    first_order_residual: float


def normalize_constant_rank(E, b, x=None, p: Optional[int] = None) -> NormalForm:
    """Write a rank-p form E as frame P frame^T with P = diag(1_p, 0).

    ``E`` and ``b`` are either arrays or callables of ``x``. The square
    root A of E plus the kernel projection B conjugates E to the
    projection onto its range; a rotation then carries that projection to
    the standard one. The first-order coefficient b is matched by
    H(v) = (b.v / p) P.
    """
    Ex = symform(E(x) if callable(E) else E)
    bx = np.asarray(b(x) if callable(b) else b, dtype=float)
    n = Ex.shape[0]
    lam, V = np.linalg.eigh(Ex)
    lam, V = lam[::-1], V[:, ::-1]
    rank = int(np.sum(lam >= RANGE_MIN))
    if p is None:
        p = rank
    if not 1 <= p <= n or lam[p - 1] < RANGE_MIN or (p < n and abs(lam[p]) > KERNEL_MAX) \
            or np.any(np.abs(lam[p:]) > KERNEL_MAX):
        raise RankAmbiguous(f"eigenvalues {lam.tolist()} do not separate at rank {p}")
    R, N = V[:, :p], V[:, p:]
    A = R @ np.diag(np.sqrt(lam[:p])) @ R.T
    B = N @ N.T
    h = A + B
    P = np.diag([1.0] * p + [0.0] * (n - p))
    frame = h @ V
    resid = float(np.linalg.norm(frame @ P @ frame.T - Ex))
    hinv = np.linalg.inv(h)
    conj = float(np.linalg.norm(hinv @ Ex @ hinv.T - R @ R.T))
    H = np.einsum("k,ij->kij", bx / p, P)
    first = float(np.linalg.norm(np.einsum("ij,kij->k", P, H) - bx))
    return NormalForm(h, frame, p, resid, conj, H, first)


# ---------------------------------------------------------------- surfaces

@dataclass(frozen=True)
class ParamSurface:
    N: int
    param: Callable[[np.ndarray], np.ndarray]
    box: tuple
    name: str = ""
    d1_step: float = 1e-4
    d2_step: float = 1e-3

    def point(self, q) -> np.ndarray:
        return np.asarray(self.param(np.asarray(q, dtype=float)), dtype=float)

    def jacobian(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        h = self.d1_step
        cols = []
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            cols.append((self.point(q + e) - self.point(q - e)) / (2 * h))
        return np.column_stack(cols)

    def second_derivatives(self, q) -> np.ndarray:
        """X_ij as an array of shape (2, 2, N)."""
        q = np.asarray(q, dtype=float)
        h = self.d2_step
        E = np.eye(2) * h
        X0 = self.point(q)
        out = np.empty((2, 2, self.N))
        for i in range(2):
            out[i, i] = (self.point(q + E[i]) - 2 * X0 + self.point(q - E[i])) / h**2
        out[0, 1] = out[1, 0] = (self.point(q + E[0] + E[1]) - self.point(q + E[0] - E[1])
                                 - self.point(q - E[0] + E[1]) + self.point(q - E[0] - E[1])) / (4 * h**2)
        return out

    def induced_metric(self, q) -> np.ndarray:
        J = self.jacobian(q)
        g = J.T @ J
        if np.linalg.det(g) < 1e-12:
            raise SurfaceDegenerate(f"parametrization degenerates at {np.asarray(q).tolist()}")
        return g

    def chart(self) -> ChartMetric:
        return ChartMetric(2, self.induced_metric, self.d1_step, self.box, self.name)

    def mean_curvature_vector(self, q) -> np.ndarray:
        """g^{ij} (X_ij)^perp, the trace of the vector second fundamental form."""
        J = self.jacobian(q)
        g = self.induced_metric(q)
        ginv = np.linalg.inv(g)
        Xij = self.second_derivatives(q)
        tang = J @ ginv @ J.T
        normal_part = Xij - np.einsum("ab,ijb->ija", tang, Xij)
        return np.einsum("ij,ija->a", ginv, normal_part)

    def sample_params(self, count: int, seed) -> np.ndarray:
        rng = np.random.default_rng(seed)
        lo = np.array([b[0] for b in self.box])
        hi = np.array([b[1] for b in self.box])
        return lo + (hi - lo) * rng.uniform(size=(count, 2))

    def minimality(self, samples: int = 50, seed: int = 0, tol: float = 1e-5) -> tuple[bool, float]:
        worst = max(float(np.linalg.norm(self.mean_curvature_vector(q)))
                    for q in self.sample_params(samples, seed))
        return worst <= tol, worst


def catenoid() -> ParamSurface:
    return ParamSurface(3, lambda q: np.array([math.cosh(q[0]) * math.cos(q[1]),
                                               math.cosh(q[0]) * math.sin(q[1]), q[0]]),
                        ((-1.0, 1.0), (0.0, 2 * math.pi)), "catenoid")


def helicoid() -> ParamSurface:
    return ParamSurface(3, lambda q: np.array([q[0] * math.cos(q[1]), q[0] * math.sin(q[1]), q[1]]),
                        ((-1.0, 1.0), (0.0, 2 * math.pi)), "helicoid")


def plane_surface() -> ParamSurface:
    return ParamSurface(3, lambda q: np.array([q[0], q[1], 0.0]), ((-1.0, 1.0), (-1.0, 1.0)), "plane")


def sphere_surface() -> ParamSurface:
    return ParamSurface(3, sphere_embedding, ((0.2, math.pi - 0.2), (0.0, 2 * math.pi)), "sphere")


BUILTIN_SURFACES = {"catenoid": catenoid, "helicoid": helicoid, "plane": plane_surface,
                    "sphere": sphere_surface}


def builtin_charts() -> dict[str, ChartMetric]:
    charts = {c.name: c for c in (euclidean_chart(2), euclidean_chart(3), polar_chart(), sphere_chart())}
    for name in ("catenoid", "helicoid"):
        charts[name] = BUILTIN_SURFACES[name]().chart()
    return charts


@dataclass
class RestrictionReport:
    max_defect: float
    mean_curvature_term: np.ndarray
    laplacian: np.ndarray
    ambient_trace: np.ndarray
    minimal_defect: float
    is_minimal: bool
    max_mean_curvature: float
    steps: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"max_defect": self.max_defect, "minimal_defect": self.minimal_defect,
                "is_minimal": self.is_minimal, "max_mean_curvature": self.max_mean_curvature,
                "mean_curvature_term": self.mean_curvature_term.tolist(),
                "laplacian": self.laplacian.tolist(), "ambient_trace": self.ambient_trace.tolist(),
                "fd_steps": self.steps}


def restriction_check(M: ParamSurface, u: ScalarField, samples: int = 200, seed: int = 0,
                      minimal_tol: float = 1e-5) -> RestrictionReport:
    """Compare the Laplacian of u|_M with the ambient trace over TM.

    The identity checked at each sample is Lap_M(u|_M) = tr_TM Hess u - H_M u,
    where H_M u = -<H, grad u> and H is :meth:`ParamSurface.mean_curvature_vector`.
    """
    chart = M.chart()
    f = ScalarField(2, lambda q: u(M.point(q)))
    lap, amb, corr = [], [], []
    worst_H = 0.0
    for q in M.sample_params(samples, seed):
        g = M.induced_metric(q)
        ginv = np.linalg.inv(g)
        lap.append(float(np.sum(ginv * riemannian_hessian(chart, f, q))))
        J = M.jacobian(q)
        X = M.point(q)
        amb.append(float(np.sum(ginv * (J.T @ u.hessian(X) @ J))))
        Hv = M.mean_curvature_vector(q)
        worst_H = max(worst_H, float(np.linalg.norm(Hv)))
        corr.append(-float(Hv @ u.gradient(X)))
    lap, amb, corr = np.array(lap), np.array(amb), np.array(corr)
    return RestrictionReport(float(np.max(np.abs(lap - amb + corr))), corr, lap, amb,
                             float(np.max(np.abs(lap - amb))), worst_H <= minimal_tol, worst_H,
                             {"first": M.d1_step, "second": M.d2_step})


# ---------------------------------------------------------------- sphere counterexample

def height_potential() -> ScalarField:
    """½(1 - y^2) on R^3, y the last coordinate."""
    return ScalarField(3, lambda x: 0.5 * (1 - x[2] ** 2), lambda x: np.array([0.0, 0.0, -x[2]]),
                       lambda x: np.diag([0.0, 0.0, -1.0]))


def horizontal_frame(q) -> np.ndarray:
    """Coordinate components of the unit horizontal vector d_phi / sin(theta)."""
    return np.array([0.0, 1.0 / math.sin(q[0])])


@dataclass
class SphereReport:
    max_trace_error: float
    min_trace: float
    trace_at_equator: float
    trace_at_half: float
    interior_max: float
    boundary_max: float
    mp_failure: bool
    ambient_error: float
    rows: list  # (y, trace) pairs

    def to_json(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if k != "rows"}


def sphere_counterexample(grid: int = 100, band: float = 0.9, theta_margin: float = 0.1) -> SphereReport:
    """Horizontal-line field on S^2 and the potential ½(1 - y^2).

    The trace of the Hessian over the horizontal line is y^2, so the
    potential is psh for that field, yet on the band |y| < ``band`` its
    maximum sits on the equator rather than on the boundary circles.
    """
    chart = sphere_chart(theta_margin)
    Phi = height_potential()
    phi = ScalarField(2, lambda q: Phi(sphere_embedding(q)))
    thetas = np.linspace(theta_margin, math.pi - theta_margin, grid)
    phis = np.linspace(0.0, 2 * math.pi, grid, endpoint=False)
    rows, err, amb_err, tmin = [], 0.0, 0.0, math.inf
    for th in thetas:
        for ph in phis:
            q = np.array([th, ph])
            y = math.cos(th)
            tr = w_laplacian(chart, phi, horizontal_frame, q)
            err = max(err, abs(tr - y * y))
            tmin = min(tmin, tr)
            rows.append((y, tr))
            # ambient formula: Hess^S = Hess^{R^3} restricted - <V,W> (nu . grad Phi)
            X = sphere_embedding(q)
            J = np.column_stack([np.array([math.cos(th) * math.cos(ph), math.cos(th) * math.sin(ph),
                                           -math.sin(th)]),
                                 np.array([-math.sin(th) * math.sin(ph), math.sin(th) * math.cos(ph), 0.0])])
            ambient = J.T @ Phi.hessian(X) @ J - (J.T @ J) * float(X @ Phi.gradient(X))
            amb_err = max(amb_err, float(np.max(np.abs(ambient - riemannian_hessian(chart, phi, q)))))
    eq = w_laplacian(chart, phi, horizontal_frame, np.array([math.pi / 2, 0.3]))
    half = w_laplacian(chart, phi, horizontal_frame, np.array([math.acos(0.5), 0.3]))
    ys = np.linspace(-band, band, 2 * grid + 1)
    vals = 0.5 * (1 - ys**2)
    interior_max = float(np.max(vals[1:-1]))
    boundary_max = float(max(vals[0], vals[-1]))
    return SphereReport(err, tmin, eq, half, interior_max, boundary_max,
                        interior_max > boundary_max + 1e-9 and tmin >= -1e-4, amb_err, rows)
