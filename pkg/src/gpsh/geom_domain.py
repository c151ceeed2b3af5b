"""Domains given by a defining function and the convexity of their boundaries.

A domain is ``{rho < 0}`` inside an axis-aligned box. Boundary points are
found by Newton projection from a lattice; the second fundamental form is
taken with respect to the inward normal, so the unit ball has II = I.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (CompositionRuleViolated, DegenerateDefiningFunction, DomainError,
                     EmptyBoundary, LambdaSearchFailed, NotStrictlyConvex)
from .grassmann import FiberField, GrassmannSet, _orthonormal_complement
from .symcore import ScalarField, fd_hessian

log = logging.getLogger(__name__)

MIN_GRAD = 1e-6
CONVEX_TOL = 1e-6


@dataclass(frozen=True)
class ImplicitDomain:
    n: int
    rho: ScalarField
    box: tuple  # ((lo_1, hi_1), ..., (lo_n, hi_n))
    boundary_tol: float = 1e-8
    name: str = ""

    def lo(self) -> np.ndarray:
        return np.array([b[0] for b in self.box], dtype=float)

    def hi(self) -> np.ndarray:
        return np.array([b[1] for b in self.box], dtype=float)

    def contains(self, x) -> bool:
        return self.rho(x) < 0


@dataclass(frozen=True)
class BoundaryPoint:
    x: np.ndarray
    normal: np.ndarray
    tangent_frame: np.ndarray
    II: np.ndarray
    grad_norm: float


# ---------------------------------------------------------------- builtin domains

def _ball(n: int = 3, radius: float = 1.0, center=None) -> ImplicitDomain:
    c = np.zeros(n) if center is None else np.asarray(center, dtype=float)

    def f(x):
        return np.linalg.norm(x - c) - radius

    def g(x):
        y = x - c
        return y / np.linalg.norm(y)

    def H(x):
        y = x - c
        r = np.linalg.norm(y)
        u = y / r
        return (np.eye(n) - np.outer(u, u)) / r

    box = tuple((float(ci - 1.5 * radius), float(ci + 1.5 * radius)) for ci in c)
    return ImplicitDomain(n, ScalarField(n, f, g, H), box, name="ball")


def _ellipse(a: float = 2.0, b: float = 1.0) -> ImplicitDomain:
    D = np.diag([2 / a**2, 2 / b**2])
    rho = ScalarField(2, lambda x: x[0]**2 / a**2 + x[1]**2 / b**2 - 1, lambda x: D @ x, lambda x: D)
    return ImplicitDomain(2, rho, ((-1.5 * a, 1.5 * a), (-1.5 * b, 1.5 * b)), name="ellipse")


def _hyperboloid(half_width: float = 2.0) -> ImplicitDomain:
    D = np.diag([2.0, 2.0, -2.0])
    rho = ScalarField(3, lambda x: x[0]**2 + x[1]**2 - x[2]**2 - 1, lambda x: D @ x, lambda x: D)
    w = half_width
    return ImplicitDomain(3, rho, ((-w, w),) * 3, name="hyperboloid")


def _halfspace(n: int = 2) -> ImplicitDomain:
    e = np.eye(n)[0]
    rho = ScalarField(n, lambda x: x[0], lambda x: e, lambda x: np.zeros((n, n)))
    return ImplicitDomain(n, rho, ((-1.0, 1.0),) * n, name="halfspace")


def _annulus(inner: float = 0.5, outer: float = 1.0) -> ImplicitDomain:
    rho = ScalarField(2, lambda x: max(np.hypot(*x) - outer, inner - np.hypot(*x)))
    return ImplicitDomain(2, rho, ((-1.5 * outer, 1.5 * outer),) * 2, name="annulus")


def crescent_rho(x) -> float:
    """Lower half-disk of radius 3 with two lobes over 1 < |x| < 3.

    The lobes are bounded above by y = 1 - (|x| - 2)^2, peaking at
    (-2, 1) and (2, 1); the segment [-1, 1] x {0} is part of the boundary.
    """
    X, Y = float(x[0]), float(x[1])
    disk = X * X + Y * Y - 9.0
    lobe_top = 1.0 - (abs(X) - 2.0) ** 2
    return min(max(disk, Y), max(Y - lobe_top, disk))


def _crescent() -> ImplicitDomain:
    return ImplicitDomain(2, ScalarField(2, crescent_rho), ((-3.5, 3.5), (-3.5, 1.5)),
                          name="crescent513")


BUILTIN_DOMAINS: dict[str, Callable[..., ImplicitDomain]] = {
    "ball": _ball,
    "ellipse": _ellipse,
    "hyperboloid": _hyperboloid,
    "crescent513": _crescent,
    "halfspace": _halfspace,
    "annulus": _annulus,
}


def builtin_domain(name: str, **params) -> ImplicitDomain:
    try:
        return BUILTIN_DOMAINS[name](**params)
    except KeyError:
        raise KeyError(f"unknown domain {name!r}; known: {sorted(BUILTIN_DOMAINS)}") from None


# ---------------------------------------------------------------- boundary sampling

def lattice_points(box, h: float) -> np.ndarray:
    axes = [np.arange(lo, hi + 0.5 * h, h) for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def tangent_frame(normal: np.ndarray) -> np.ndarray:
    return _orthonormal_complement(normal[:, None])


def boundary_point(D: ImplicitDomain, x) -> BoundaryPoint:
    x = np.asarray(x, dtype=float)
    g = D.rho.gradient(x)
    gn = float(np.linalg.norm(g))
    if gn < MIN_GRAD:
        raise DegenerateDefiningFunction(f"|grad rho| = {gn:.3g} at {x.tolist()}")
    normal = -g / gn
    T = tangent_frame(normal)
    II = T.T @ D.rho.hessian(x) @ T / gn
    return BoundaryPoint(x, normal, T, 0.5 * (II + II.T), gn)


def _newton_project(D: ImplicitDomain, x: np.ndarray, lo, hi, max_iter: int = 50) -> Optional[np.ndarray]:
    margin = 1e-9 + 1e-6 * float(np.max(hi - lo))
    for _ in range(max_iter):
        r = D.rho(x)
        if abs(r) <= D.boundary_tol:
            return x
        g = D.rho.gradient(x)
        gg = float(g @ g)
        if gg < MIN_GRAD**2:
            return None
        x = x - r * g / gg
        if np.any(x < lo - margin) or np.any(x > hi + margin):
            return None
    return x if abs(D.rho(x)) <= D.boundary_tol else None


def sample_boundary(D: ImplicitDomain, grid_h: float, seed: int = 0,
                    max_points: Optional[int] = None) -> list[BoundaryPoint]:
    """Boundary samples from lattice points near the zero set.

    ``seed`` drives the random subsampling used when ``max_points`` caps the
    number of returned points; the lattice itself is fixed by the box.
    """
    pts = lattice_points(D.box, grid_h)
    vals = np.array([D.rho(p) for p in pts])
    if not (np.any(vals < 0) and np.any(vals > 0)):
        raise EmptyBoundary("defining function does not change sign in the box")
    near = pts[np.abs(vals) < grid_h]
    if max_points is not None and len(near) > max_points:
        rng = np.random.default_rng(seed)
        near = near[np.sort(rng.choice(len(near), max_points, replace=False))]
    lo, hi = D.lo(), D.hi()
    out, skipped = [], 0
    for p in near:
        x = _newton_project(D, p.astype(float), lo, hi)
        if x is None:
            skipped += 1
            continue
        try:
            out.append(boundary_point(D, x))
        except DegenerateDefiningFunction:
            skipped += 1
    if skipped:
        log.warning("sample_boundary skipped %d of %d candidate points", skipped, len(near))
    if not out:
        raise EmptyBoundary("no boundary point could be projected")
    return out


def second_fundamental_form(D: ImplicitDomain, b: BoundaryPoint) -> np.ndarray:
    """II = T^T Hess rho T / |grad rho| with T the tangent frame of ``b``."""
    g = D.rho.gradient(b.x)
    gn = float(np.linalg.norm(g))
    if gn < MIN_GRAD:
        raise DegenerateDefiningFunction(f"|grad rho| = {gn:.3g} at {b.x.tolist()}")
    T = b.tangent_frame
    II = T.T @ D.rho.hessian(b.x) @ T / gn
    return 0.5 * (II + II.T)


# ---------------------------------------------------------------- boundary convexity

@dataclass(frozen=True)
class BoundaryVerdict:
    point: BoundaryPoint
    min_tangential_trace: float
    verdict: str


def _fiber(G: GrassmannSet, x):
    return G.fiber(x) if isinstance(G, FiberField) else G


def boundary_convexity(D: ImplicitDomain, G: GrassmannSet, strict_eta: float = 0.0,
                       grid_h: Optional[float] = None, seed: int = 0,
                       samples: Optional[Sequence[BoundaryPoint]] = None) -> list[BoundaryVerdict]:
    """Least trace of II over tangential planes of G at each boundary sample."""
    if samples is None:
        h = grid_h if grid_h is not None else float(np.min(D.hi() - D.lo())) / 20
        samples = sample_boundary(D, h, seed)
    out = []
    for b in samples:
        F = _fiber(G, b.x)
        m = None
        if F is not None:
            A = D.rho.hessian(b.x) / b.grad_norm
            m = F.tangential_min_trace(A, b.normal)
        if m is None:
            out.append(BoundaryVerdict(b, math.nan, "free"))
        elif m > strict_eta:
            out.append(BoundaryVerdict(b, m, "strictly_convex"))
        elif m >= -CONVEX_TOL:
            out.append(BoundaryVerdict(b, m, "convex"))
        else:
            out.append(BoundaryVerdict(b, m, "not_convex"))
    return out


# ---------------------------------------------------------------- global defining function

def canonical_angle(frame: np.ndarray, normal: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Angle between a plane and the tangent hyperplane orthogonal to ``normal``.

    Returns ``(theta, e, e1)`` where ``e`` is the unit vector of the plane
    orthogonal to its intersection with the tangent hyperplane, written
    ``e = cos(theta) normal + sin(theta) e1`` with ``e1`` tangent.
    """
    c = frame.T @ normal
    cn = float(np.linalg.norm(c))
    if cn < 1e-15:
        e = frame[:, 0]
        return math.pi / 2, e, e
    e = frame @ (c / cn)
    cos_t = float(e @ normal)
    theta = math.acos(min(1.0, max(-1.0, cos_t)))
    t = e - cos_t * normal
    tn = float(np.linalg.norm(t))
    e1 = t / tn if tn > 1e-15 else tangent_frame(normal)[:, 0]
    return theta, e, e1


def quadratic_modification(rho: ScalarField, lam: float) -> ScalarField:
    """rho + (lam/2) rho^2 with chain-rule derivatives."""
    def f(x):
        r = rho.eval(x)
        return r + 0.5 * lam * r * r

    def g(x):
        return (1 + lam * rho.eval(x)) * rho.gradient(x)

    def H(x):
        r = rho.eval(x)
        dr = rho.gradient(x)
        return (1 + lam * r) * rho.hessian(x) + lam * np.outer(dr, dr)

    return ScalarField(rho.dim, f, g, H, rho.fd_step)


@dataclass
class GlobalDefining:
    lam: float
    eta: float
    rho_tilde: ScalarField
    margin: float
    lambda_bound: float
    residual_decomposition: float
    residual_hessian: float
    n_samples: int


def make_global_defining(D: ImplicitDomain, G: GrassmannSet, collar_eps: float = 0.05,
                         grid_h: Optional[float] = None, seed: int = 0,
                         samples: Optional[Sequence[BoundaryPoint]] = None,
                         angle_cutoff: float = 0.1, lambda_cap: float = 2.0**40,
                         strict_tol: float = 1e-6) -> GlobalDefining:
    """Find lam so that rho + (lam/2) rho^2 is strictly G-psh along the boundary.

    The margin 2 eta is the least tangential trace of Hess rho over the
    samples; lam doubles from 1 until every plane of G has trace at least
    eta. ``collar_eps`` sets the depth of the interior points used to check
    the Hessian identity of the modified function.
    """
    if samples is None:
        h = grid_h if grid_h is not None else float(np.min(D.hi() - D.lo())) / 20
        samples = sample_boundary(D, h, seed)
    data = []
    for b in samples:
        F = _fiber(G, b.x)
        if F is None:
            continue
        H = D.rho.hessian(b.x)
        g = D.rho.gradient(b.x)
        tmin = F.tangential_min_trace(H, b.normal)
        data.append((b, F, H, g, D.rho(b.x), tmin))
    if not data:
        raise NotStrictlyConvex("no boundary sample carries a plane of G")
    tang = [d[5] for d in data if d[5] is not None]
    two_eta = min(tang) if tang else math.inf
    if not two_eta > strict_tol:
        raise NotStrictlyConvex(f"least tangential trace of Hess rho is {two_eta:.3g}")
    eta = 0.5 * two_eta if math.isfinite(two_eta) else 1.0
    M = max(0.0, -min(F.extremize(H).min_trace for _, F, H, _, _, _ in data))
    gmin = min(float(np.linalg.norm(g)) for _, _, _, g, _, _ in data)
    bound = (M + eta) / (angle_cutoff**2 * gmin**2)

    def margin(lam):
        return min(F.extremize((1 + lam * r) * H + lam * np.outer(g, g)).min_trace
                   for _, F, H, g, r, _ in data)

    lam = 1.0
    while margin(lam) < eta:
        lam *= 2
        if lam > lambda_cap:
            raise LambdaSearchFailed(f"no lambda up to {lambda_cap:g} reaches margin {eta:.3g}")
    rho_t = quadratic_modification(D.rho, lam)
    plain = ScalarField(D.n, rho_t.eval, fd_step=D.rho.fd_step)

    rng = np.random.default_rng(seed)
    res_dec = 0.0
    for b, F, H, g, r, _ in data:
        Ht = fd_hessian(plain, b.x)
        frames = [F.extremize(rho_t.hessian(b.x)).witness_min.frame]
        frames += list(F.sample(3, rng))
        for Fr in frames:
            theta, _, _ = canonical_angle(Fr, b.normal)
            lhs = float(np.trace(Fr.T @ Ht @ Fr))
            rhs = float(np.trace(Fr.T @ H @ Fr)) + lam * math.cos(theta) ** 2 * float(g @ g)
            res_dec = max(res_dec, abs(lhs - rhs))

    # Hessian identity at boundary samples and at points pushed into the collar
    res_hess = 0.0
    pts = [b.x for b, *_ in data[:: max(1, len(data) // 20)]]
    pts += [b.x + collar_eps * rng.uniform() * b.normal for b, *_ in data[:: max(1, len(data) // 20)]]
    for x in pts:
        r = D.rho(x)
        dr = D.rho.gradient(x)
        expect = (1 + lam * r) * D.rho.hessian(x) + lam * np.outer(dr, dr)
        res_hess = max(res_hess, float(np.max(np.abs(fd_hessian(plain, x) - expect))))
    return GlobalDefining(lam, eta, rho_t, margin(lam), bound, res_dec, res_hess, len(data))


# ---------------------------------------------------------------- exhaustion calculus

@dataclass(frozen=True)
class Profile:
    """A real function of one variable with its first two derivatives."""

    f: Callable[[float], float]
    d1: Callable[[float], float]
    d2: Callable[[float], float]


IDENTITY = Profile(lambda t: t, lambda t: 1.0, lambda t: 0.0)
EXP = Profile(math.exp, math.exp, math.exp)


def compose_convex_increasing(u: ScalarField, phi: Profile,
                              check_points: Optional[Sequence] = None,
                              tol: float = 1e-12) -> ScalarField:
    """phi o u with Hessian phi'(u) Hess u + phi''(u) grad u grad u^T.

    ``phi`` must be nondecreasing and convex on the range of ``u``. When
    ``check_points`` is given the range is sampled up front; every
    derivative evaluation also checks the two signs at the current value.
    """
    def check(t):
        if phi.d1(t) < -tol or phi.d2(t) < -tol:
            raise CompositionRuleViolated(f"profile is not convex nondecreasing at t={t:.6g}")

    if check_points is not None:
        vals = [u(x) for x in check_points]
        for t in np.linspace(min(vals), max(vals), 257):
            check(float(t))

    def f(x):
        return phi.f(u.eval(x))

    def g(x):
        t = u.eval(x)
        check(t)
        return phi.d1(t) * u.gradient(x)

    def H(x):
        t = u.eval(x)
        check(t)
        du = u.gradient(x)
        return phi.d1(t) * u.hessian(x) + phi.d2(t) * np.outer(du, du)

    return ScalarField(u.dim, f, g, H, u.fd_step)


def exhaustion_from_defining(D: ImplicitDomain) -> ScalarField:
    """-log(-rho), finite only inside the domain."""
    rho = D.rho

    def inside(x):
        r = rho.eval(x)
        if r >= 0:
            raise DomainError(f"rho = {r:.3g} >= 0 at {np.asarray(x).tolist()}")
        return r

    def f(x):
        return -math.log(-inside(x))

    def g(x):
        return -rho.gradient(x) / inside(x)

    def H(x):
        r = inside(x)
        dr = rho.gradient(x)
        return -rho.hessian(x) / r + np.outer(dr, dr) / (r * r)

    return ScalarField(D.n, f, g, H, rho.fd_step)


def _glue_polys():
    # derivative of the clamp rises as g(s) = 1 - (1-s)^4 (1+4s) over a window
    # of length 3/2; the mean of g is 2/3 so the clamp rejoins t at c+1
    P = np.polynomial.Polynomial
    h = P([1, -1]) ** 4 * P([1, 4])
    g = 1 - h
    return g.integ(), g, g.deriv()


_G_INT, _G, _G_D = _glue_polys()
GLUE_WINDOW = 1.5


def glue_profile(c: float) -> Profile:
    """C^2 convex nondecreasing clamp equal to c below c-1/2 and to t above c+1."""
    a, L = c - 0.5, GLUE_WINDOW

    def f(t):
        if t <= a:
            return c
        if t >= c + 1:
            return t
        return c + L * float(_G_INT((t - a) / L))

    def d1(t):
        if t <= a:
            return 0.0
        if t >= c + 1:
            return 1.0
        return float(_G((t - a) / L))

    def d2(t):
        if t <= a or t >= c + 1:
            return 0.0
        return float(_G_D((t - a) / L)) / L

    return Profile(f, d1, d2)


def glue_exhaustion(v: ScalarField, c: float) -> ScalarField:
    """Clamp v from below near c so the result is constant where v <= c - 1."""
    return compose_convex_increasing(v, glue_profile(c))


# ---------------------------------------------------------------- horizontal slices

@dataclass
class SliceReport:
    g_convex: bool
    witness_slice: Optional[float]
    runs: np.ndarray
    ys: np.ndarray


def rasterize(D: ImplicitDomain, grid_h: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inside mask on a grid, indexed [row (y), column (x)]."""
    (x0, x1), (y0, y1) = D.box
    xs = np.arange(x0, x1 + 0.5 * grid_h, grid_h)
    ys = np.arange(y0, y1 + 0.5 * grid_h, grid_h)
    mask = np.array([[D.rho((x, y)) < 0 for x in xs] for y in ys])
    return mask, xs, ys


def count_runs(mask: np.ndarray) -> np.ndarray:
    """Number of maximal runs of True in each row."""
    m = mask.astype(np.int8)
    starts = np.diff(np.concatenate([np.zeros((m.shape[0], 1), np.int8), m], axis=1), axis=1) == 1
    return starts.sum(axis=1)


def horizontal_slice_connectivity(D: ImplicitDomain, grid_h: float) -> SliceReport:
    mask, xs, ys = rasterize(D, grid_h)
    runs = count_runs(mask)
    bad = np.nonzero(runs > 1)[0]
    witness = float(ys[bad[0]]) if bad.size else None
    return SliceReport(not bad.size, witness, runs, ys)


def local_slice_connectivity(D: ImplicitDomain, grid_h: float, radius: float,
                             stride: int = 1) -> tuple[bool, Optional[tuple]]:
    """Slice connectivity inside discs of ``radius`` around boundary cells.

    Returns ``(ok, worst_center)``; a disc fails if one of its rows meets
    the domain in more than one run.
    """
    mask, xs, ys = rasterize(D, grid_h)
    pad = np.pad(mask, 1, constant_values=False)
    edge = mask & ~(pad[:-2, 1:-1] & pad[2:, 1:-1] & pad[1:-1, :-2] & pad[1:-1, 2:])
    k = int(math.ceil(radius / grid_h))
    off = np.arange(-k, k + 1)
    disc = (off[:, None] ** 2 + off[None, :] ** 2) * grid_h**2 <= radius**2
    rows, cols = np.nonzero(edge)
    for i, j in list(zip(rows, cols))[::stride]:
        sub = np.zeros_like(disc)
        r0, r1 = max(i - k, 0), min(i + k + 1, mask.shape[0])
        c0, c1 = max(j - k, 0), min(j + k + 1, mask.shape[1])
        sub[r0 - (i - k):r1 - (i - k), c0 - (j - k):c1 - (j - k)] = mask[r0:r1, c0:c1]
        if np.any(count_runs(sub & disc) > 1):
            return False, (float(xs[j]), float(ys[i]))
    return True, None
