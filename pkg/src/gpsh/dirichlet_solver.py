"""Monotone wide-stencil schemes on lattices.

A stencil family is a list of frames, each a set of mutually orthogonal
integer directions. For a frame f with directions d_1..d_p the discrete
trace at x is

    T_f u(x) = sum_i (u(x + d_i h) + u(x - d_i h) - 2 u(x)) / (|d_i| h)^2,

which is exact on quadratics. T_f u(x) = 0 exactly when u(x) equals the
weighted neighbour average with weights 1/|d_i|^2, so the Bellman update
u(x) <- min_f avg_f(x) is monotone and its fixed points satisfy
min_f T_f u = 0. The same sweep kernel drives envelopes (clip by an
obstacle) and the dual forcing u <- min(u, max_f avg_f).
"""
from __future__ import annotations

import csv
import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field
from functools import reduce
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numba import njit
from scipy.optimize import nnls

from .errors import (ConeViolation, DimError, DomainError, MaximumPrincipleAtRisk, NotConverged,
                     PreconditionFailed, StencilResolutionError)
from .grassmann import (ComplexLines, FiberField, FinitePlanes, FullGrassmannian, GrassmannSet,
                        span_analysis, svec)
from .symcore import Plane, projection_from_frame, random_frames

log = logging.getLogger(__name__)

SNAP_LIMIT_DEG = 25.0
DEFAULT_TOL = 1e-10
DEFAULT_MAX_SWEEPS = 100_000

HARMONIC, ENVELOPE, DUAL = 0, 1, 2


# ---------------------------------------------------------------- lattices

@dataclass(frozen=True, eq=False)
class Lattice:
    """Uniform grid on a box with a Dirichlet layer.

    Parameters
    ----------
    box : sequence of (lo, hi)
        One interval per axis, 1 to 3 axes.
    h : float
        Grid spacing, the same on every axis.
    layer : int
        Width of the boundary layer in cells. Must be at least the stencil
        radius used on the lattice.
    periodic : tuple of int
        Axes that wrap around; the upper end point is then omitted.
    domain : bool array, optional
        Points belonging to the region. Interior points are the domain
        points whose whole ``layer``-neighbourhood lies in the domain; the
        rest of the domain is the boundary layer.
    """

    box: tuple
    h: float
    layer: int = 2
    periodic: tuple = ()
    domain: Optional[np.ndarray] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        box = tuple((float(a), float(b)) for a, b in self.box)
        if not 1 <= len(box) <= 3:
            raise DimError(f"lattices have 1 to 3 axes, got {len(box)}")
        if self.h <= 0 or any(b <= a for a, b in box):
            raise DimError("box intervals must be nonempty and h positive")
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "periodic", tuple(int(a) for a in self.periodic))

    @property
    def dim(self) -> int:
        return len(self.box)

    @property
    def shape(self) -> tuple:
        out = []
        for ax, (a, b) in enumerate(self.box):
            cells = int(round((b - a) / self.h))
            out.append(cells if ax in self.periodic else cells + 1)
        return tuple(out)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def axes(self) -> list[np.ndarray]:
        return [np.round(a + self.h * np.arange(m), 12) + 0.0 for (a, _), m in zip(self.box, self.shape)]

    def coords(self) -> np.ndarray:
        """Point coordinates, shape ``(size, dim)`` in C order."""
        if "coords" not in self._cache:
            grids = np.meshgrid(*self.axes(), indexing="ij")
            self._cache["coords"] = np.stack([g.ravel() for g in grids], axis=1)
        return self._cache["coords"]

    def grids(self) -> list[np.ndarray]:
        return list(np.meshgrid(*self.axes(), indexing="ij"))

    def domain_mask(self) -> np.ndarray:
        if self.domain is None:
            return np.ones(self.shape, dtype=bool)
        m = np.asarray(self.domain, dtype=bool)
        if m.shape != self.shape:
            raise DimError(f"domain mask has shape {m.shape}, lattice is {self.shape}")
        return m

    def interior(self) -> np.ndarray:
        if "interior" not in self._cache:
            dom = self.domain_mask()
            inner = dom.copy()
            L = self.layer
            for shift in itertools.product(range(-L, L + 1), repeat=self.dim):
                inner &= self._shifted(dom, shift)
            self._cache["interior"] = inner
        return self._cache["interior"]

    def boundary(self) -> np.ndarray:
        return self.domain_mask() & ~self.interior()

    def _shifted(self, mask: np.ndarray, shift) -> np.ndarray:
        """mask evaluated at x + shift, False outside the array on open axes."""
        out = mask
        for ax, s in enumerate(shift):
            if s == 0:
                continue
            if ax in self.periodic:
                out = np.roll(out, -s, axis=ax)
            else:
                rolled = np.roll(out, -s, axis=ax)
                idx = [slice(None)] * self.dim
                idx[ax] = slice(-s, None) if s > 0 else slice(0, -s)
                rolled[tuple(idx)] = False
                out = rolled
        return out

    def neighbor_index(self, flat: np.ndarray, d) -> np.ndarray:
        """Flat index of x + d for the flat indices ``flat``."""
        multi = np.array(np.unravel_index(flat, self.shape))
        for ax in range(self.dim):
            multi[ax] = multi[ax] + int(d[ax])
            if ax in self.periodic:
                multi[ax] %= self.shape[ax]
        if np.any(multi < 0) or np.any(multi >= np.array(self.shape)[:, None]):
            raise DimError("stencil leaves the lattice; widen the boundary layer")
        return np.ravel_multi_index(tuple(multi), self.shape)

    def index_of(self, x) -> tuple:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return tuple(int(round((xi - a) / self.h)) for xi, (a, _) in zip(x, self.box))

    def to_json(self) -> dict:
        return {"box": [list(b) for b in self.box], "h": self.h, "layer": self.layer,
                "periodic": list(self.periodic), "shape": list(self.shape)}


@dataclass
class GridFunction:
    lattice: Lattice
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.lattice.shape)

    def write_csv(self, path) -> None:
        write_grid_csv(path, self.lattice, self.values)


def write_grid_csv(path, lattice: Lattice, values: np.ndarray) -> None:
    X = lattice.coords()
    v = np.asarray(values, dtype=float).ravel()
    names = ["x", "y", "z"][:lattice.dim]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + ["value"])
        for row, val in zip(X, v):
            w.writerow(["%.17g" % c for c in row] + ["%.17g" % val])


# ---------------------------------------------------------------- stencils

def primitive_directions(n: int, radius: int) -> list[tuple]:
    """Primitive integer vectors with max-norm <= radius, one per +-pair."""
    out = []
    for v in itertools.product(range(-radius, radius + 1), repeat=n):
        nz = [c for c in v if c != 0]
        if not nz or nz[0] < 0:
            continue
        if reduce(math.gcd, (abs(c) for c in nz)) != 1:
            continue
        out.append(tuple(v))
    out.sort(key=lambda v: (max(abs(c) for c in v), sum(c * c for c in v), [-c for c in v]))
    return out


def orthogonal_frames(n: int, p: int, radius: int) -> list[np.ndarray]:
    """Unordered p-tuples of pairwise orthogonal primitive directions."""
    dirs = primitive_directions(n, radius)
    frames = []
    for combo in itertools.combinations(dirs, p):
        V = np.array(combo, dtype=np.int64)
        G = V @ V.T
        if np.all(G[~np.eye(p, dtype=bool)] == 0):
            frames.append(V)
    return frames


def _frame_plane(V: np.ndarray) -> Plane:
    return projection_from_frame(V.T.astype(float))


def plane_angle(A: Plane, B: Plane) -> float:
    """Largest principal angle between two planes of equal dimension, radians."""
    s = np.linalg.svd(A.frame.T @ B.frame, compute_uv=False)
    return float(math.acos(min(1.0, float(np.min(s)))))


@dataclass
class StencilFamily:
    frames: list            # each (p, n) integer array, rows are directions
    n: int
    p: int
    radius: int
    snap_angles: list = field(default_factory=list)
    active: Optional[np.ndarray] = None   # (lattice size, n_frames) for fiber fields
    dtheta: float = float("nan")

    @property
    def count(self) -> int:
        return len(self.frames)

    def projections(self) -> np.ndarray:
        return np.array([_frame_plane(V).projection for V in self.frames]) if self.frames \
            else np.zeros((0, self.n, self.n))

    def directions(self) -> set:
        return {tuple(int(c) for c in d) for V in self.frames for d in V}

    def to_json(self) -> dict:
        return {"n": self.n, "p": self.p, "radius": self.radius,
                "frames": [V.tolist() for V in self.frames],
                "snap_angles_deg": [math.degrees(a) for a in self.snap_angles],
                "dtheta_deg": math.degrees(self.dtheta) if np.isfinite(self.dtheta) else None}


def _candidate_frames(n: int, p: int, radius: int) -> list[np.ndarray]:
    if p == n:
        return [np.eye(n, dtype=np.int64)]
    return orthogonal_frames(n, p, radius)


def _snap(planes: Sequence[Plane], cands: list[np.ndarray], radius: int) -> tuple[list[int], list[float]]:
    cplanes = [_frame_plane(V) for V in cands]
    picks, angles = [], []
    for W in planes:
        ang = [plane_angle(W, C) for C in cplanes]
        k = int(np.argmin(ang))
        if math.degrees(ang[k]) > SNAP_LIMIT_DEG:
            raise StencilResolutionError(
                f"plane is {math.degrees(ang[k]):.1f} deg from every radius-{radius} frame")
        picks.append(k)
        angles.append(ang[k])
    return picks, angles


def angular_resolution(frames: list[np.ndarray], n: int, p: int, samples: int = 4000, seed: int = 0) -> float:
    """Largest angle from a p-plane to the nearest stencil plane.

    Exact for lines in the plane, sampled otherwise.
    """
    if not frames:
        return float("nan")
    if n == 1 or p == n:
        return 0.0
    if n == 2 and p == 1:
        ang = sorted(math.atan2(V[0, 1], V[0, 0]) % math.pi for V in frames)
        gaps = np.diff(ang + [ang[0] + math.pi])
        return float(np.max(gaps)) / 2
    cp = [_frame_plane(V) for V in frames]
    worst = 0.0
    for Q in random_frames(n, p, samples, seed):
        W = Plane(Q, Q @ Q.T)
        worst = max(worst, min(plane_angle(W, C) for C in cp))
    return worst


def build_stencil(G: GrassmannSet, lattice: Lattice, radius: int = 2) -> StencilFamily:
    """Discretize a family of planes by orthogonal integer frames."""
    if radius not in (1, 2, 3):
        raise DimError("stencil radius must be 1, 2 or 3")
    if isinstance(G, ComplexLines):
        raise DimError("complex lines live in R^4 and above; lattices have at most 3 axes")
    n, p = G.n, G.p
    if n != lattice.dim:
        raise DimError(f"family lives in R^{n}, lattice has {lattice.dim} axes")
    if radius > lattice.layer and lattice.domain is None and len(lattice.periodic) < lattice.dim:
        raise DimError(f"stencil radius {radius} exceeds boundary layer {lattice.layer}")
    cands = _candidate_frames(n, p, radius)
    if isinstance(G, FullGrassmannian):
        return StencilFamily(cands, n, p, radius, dtheta=angular_resolution(cands, n, p))
    if isinstance(G, FinitePlanes):
        picks, angles = _snap(G.planes, cands, radius)
        keep = sorted(set(picks))
        frames = [cands[k] for k in keep]
        return StencilFamily(frames, n, p, radius, angles, dtheta=max(angles, default=float("nan")))
    if isinstance(G, FiberField):
        X = lattice.coords()
        active = np.zeros((lattice.size, len(cands)), dtype=bool)
        angles = []
        for i, x in enumerate(X):
            fib = G.fiber(x)
            if fib is None:
                continue
            if isinstance(fib, FullGrassmannian):
                active[i] = True
            elif isinstance(fib, FinitePlanes):
                picks, ang = _snap(fib.planes, cands, radius)
                active[i, picks] = True
                angles.extend(ang)
            else:
                raise DimError(f"fiber type {type(fib).__name__} is not supported on lattices")
        used = np.flatnonzero(active.any(axis=0))
        frames = [cands[k] for k in used]
        return StencilFamily(frames, n, p, radius, angles, active[:, used],
                             dtheta=max(angles) if angles else angular_resolution(frames, n, p))
    raise DimError(f"unsupported family {type(G).__name__}")


# ---------------------------------------------------------------- kernel tables

@dataclass
class _Tables:
    pts: np.ndarray      # (M,) flat interior indices, lexicographic
    nbr: np.ndarray      # (M, F, p, 2) flat neighbour indices
    wn: np.ndarray       # (F, p) normalized weights
    scale: np.ndarray    # (F,) 2 * sum 1/|d|^2, trace = scale * (avg - u) / h^2
    active: np.ndarray   # (M, F) bool


def _tables(lattice: Lattice, S: StencilFamily) -> _Tables:
    key = ("tables", id(S))
    if key in lattice._cache and lattice._cache[key][0] is S:
        return lattice._cache[key][1]
    pts = np.flatnonzero(lattice.interior().ravel())
    F, p = S.count, S.p
    nbr = np.empty((pts.size, F, p, 2), dtype=np.int64)
    wn = np.empty((F, p))
    scale = np.empty(F)
    dom = lattice.domain_mask().ravel()
    for f, V in enumerate(S.frames):
        w = 1.0 / np.sum(V.astype(float) ** 2, axis=1)
        wn[f] = w / w.sum()
        scale[f] = 2 * w.sum()
        for j, d in enumerate(V):
            nbr[:, f, j, 0] = lattice.neighbor_index(pts, d)
            nbr[:, f, j, 1] = lattice.neighbor_index(pts, -d)
    if F and not dom[nbr].all():
        raise DimError("stencil reaches outside the domain; widen the boundary layer")
    active = np.ones((pts.size, F), dtype=bool) if S.active is None else S.active[pts]
    t = _Tables(pts, nbr, wn, scale, np.ascontiguousarray(active))
    lattice._cache[key] = (S, t)
    return t


@njit(cache=True)
def _sweep(u, pts, nbr, wn, active, obstacle, mode, reverse):
    M = pts.shape[0]
    F = nbr.shape[1]
    p = nbr.shape[2]
    change = 0.0
    for k in range(M):
        i = M - 1 - k if reverse else k
        x = pts[i]
        lo = np.inf
        hi = -np.inf
        for f in range(F):
            if not active[i, f]:
                continue
            s = 0.0
            for j in range(p):
                s += wn[f, j] * (u[nbr[i, f, j, 0]] + u[nbr[i, f, j, 1]])
            s *= 0.5
            if s < lo:
                lo = s
            if s > hi:
                hi = s
        old = u[x]
        if mode == 0:
            new = lo if lo < np.inf else old
        elif mode == 1:
            new = min(obstacle[x], lo)
        else:
            new = min(old, hi) if hi > -np.inf else old
        u[x] = new
        d = abs(new - old)
        if d > change:
            change = d
    return change


@njit(cache=True)
def _jacobi(u, pts, nbr, wn, active, obstacle, mode):
    out = u.copy()
    M = pts.shape[0]
    F = nbr.shape[1]
    p = nbr.shape[2]
    change = 0.0
    for i in range(M):
        x = pts[i]
        lo = np.inf
        hi = -np.inf
        for f in range(F):
            if not active[i, f]:
                continue
            s = 0.0
            for j in range(p):
                s += wn[f, j] * (u[nbr[i, f, j, 0]] + u[nbr[i, f, j, 1]])
            s *= 0.5
            lo = min(lo, s)
            hi = max(hi, s)
        old = u[x]
        if mode == 0:
            new = lo if lo < np.inf else old
        elif mode == 1:
            new = min(obstacle[x], lo)
        else:
            new = min(old, hi) if hi > -np.inf else old
        out[x] = new
        change = max(change, abs(new - old))
    u[:] = out
    return change


def frame_averages(u: np.ndarray, lattice: Lattice, S: StencilFamily) -> np.ndarray:
    """Weighted neighbour average per interior point and frame, NaN if inactive."""
    t = _tables(lattice, S)
    v = np.asarray(u, dtype=float).ravel()
    avg = 0.5 * np.einsum("fj,mfj->mf", t.wn, v[t.nbr[..., 0]] + v[t.nbr[..., 1]])
    return np.where(t.active, avg, np.nan)


def frame_traces(u: np.ndarray, lattice: Lattice, S: StencilFamily) -> np.ndarray:
    """Discrete traces T_f u at interior points, shape ``(M, F)``."""
    t = _tables(lattice, S)
    v = np.asarray(u, dtype=float).ravel()
    avg = frame_averages(v, lattice, S)
    return t.scale * (avg - v[t.pts][:, None]) / lattice.h**2


def min_max_traces(u: np.ndarray, lattice: Lattice, S: StencilFamily) -> tuple[np.ndarray, np.ndarray]:
    T = frame_traces(u, lattice, S)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        lo = np.where(np.isnan(T).all(axis=1), np.inf, np.nanmin(np.where(np.isnan(T), np.inf, T), axis=1))
        hi = np.where(np.isnan(T).all(axis=1), -np.inf, np.nanmax(np.where(np.isnan(T), -np.inf, T), axis=1))
    return lo, hi


@dataclass
class OperatorValue:
    min_val: float
    max_val: float
    argmin_frame: Optional[np.ndarray]


def discrete_operator(u, S: StencilFamily, x, lattice: Lattice) -> OperatorValue:
    """Min and max discrete frame trace of u at the interior point x."""
    v = u.values if isinstance(u, GridFunction) else np.asarray(u, dtype=float)
    t = _tables(lattice, S)
    flat = np.ravel_multi_index(lattice.index_of(x), lattice.shape)
    row = np.searchsorted(t.pts, flat)
    if row >= t.pts.size or t.pts[row] != flat:
        raise DomainError(f"{np.asarray(x).tolist()} is not an interior lattice point")
    T = frame_traces(v, lattice, S)[row]
    if np.all(np.isnan(T)):
        return OperatorValue(math.inf, -math.inf, None)
    k = int(np.nanargmin(T))
    return OperatorValue(float(np.nanmin(T)), float(np.nanmax(T)), S.frames[k])


def psh_defect(u, lattice: Lattice, S: StencilFamily) -> tuple[float, Optional[int]]:
    """max over interior of u(x) - min_f avg_f(x), with the worst flat index."""
    v = np.asarray(getattr(u, "values", u), dtype=float).ravel()
    avg = frame_averages(v, lattice, S)
    lo = np.nanmin(np.where(np.isnan(avg), np.inf, avg), axis=1) if avg.shape[1] else \
        np.full(avg.shape[0], np.inf)
    gap = v[_tables(lattice, S).pts] - lo
    if gap.size == 0:
        return -math.inf, None
    k = int(np.argmax(gap))
    return float(gap[k]), int(_tables(lattice, S).pts[k])


def dual_defect(u, lattice: Lattice, S: StencilFamily) -> tuple[float, Optional[int]]:
    """max over interior of u(x) - max_f avg_f(x); +inf where no frame is active."""
    v = np.asarray(getattr(u, "values", u), dtype=float).ravel()
    avg = frame_averages(v, lattice, S)
    hi = np.nanmax(np.where(np.isnan(avg), -np.inf, avg), axis=1) if avg.shape[1] else \
        np.full(avg.shape[0], -np.inf)
    gap = v[_tables(lattice, S).pts] - hi
    if gap.size == 0:
        return -math.inf, None
    k = int(np.argmax(gap))
    return float(gap[k]), int(_tables(lattice, S).pts[k])


def is_discrete_psh(u, lattice, S, tol: float = 1e-9) -> bool:
    return psh_defect(u, lattice, S)[0] <= tol


def is_discrete_dual_psh(u, lattice, S, tol: float = 1e-9) -> bool:
    return dual_defect(u, lattice, S)[0] <= tol


# ---------------------------------------------------------------- iteration drivers

@dataclass
class SolveResult:
    u: GridFunction
    residual: float
    sweeps: int
    history: list
    min_trace_range: tuple
    method: str
    mp_ok: bool = True
    policy_iterations: int = 0

    def to_json(self) -> dict:
        return {"residual": self.residual, "sweeps": self.sweeps, "method": self.method,
                "policy_iterations": self.policy_iterations,
                "min_trace_range": list(self.min_trace_range), "max_principle_ok": self.mp_ok}


def _iterate(u: np.ndarray, t: _Tables, obstacle: np.ndarray, mode: int, tol: float,
             max_sweeps: int, jacobi: bool) -> tuple[float, int, list]:
    history = []
    change = math.inf
    for k in range(max_sweeps):
        if jacobi:
            change = _jacobi(u, t.pts, t.nbr, t.wn, t.active, obstacle, mode)
        else:
            change = _sweep(u, t.pts, t.nbr, t.wn, t.active, obstacle, mode, k % 2 == 1)
        history.append(change)
        if change <= tol:
            return change, k + 1, history
    raise NotConverged(f"no fixed point within {max_sweeps} sweeps", change, max_sweeps)


def _policy_iteration(u: np.ndarray, t: _Tables, obstacle: Optional[np.ndarray], max_iter: int = 200) -> int:
    """Howard iteration for u = min(obstacle, min_f avg_f); ``u`` updated in place.

    Each step fixes the minimizing choice per point and solves the linear
    system exactly. Returns the number of linear solves, or -1 if a policy
    system was singular (the caller then falls back to sweeping).
    """
    M = t.pts.size
    if M == 0:
        return 0
    F, p = t.nbr.shape[1], t.nbr.shape[2]
    row_of = np.full(u.size, -1, dtype=np.int64)
    row_of[t.pts] = np.arange(M)
    policy = None
    for it in range(1, max_iter + 1):
        avg = 0.5 * np.einsum("fj,mfj->mf", t.wn, u[t.nbr[..., 0]] + u[t.nbr[..., 1]])
        avg = np.where(t.active, avg, np.inf)
        best = np.argmin(avg, axis=1)
        lo = avg[np.arange(M), best]
        choice = best.copy()
        if obstacle is not None:
            choice[obstacle[t.pts] <= lo] = -1
        choice[np.isinf(lo) & (choice >= 0)] = -2  # unconstrained point keeps its value
        if policy is not None:
            # keep the previous choice on ties so the iteration cannot cycle
            cur = np.where(policy >= 0, avg[np.arange(M), np.maximum(policy, 0)], np.inf)
            if obstacle is not None:
                cur = np.where(policy == -1, obstacle[t.pts], cur)
            newval = np.where(choice >= 0, lo, obstacle[t.pts] if obstacle is not None else lo)
            tie = (policy >= 0) & (np.abs(cur - newval) <= 1e-14 * (1 + np.abs(newval)))
            tie |= (policy == -1) & (choice == -1)
            choice = np.where(tie, policy, choice)
            if np.array_equal(choice, policy):
                return it - 1
        policy = choice
        rows, cols, vals = [np.arange(M)], [np.arange(M)], [np.ones(M)]
        rhs = np.zeros(M)
        fixed = policy < 0
        rhs[policy == -1] = obstacle[t.pts][policy == -1] if obstacle is not None else 0.0
        rhs[policy == -2] = u[t.pts][policy == -2]
        sel = np.flatnonzero(~fixed)
        for j in range(p):
            w = -0.5 * t.wn[policy[sel], j]
            for side in (0, 1):
                nb = t.nbr[sel, policy[sel], j, side]
                r = row_of[nb]
                inner = r >= 0
                rows.append(sel[inner]); cols.append(r[inner]); vals.append(w[inner])
                np.add.at(rhs, sel[~inner], -w[~inner] * u[nb[~inner]])
        A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(M, M))
        with warnings.catch_warnings():
            warnings.simplefilter("error", spla.MatrixRankWarning)
            try:
                sol = spla.spsolve(A.tocsc(), rhs)
            except (spla.MatrixRankWarning, RuntimeError):
                return -1
        if not np.all(np.isfinite(sol)):
            return -1
        u[t.pts] = sol
    return max_iter


def _prepare(values, lattice: Lattice) -> np.ndarray:
    u = np.array(getattr(values, "values", values), dtype=float).reshape(lattice.shape).ravel().copy()
    dom = lattice.domain_mask().ravel()
    if not np.all(np.isfinite(u[dom])):
        raise DomainError("grid values must be finite on the domain")
    return u


def involves_all_on_lattice(G: GrassmannSet, S: StencilFamily, lattice: Lattice) -> bool:
    """Whether the active stencil projections span a positive form at every interior point."""
    if isinstance(G, (FullGrassmannian, FinitePlanes)):
        if not span_analysis(G).involves_all:
            return False
    P = S.projections()
    if S.count == 0:
        return False
    t = _tables(lattice, S)
    sums = np.einsum("mf,fij->mij", t.active.astype(float), P)
    return bool(np.all(np.linalg.eigvalsh(sums)[:, 0] > 1e-12))


def _boundary_extrema(u: np.ndarray, lattice: Lattice) -> tuple[float, float]:
    b = lattice.boundary().ravel()
    return float(np.max(u[b])), float(np.min(u[b]))


def solve_dirichlet(g, G: GrassmannSet, lattice: Lattice, tol: float = DEFAULT_TOL,
                    max_sweeps: int = DEFAULT_MAX_SWEEPS, radius: int = 2,
                    stencil: Optional[StencilFamily] = None, method: str = "gs",
                    jacobi: bool = False) -> SolveResult:
    """Discrete G-harmonic extension of the boundary values of ``g``.

    Parameters
    ----------
    g : array or GridFunction
        Values on the lattice; only the boundary layer is used as data,
        interior values are the initial guess.
    method : {"gs", "policy"}
        Symmetric Gauss-Seidel sweeps, or policy iteration with exact
        linear solves followed by sweeps to certify the fixed point.
    jacobi : bool
        Use simultaneous updates instead of Gauss-Seidel; same fixed point.
    """
    S = stencil or build_stencil(G, lattice, radius)
    if not involves_all_on_lattice(G, S, lattice):
        warnings.warn("family does not involve all variables; the maximum principle may fail",
                      MaximumPrincipleAtRisk, stacklevel=2)
    u = _prepare(g, lattice)
    t = _tables(lattice, S)
    obstacle = np.full(u.size, np.inf)
    pits = 0
    if method == "policy":
        pits = _policy_iteration(u, t, None)
        if pits < 0:
            log.info("policy system singular; continuing with sweeps")
    elif method != "gs":
        raise ValueError(f"unknown method {method!r}")
    residual, sweeps, hist = _iterate(u, t, obstacle, HARMONIC, tol, max_sweeps, jacobi)
    lo, _ = min_max_traces(u, lattice, S)
    finite = lo[np.isfinite(lo)]
    rng = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 0.0)
    bmax, bmin = _boundary_extrema(u, lattice)
    inner = u[t.pts]
    slack = 1e-9 + 10 * tol * max(1, lattice.shape[0])
    mp_ok = bool(inner.size == 0 or (inner.max() <= bmax + slack and inner.min() >= bmin - slack))
    return SolveResult(GridFunction(lattice, u), residual, sweeps, hist, rng, method, mp_ok, max(pits, 0))


def psh_envelope(obstacle, G: Optional[GrassmannSet], lattice: Lattice, tol: float = DEFAULT_TOL,
                 max_sweeps: int = DEFAULT_MAX_SWEEPS, radius: int = 2,
                 stencil: Optional[StencilFamily] = None, method: str = "gs",
                 jacobi: bool = False) -> GridFunction:
    """Largest discrete G-psh function lying below the obstacle.

    Boundary-layer values are fixed to the obstacle.
    """
    S = stencil or build_stencil(G, lattice, radius)
    psi = _prepare(obstacle, lattice)
    u = psi.copy()
    t = _tables(lattice, S)
    if method == "policy":
        if _policy_iteration(u, t, psi) < 0:
            u = psi.copy()
    elif method != "gs":
        raise ValueError(f"unknown method {method!r}")
    _iterate(u, t, psi, ENVELOPE, tol, max_sweeps, jacobi)
    return GridFunction(lattice, u)


def hull_field(K: np.ndarray, G: Optional[GrassmannSet], lattice: Lattice, tol: float = 1e-12,
               radius: int = 2, stencil: Optional[StencilFamily] = None, method: str = "policy") -> np.ndarray:
    K = np.asarray(K, dtype=bool).reshape(lattice.shape)
    if not K.any():
        raise DomainError("hull of an empty set")
    if np.any(K & ~lattice.interior()):
        raise DomainError("K must lie in the lattice interior")
    psi = np.where(K, 0.0, 1.0)
    return psh_envelope(psi, G, lattice, tol, radius=radius, stencil=stencil, method=method).values


def hull(K: np.ndarray, G: Optional[GrassmannSet], lattice: Lattice, threshold: float = 0.05,
         radius: int = 2, stencil: Optional[StencilFamily] = None, method: str = "policy") -> np.ndarray:
    """Discrete G-convex hull: {w <= threshold} for the envelope w of 1 - indicator(K)."""
    w = hull_field(K, G, lattice, radius=radius, stencil=stencil, method=method)
    return (w <= threshold) & lattice.domain_mask()


def hull_threshold_sweep(K, G, lattice: Lattice, thresholds=(0.2, 0.1, 0.05, 0.025),
                         radius: int = 2, stencil: Optional[StencilFamily] = None) -> dict:
    """Cell counts of the hull at each threshold, from a single envelope."""
    w = hull_field(K, G, lattice, radius=radius, stencil=stencil)
    return {float(c): int(np.sum(w <= c)) for c in thresholds}


# ---------------------------------------------------------------- property harnesses

def force_dual(u: np.ndarray, lattice: Lattice, S: StencilFamily, tol: float = 1e-13,
               max_sweeps: int = DEFAULT_MAX_SWEEPS) -> np.ndarray:
    """Largest function below u whose max discrete trace is nonnegative."""
    t = _tables(lattice, S)
    if S.count == 0 or not t.active.any(axis=1).all():
        bad = t.pts[~t.active.any(axis=1)][0] if S.count else t.pts[0]
        raise PreconditionFailed("no dually psh functions: empty fiber at an interior point",
                                 lattice.coords()[bad].tolist())
    v = _prepare(u, lattice)
    _iterate(v, t, np.full(v.size, np.inf), DUAL, tol, max_sweeps, False)
    return v


@dataclass
class MPReport:
    violations: int
    worst_gap: float
    trials: int
    involves_all: bool

    def to_json(self) -> dict:
        return dict(self.__dict__)


def max_principle_check(G: GrassmannSet, lattice: Lattice, trials: int = 200, seed: int = 0,
                        radius: int = 2, stencil: Optional[StencilFamily] = None) -> MPReport:
    """Random dually-psh grid functions against sup over the boundary.

    Trials cycle through three starting shapes: uniform noise, a concave
    paraboloid with a random interior peak, and a concave ridge along one
    random axis (constant in the others); the last two carry small noise.
    Each start is pushed down to the largest dually psh function below it.
    """
    S = stencil or build_stencil(G, lattice, radius)
    rng = np.random.default_rng(seed)
    t = _tables(lattice, S)
    b = lattice.boundary().ravel()
    X = lattice.coords()
    lo, hi = X.min(axis=0), X.max(axis=0)
    violations, worst = 0, -math.inf
    for k in range(trials):
        c = lo + (hi - lo) * rng.uniform(0.25, 0.75, lattice.dim)
        a = rng.uniform(0.5, 2.0)
        noise = 0.01 * rng.uniform(-1, 1, lattice.size)
        if k % 3 == 0:
            u = rng.uniform(-1, 1, lattice.size)
        elif k % 3 == 1:
            u = -a * np.sum((X - c) ** 2, axis=1) + noise
        else:
            ax = int(rng.integers(lattice.dim))
            u = -a * (X[:, ax] - c[ax]) ** 2 + noise
        v = force_dual(u, lattice, S)
        gap = float(v[t.pts].max() - v[b].max())
        worst = max(worst, gap)
        violations += gap > 1e-9
    return MPReport(violations, worst, trials, involves_all_on_lattice(G, S, lattice))


def comparison_check(u, v, lattice: Lattice, S: StencilFamily, tol: float = 1e-9) -> bool:
    """Zero maximum principle for u discrete-psh and v discrete-dually-psh.

    Returns whether ``u + v <= 0`` on the boundary implies ``u + v <= 0``
    inside (vacuously true when the boundary hypothesis fails).
    """
    uu = np.asarray(getattr(u, "values", u), dtype=float).ravel()
    vv = np.asarray(getattr(v, "values", v), dtype=float).ravel()
    gap, at = psh_defect(uu, lattice, S)
    if gap > tol:
        raise PreconditionFailed(f"u is not discrete psh (defect {gap:.3g})", lattice.coords()[at].tolist())
    gap, at = dual_defect(vv, lattice, S)
    if gap > tol:
        raise PreconditionFailed(f"v is not discretely dual psh (defect {gap:.3g})",
                                 lattice.coords()[at].tolist())
    w = uu + vv
    b = lattice.boundary().ravel()
    if w[b].max() > tol:
        return True
    pts = _tables(lattice, S).pts
    # each per-point defect can add up along a chain to the boundary
    slack = tol * (1 + max(lattice.shape)) * 2
    return bool(w[pts].max() <= slack)


def random_psh(lattice: Lattice, S: StencilFamily, rng, tol: float = 1e-13) -> np.ndarray:
    """Envelope of a random obstacle, a generic discrete G-psh function."""
    X = lattice.coords()
    psi = rng.uniform(-1, 1, lattice.size)
    c = rng.standard_normal(lattice.dim)
    psi += X @ c + 0.5 * rng.uniform(0, 2) * np.sum(X**2, axis=1)
    return psh_envelope(psi, None, lattice, tol, stencil=S, method="policy").values.ravel()


@dataclass
class ClosureReport:
    checks: dict      # name -> (passed, total)
    counterexample: Optional[dict] = None

    def all_pass(self) -> bool:
        return all(p == t for p, t in self.checks.values())

    def to_json(self) -> dict:
        return {"checks": {k: {"passed": p, "total": t} for k, (p, t) in self.checks.items()},
                "counterexample": self.counterexample}


def closure_properties_check(G: GrassmannSet, lattice: Lattice, seed: int = 0, pairs: int = 100,
                             radius: int = 2, stencil: Optional[StencilFamily] = None,
                             tol: float = 1e-9) -> ClosureReport:
    """Max, decreasing limits, uniform limits and upper envelopes of discrete psh functions."""
    S = stencil or build_stencil(G, lattice, radius)
    rng = np.random.default_rng(seed)
    q = np.sum(lattice.coords() ** 2, axis=1)
    psh = lambda w: is_discrete_psh(w, lattice, S, tol)
    counts = {k: [0, 0] for k in ("max", "decreasing_limit", "uniform_limit", "upper_envelope")}

    def tally(name, ok):
        counts[name][0] += bool(ok)
        counts[name][1] += 1

    for _ in range(pairs):
        u, v = random_psh(lattice, S, rng), random_psh(lattice, S, rng)
        tally("max", psh(np.maximum(u, v)))
        seq = [u + q / k for k in (1, 2, 4, 8, 16)]
        tally("decreasing_limit", all(psh(s) for s in seq) and psh(u))
        seq = [np.maximum(u, v - 1.0 / k) for k in (1, 2, 4, 8, 16)]
        tally("uniform_limit", all(psh(s) for s in seq) and psh(np.maximum(u, v)))
        fam = [u, v] + [random_psh(lattice, S, rng) for _ in range(2)]
        tally("upper_envelope", psh(np.max(fam, axis=0)))
    return ClosureReport({k: tuple(c) for k, c in counts.items()})


def half_line_counterexample(h: float = 1 / 16, a: float = 1.0, steps: int = 4) -> dict:
    """Monotone limits that leave the psh class when the fiber jumps to empty.

    On a 1-D lattice the line is allowed for x >= 0 and nothing is allowed
    for x < 0. u = 0 on x >= 0 and x(a - x) on x < 0 fails discrete
    convexity at 0. The shifts v_d(x) = u(x + d) + d (d >= h, on the grid)
    decrease to u and the truncations min(u, -e) increase to u; all of
    them pass while u fails.
    """
    lat = Lattice(((-1.0, 1.0),), h, layer=1)
    S = build_stencil(FiberField.builtin("ex6.6"), lat, radius=1)
    x = lat.axes()[0]
    base = lambda z: np.where(z >= 0, 0.0, z * (a - z))
    u = base(x)
    deltas = [h * k for k in range(steps, 0, -1)]
    shifted = [base(x + d) + d for d in deltas]
    eps = [h * (a + h) * k for k in range(steps, 0, -1)]
    trunc = [np.minimum(u, -e) for e in eps]
    defect, at = psh_defect(u, lat, S)
    return {
        "h": h, "a": a,
        "shifts_psh": [is_discrete_psh(s, lat, S) for s in shifted],
        "shifts_decreasing": bool(all(np.all(s1 >= s2 - 1e-15) for s1, s2 in zip(shifted, shifted[1:]))
                                  and np.all(shifted[-1] >= u)),
        "truncations_psh": [is_discrete_psh(s, lat, S) for s in trunc],
        "truncations_increasing": bool(all(np.all(s1 <= s2 + 1e-15) for s1, s2 in zip(trunc, trunc[1:]))),
        "limit_psh": is_discrete_psh(u, lat, S),
        "limit_defect": defect,
        "failure_point": float(lat.coords()[at][0]) if at is not None else None,
        "second_difference_at_0": float((u[lat.index_of([h])[0]] + u[lat.index_of([-h])[0]]
                                         - 2 * u[lat.index_of([0.0])[0]]) / h**2),
    }


# ---------------------------------------------------------------- distributional pairing

def _cone_coefficients(A: np.ndarray, P: np.ndarray, mask: np.ndarray, tol: float) -> np.ndarray:
    c = np.zeros(P.shape[0])
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        if np.linalg.norm(A) > tol:
            raise ConeViolation("no stencil frame is active at this point")
        return c
    B = np.array([svec(P[k]) for k in idx]).T
    coef, res = nnls(B, svec(A))
    if res > tol * max(1.0, np.linalg.norm(A)):
        raise ConeViolation(f"form is outside the positive hull of the stencil planes (residual {res:.3g})")
    c[idx] = coef
    return c


def a_laplacian_matrix(A_field: Callable, lattice: Lattice, S: StencilFamily, tol: float = 1e-9) -> sp.csr_matrix:
    """Frozen-coefficient A-Laplacian: rows on interior points, columns on all points."""
    t = _tables(lattice, S)
    X = lattice.coords()
    P = S.projections()
    h2 = lattice.h**2
    rows, cols, vals = [], [], []
    for m, x in enumerate(t.pts):
        c = _cone_coefficients(np.asarray(A_field(X[x]), dtype=float), P, t.active[m], tol)
        for f in np.flatnonzero(c > 0):
            for j, d in enumerate(S.frames[f]):
                w = c[f] / (float(d @ d) * h2)
                rows += [m, m, m]
                cols += [int(t.nbr[m, f, j, 0]), int(t.nbr[m, f, j, 1]), int(x)]
                vals += [w, w, -2 * w]
    return sp.csr_matrix((vals, (rows, cols)), shape=(t.pts.size, lattice.size))


def bump_matrix(lattice: Lattice, S: StencilFamily, radius: float) -> sp.csc_matrix:
    """Nonnegative bumps (1 - |x - c|^2 / r^2)^2 supported in the interior, one per centre."""
    t = _tables(lattice, S)
    X = lattice.coords()
    inner = np.zeros(lattice.size, dtype=bool)
    inner[t.pts] = True
    cols = []
    for c in t.pts:
        r2 = np.sum((X - X[c]) ** 2, axis=1) / radius**2
        phi = np.where(r2 < 1, (1 - r2) ** 2, 0.0)
        if np.any(phi[~inner] > 0):
            continue
        cols.append(sp.csc_matrix(phi[t.pts][:, None]))
    if not cols:
        raise DomainError("mollifier radius too large for the lattice interior")
    return sp.hstack(cols).tocsc()


def distributional_operator(A_field: Callable, lattice: Lattice, S: StencilFamily,
                            mollifier_radius: float, tol: float = 1e-9) -> np.ndarray:
    """Columns L_A^* phi * h^n for every interior bump phi, on all lattice points.

    Pairings of several grid functions against the same A-field are then a
    single matrix product.
    """
    L = a_laplacian_matrix(A_field, lattice, S, tol)
    Phi = bump_matrix(lattice, S, mollifier_radius)
    return (L.T @ Phi).toarray() * lattice.h ** lattice.dim


def distributional_pairings(u, A_field: Callable, lattice: Lattice, S: StencilFamily,
                            mollifier_radius: float, tol: float = 1e-9) -> np.ndarray:
    """sum_x u(x) (L_A^* phi)(x) h^n for every bump phi."""
    v = np.asarray(getattr(u, "values", u), dtype=float).ravel()
    return v @ distributional_operator(A_field, lattice, S, mollifier_radius, tol)


def distributional_check(u, A_field: Callable, lattice: Lattice, S: StencilFamily,
                         mollifier_radius: float, tol: float = 1e-9) -> float:
    """Smallest pairing of u against L_A^* phi over interior bumps phi >= 0."""
    return float(np.min(distributional_pairings(u, A_field, lattice, S, mollifier_radius, tol)))


# ---------------------------------------------------------------- boundary data

def _saddle(X):
    return X[:, 0] ** 2 - X[:, 1] ** 2


def _xsq(X):
    return X[:, 0] ** 2


def _abs(X):
    return np.linalg.norm(X, axis=1)


BOUNDARY_DATA = {"saddle": _saddle, "xsq": _xsq, "abs": _abs}


def read_grid_csv(path, lattice: Lattice) -> tuple[np.ndarray, np.ndarray]:
    """Values and coverage mask from rows ``x[, y[, z]], value``."""
    vals = np.zeros(lattice.shape)
    seen = np.zeros(lattice.shape, dtype=bool)
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                nums = [float(c) for c in row]
            except ValueError:
                continue  # header
            if len(nums) != lattice.dim + 1:
                raise DimError(f"expected {lattice.dim + 1} columns, got {len(nums)}")
            idx = lattice.index_of(nums[:-1])
            if any(not 0 <= i < m for i, m in zip(idx, lattice.shape)):
                raise DomainError(f"point {nums[:-1]} is off the lattice")
            vals[idx] = nums[-1]
            seen[idx] = True
    return vals, seen


def boundary_data(name: str, lattice: Lattice, path=None) -> np.ndarray:
    """Builtin boundary data on the whole lattice (interior values are the initial guess)."""
    if name == "custom-csv":
        if path is None:
            raise DomainError("custom-csv boundary data needs a file")
        vals, seen = read_grid_csv(path, lattice)
        if not np.all(seen[lattice.boundary()]):
            raise DomainError("boundary file does not cover the boundary layer")
        g = vals
    else:
        if name not in BOUNDARY_DATA:
            raise DomainError(f"unknown boundary data {name!r}; known: {sorted(BOUNDARY_DATA)} or custom-csv")
        X = lattice.coords()
        if name == "saddle" and lattice.dim < 2:
            raise DimError("saddle data needs two axes")
        g = BOUNDARY_DATA[name](X).reshape(lattice.shape)
    out = np.array(g, dtype=float)
    b = lattice.boundary()
    out[lattice.interior()] = float(np.mean(out[b]))
    return out
