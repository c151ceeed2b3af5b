"""Families of p-planes and the cone questions they answer.

A family ``G`` of p-planes in R^n defines the closed convex cone of forms
whose trace over every plane of ``G`` is nonnegative. This module computes
extreme traces over ``G``, classifies forms against that cone and its dual,
and analyses the linear span and the free subspaces of ``G``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import BudgetExceeded, DimError, NoWitness, ProbeInvalid
from .symcore import (Plane, batch_traces, eigen_partial_sums, plane_from_json,
                      projection_from_frame, random_frames, symform)

CLOSED_FORM_TOL = 1e-9
SAMPLED_TOL = 1e-3


def complex_structure(n: int) -> np.ndarray:
    """Standard J on R^n = C^(n/2): J e_k = e_{m+k}, J e_{m+k} = -e_k."""
    if n % 2:
        raise DimError(f"complex structure needs even dimension, got {n}")
    m = n // 2
    J = np.zeros((n, n))
    J[m:, :m] = np.eye(m)
    J[:m, m:] = -np.eye(m)
    return J


@dataclass(frozen=True)
class Extremum:
    min_trace: float
    max_trace: float
    witness_min: Optional[Plane]
    witness_max: Optional[Plane]


EMPTY = Extremum(math.inf, -math.inf, None, None)


class GrassmannSet:
    """Common interface of the plane families."""

    n: int
    p: int
    variant: str = ""
    tol: float = CLOSED_FORM_TOL

    def fiber(self, x=None) -> Optional["GrassmannSet"]:
        return self

    def extremize(self, A: np.ndarray) -> Extremum:
        raise NotImplementedError

    def sample(self, count: int, seed) -> np.ndarray:
        """Planes of the family as a ``(count, n, p)`` frame stack."""
        raise NotImplementedError

    def containment_defect(self, P_V: np.ndarray) -> float:
        """p minus the largest trace of P_V over the family.

        Zero exactly when the subspace with projection ``P_V`` contains a
        plane of the family.
        """
        return self.p - self.extremize(P_V).max_trace

    def tangential_min_trace(self, A: np.ndarray, normal: np.ndarray) -> Optional[float]:
        """Least trace of A over family planes orthogonal to ``normal``.

        Returns None when no plane of the family is orthogonal to ``normal``.
        """
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class FullGrassmannian(GrassmannSet):
    """All p-planes in R^n, written Full(p, n)."""

    p: int
    n: int
    variant: str = field(default="full", init=False)

    def __post_init__(self):
        if not 1 <= self.p <= self.n:
            raise DimError(f"need 1 <= p <= n, got p={self.p}, n={self.n}")

    def extremize(self, A):
        _check_form(A, self.n)
        lam, vec = np.linalg.eigh(A)
        lo, hi = eigen_partial_sums(A, self.p)
        return Extremum(lo, hi, projection_from_frame(vec[:, :self.p]),
                        projection_from_frame(vec[:, self.n - self.p:]))

    def sample(self, count, seed):
        return random_frames(self.n, self.p, count, seed)

    def tangential_min_trace(self, A, normal):
        if self.p >= self.n:
            return None
        T = _orthonormal_complement(normal)
        lam = np.linalg.eigvalsh(T.T @ A @ T)
        return float(np.sum(lam[:self.p]))

    def to_json(self):
        return {"variant": "full", "n": self.n, "p": self.p}


@dataclass(frozen=True, eq=False)
class FinitePlanes(GrassmannSet):
    planes: tuple
    variant: str = field(default="finite", init=False)

    def __post_init__(self):
        planes = tuple(self.planes)
        if planes:
            n, p = planes[0].n, planes[0].p
            for W in planes:
                if (W.n, W.p) != (n, p):
                    raise DimError("all planes must share n and p")
            for i, W in enumerate(planes):
                for V in planes[:i]:
                    if W.same_as(V):
                        raise DimError("planes must be pairwise distinct")
        object.__setattr__(self, "planes", planes)

    @classmethod
    def from_frames(cls, frames: Sequence) -> "FinitePlanes":
        return cls(tuple(projection_from_frame(F) for F in frames))

    @property
    def n(self):
        return self.planes[0].n if self.planes else 0

    @property
    def p(self):
        return self.planes[0].p if self.planes else 0

    def _stack(self):
        return np.stack([W.frame for W in self.planes])

    def extremize(self, A):
        if not self.planes:
            return EMPTY
        _check_form(A, self.n)
        t = batch_traces(A, self._stack())
        i, j = int(np.argmin(t)), int(np.argmax(t))
        return Extremum(float(t[i]), float(t[j]), self.planes[i], self.planes[j])

    def sample(self, count, seed):
        rng = np.random.default_rng(seed)
        return self._stack()[rng.integers(0, len(self.planes), count)]

    def tangential_min_trace(self, A, normal):
        tang = [W for W in self.planes if np.linalg.norm(W.frame.T @ normal) <= 1e-6]
        if not tang:
            return None
        return float(min(np.einsum("ip,ij,jp->", W.frame, A, W.frame) for W in tang))

    def to_json(self):
        return {"variant": "finite", "n": self.n, "p": self.p,
                "planes": [[[float(v) for v in row] for row in W.frame] for W in self.planes]}


@dataclass(frozen=True)
class ComplexLines(GrassmannSet):
    """All real 2-planes span{v, Jv} in R^n, n even."""

    n: int
    variant: str = field(default="complex_lines", init=False)

    def __post_init__(self):
        complex_structure(self.n)

    @property
    def p(self):
        return 2

    @property
    def J(self):
        return complex_structure(self.n)

    def hermitian_part(self, A):
        J = self.J
        return 0.5 * (A - J @ A @ J)

    def _line(self, v):
        return projection_from_frame(np.column_stack([v, self.J @ v]))

    def extremize(self, A):
        _check_form(A, self.n)
        lam, vec = np.linalg.eigh(self.hermitian_part(A))
        return Extremum(2 * float(lam[0]), 2 * float(lam[-1]),
                        self._line(vec[:, 0]), self._line(vec[:, -1]))

    def sample(self, count, seed):
        rng = np.random.default_rng(seed)
        v = rng.standard_normal((count, self.n))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return np.stack([v, v @ self.J.T], axis=2)

    def tangential_min_trace(self, A, normal):
        # complex lines inside the tangent space lie in the maximal complex
        # subspace T ∩ JT, the orthogonal complement of {ν, Jν}
        if self.n < 4:
            return None
        nu = normal / np.linalg.norm(normal)
        H = _orthonormal_complement(np.column_stack([nu, self.J @ nu]))
        B = H.T @ A @ H
        JH = H.T @ self.J @ H
        lam = np.linalg.eigvalsh(0.5 * (B - JH @ B @ JH))
        return 2 * float(lam[0])

    def to_json(self):
        return {"variant": "complex_lines", "n": self.n, "p": 2}


FiberRule = Callable[[np.ndarray, dict], Optional[GrassmannSet]]
FIBER_RULES: dict[str, FiberRule] = {}


def register_fiber_rule(name: str):
    def deco(fn: FiberRule) -> FiberRule:
        FIBER_RULES[name] = fn
        return fn
    return deco


@register_fiber_rule("ex2.3")
def _right_half_line(x, params):
    # all lines of R over x >= 0, nothing over x < 0
    return FullGrassmannian(1, 1) if x[0] >= 0 else None


@register_fiber_rule("ex6.6")
def _tangent_line_right(x, params):
    return FullGrassmannian(1, 1) if x[0] >= 0 else None


@register_fiber_rule("halfspace_full")
def _halfspace_full(x, params):
    n, p = int(params["n"]), int(params["p"])
    return FullGrassmannian(p, n) if x[0] >= 0 else None


@register_fiber_rule("constant")
def _constant(x, params):
    return grassmann_from_json(params["fiber"])


@register_fiber_rule("split")
def _split(x, params):
    # one fiber for x_1 < 0, another for x_1 >= 0; a null fiber json means empty
    side = params.get("right") if x[0] >= 0 else params.get("left")
    return None if side is None else grassmann_from_json(side)


@register_fiber_rule("sphere_horizontal")
def _sphere_horizontal(x, params):
    # horizontal tangent line of the unit sphere at x/|x| (last coordinate vertical)
    z = np.asarray(x, dtype=float)
    z = z / np.linalg.norm(z)
    up = np.zeros(z.size)
    up[-1] = 1.0
    d = np.cross(up, z) if z.size == 3 else None
    if d is None or np.linalg.norm(d) < 1e-12:
        return None
    return FinitePlanes((projection_from_frame(d / np.linalg.norm(d)),))


_RULE_SHAPES = {"ex2.3": (1, 1, 1), "ex6.6": (1, 1, 1), "sphere_horizontal": (3, 3, 1)}


@dataclass(frozen=True, eq=False)
class FiberField(GrassmannSet):
    """A family varying with a base point, given by a named rule."""

    rule: str
    base_dim: int = 1
    n: int = 1
    p: int = 1
    params: dict = field(default_factory=dict)
    variant: str = field(default="fiber_field", init=False)

    def __post_init__(self):
        if self.rule not in FIBER_RULES:
            raise KeyError(f"unknown fiber rule {self.rule!r}; known: {sorted(FIBER_RULES)}")

    @classmethod
    def builtin(cls, rule: str, **params) -> "FiberField":
        if rule in _RULE_SHAPES:
            m, n, p = _RULE_SHAPES[rule]
        elif rule == "halfspace_full":
            m, n, p = int(params.get("base_dim", params["n"])), int(params["n"]), int(params["p"])
        elif rule == "constant":
            fib = grassmann_from_json(params["fiber"])
            m, n, p = int(params.get("base_dim", fib.n)), fib.n, fib.p
        elif rule == "split":
            side = params.get("right") or params.get("left")
            fib = grassmann_from_json(side)
            m, n, p = int(params.get("base_dim", fib.n)), fib.n, fib.p
        else:
            m, n, p = int(params["base_dim"]), int(params["n"]), int(params["p"])
        return cls(rule, m, n, p, dict(params))

    def fiber(self, x=None):
        if x is None:
            raise DimError("a base point is required for a fiber field")
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.size != self.base_dim:
            raise DimError(f"base point has dimension {x.size}, expected {self.base_dim}")
        return FIBER_RULES[self.rule](x, self.params)

    def to_json(self):
        return {"variant": "fiber_field", "n": self.n, "p": self.p,
                "base_dim": self.base_dim, "fiber_rule": self.rule, "params": self.params}


def grassmann_from_json(obj: dict) -> GrassmannSet:
    v = obj["variant"]
    if v == "full":
        return FullGrassmannian(int(obj["p"]), int(obj["n"]))
    if v == "finite":
        G = FinitePlanes(tuple(plane_from_json({"n": obj["n"], "p": obj["p"], "frame": F})
                               for F in obj["planes"]))
        return G
    if v == "complex_lines":
        return ComplexLines(int(obj["n"]))
    if v == "fiber_field":
        params = dict(obj.get("params", {}))
        return FiberField(obj["fiber_rule"], int(obj.get("base_dim", 1)), int(obj["n"]),
                          int(obj["p"]), params)
    raise ValueError(f"unknown variant {v!r}")


def _check_form(A, n):
    if A.shape != (n, n):
        raise DimError(f"form of shape {A.shape} used with planes in R^{n}")


def _orthonormal_complement(vectors: np.ndarray) -> np.ndarray:
    V = np.atleast_2d(np.asarray(vectors, dtype=float))
    if V.shape[0] == 1 and V.ndim == 2 and V.shape[1] > 1:
        V = V.T
    n, k = V.shape
    U, s, _ = np.linalg.svd(V, full_matrices=True)
    return U[:, k:]


def _resolve(G: GrassmannSet, x) -> Optional[GrassmannSet]:
    return G.fiber(x) if isinstance(G, FiberField) else G


# ---------------------------------------------------------------- cone queries

def min_max_trace(G: GrassmannSet, A, x=None) -> tuple[float, float, Optional[Plane], Optional[Plane]]:
    """Infimum and supremum of tr_W A over the (fiber of the) family."""
    A = symform(A)
    F = _resolve(G, x)
    e = EMPTY if F is None else F.extremize(A)
    return e.min_trace, e.max_trace, e.witness_min, e.witness_max


@dataclass(frozen=True)
class ConeVerdict:
    in_P: bool
    in_IntP: bool
    in_dual: bool
    on_boundary: bool
    min_trace: float
    max_trace: float
    witness_min: Optional[Plane]
    witness_max: Optional[Plane]
    tol: float = CLOSED_FORM_TOL
    empty_fiber: bool = False

    def to_json(self) -> dict:
        def num(v):
            return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")
        return {"in_P": self.in_P, "in_IntP": self.in_IntP, "in_dual": self.in_dual,
                "on_boundary": self.on_boundary, "min_trace": num(self.min_trace),
                "max_trace": num(self.max_trace), "tol": self.tol, "empty_fiber": self.empty_fiber,
                "witness_min": self.witness_min.to_json() if self.witness_min else None,
                "witness_max": self.witness_max.to_json() if self.witness_max else None}


def classify(G: GrassmannSet, A, x=None) -> ConeVerdict:
    lo, hi, wlo, whi = min_max_trace(G, A, x)
    F = _resolve(G, x)
    tol = F.tol if F is not None else CLOSED_FORM_TOL
    in_P = lo >= -tol
    in_int = lo > tol
    return ConeVerdict(in_P, in_int, hi >= -tol, in_P and not in_int, lo, hi, wlo, whi,
                       tol, F is None)


def strict_margin(G: GrassmannSet, A, x=None) -> float:
    """inf over W of (1/p) tr_W A; +inf over an empty fiber."""
    lo, _, _, _ = min_max_trace(G, A, x)
    return lo / G.p if math.isfinite(lo) else math.inf


def c_strict_member(G: GrassmannSet, A, c: float, x=None) -> bool:
    """Whether tr_W A >= c for every W, with the cone tolerance."""
    if c < 0:
        raise ValueError("c must be nonnegative")
    F = _resolve(G, x)
    tol = F.tol if F is not None else CLOSED_FORM_TOL
    return strict_margin(G, A, x) >= (c - tol) / G.p


def separating_witness(G: GrassmannSet, A, x=None) -> Plane:
    v = classify(G, A, x)
    if v.in_P:
        raise NoWitness("form lies in the cone; no plane has negative trace")
    return v.witness_min


# ---------------------------------------------------------------- span analysis

def svec(A: np.ndarray) -> np.ndarray:
    """Isometric coordinates of Sym^2(R^n) with the trace inner product."""
    n = A.shape[0]
    iu = np.triu_indices(n, 1)
    return np.concatenate([np.diag(A), math.sqrt(2) * A[iu]])


def smat(v: np.ndarray, n: int) -> np.ndarray:
    A = np.diag(v[:n]).astype(float)
    iu = np.triu_indices(n, 1)
    A[iu] = v[n:] / math.sqrt(2)
    A[(iu[1], iu[0])] = v[n:] / math.sqrt(2)
    return A


def _span_basis(projections: np.ndarray, n: int) -> list[np.ndarray]:
    M = np.stack([svec(P) for P in projections])
    _, s, Vt = np.linalg.svd(M, full_matrices=False)
    r = int(np.sum(s > 1e-10 * max(s[0], 1.0)))
    return [smat(Vt[i], n) for i in range(r)]


def _project_simplex(t: np.ndarray) -> np.ndarray:
    u = np.sort(t)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, t.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    return np.maximum(t - css[rho] / (rho + 1), 0.0)


@dataclass
class SpanReport:
    span_basis: list
    involves_all: bool
    positive_witness: Optional[np.ndarray]
    no_orthogonal_direction: bool
    positive_combination_found: bool
    orthogonal_direction: Optional[np.ndarray]
    witness_margin: float
    paths_agree: bool

    def to_json(self) -> dict:
        return {"dim_span": len(self.span_basis), "involves_all": self.involves_all,
                "paths_agree": self.paths_agree, "witness_margin": self.witness_margin,
                "positive_witness": None if self.positive_witness is None
                else self.positive_witness.tolist(),
                "orthogonal_direction": None if self.orthogonal_direction is None
                else self.orthogonal_direction.tolist()}


def orthogonal_directions(basis: list, n: int) -> Optional[np.ndarray]:
    """A unit vector e with P_e orthogonal to the span, if one exists.

    The common kernel of the basis is the null space of sum B_k^2; each
    candidate is confirmed by the least-squares projection of P_e onto the span.
    """
    if not basis:
        return np.eye(n)[0]
    M = sum(B @ B for B in basis)
    lam, vec = np.linalg.eigh(M)
    scale = max(float(np.trace(M)), 1.0)
    for k in range(n):
        if lam[k] > 1e-10 * scale:
            break
        e = vec[:, k]
        Pe = np.outer(e, e)
        coeff = np.array([np.sum(Pe * B) for B in basis])
        if np.linalg.norm(coeff) <= 1e-8:
            return e
    return None


def positive_combination(projections: np.ndarray, iterations: int = 100) -> tuple[np.ndarray, float]:
    """Maximize the least eigenvalue of sum t_k P_k over the simplex.

    Projected supergradient ascent from uniform weights; returns the best
    weights seen and their least eigenvalue.
    """
    K = len(projections)
    t = np.full(K, 1.0 / K)
    best_t, best = t.copy(), -math.inf
    for it in range(iterations):
        S = np.einsum("k,kij->ij", t, projections)
        lam, vec = np.linalg.eigh(S)
        if lam[0] > best:
            best, best_t = float(lam[0]), t.copy()
        v = vec[:, 0]
        g = np.einsum("i,kij,j->k", v, projections, v)
        t = _project_simplex(t + (0.5 / math.sqrt(it + 1)) * (g - g.mean()))
    return best_t, best


def span_analysis(G: GrassmannSet, x=None, seed: int = 0) -> SpanReport:
    F = _resolve(G, x)
    if F is None:
        n = G.n
        return SpanReport([], False, None, False, False, np.eye(n)[0], -math.inf, True)
    n = F.n
    if isinstance(F, FullGrassmannian):
        if F.p == n:
            projections = np.eye(n)[None]
        else:
            projections = np.stack([np.outer(a, a) for a in np.eye(n)]
                                   + [np.outer(a + b, a + b) / 2 for i, a in enumerate(np.eye(n))
                                      for b in np.eye(n)[i + 1:]])
    elif isinstance(F, FinitePlanes):
        projections = np.stack([W.projection for W in F.planes]) if F.planes else np.zeros((0, n, n))
    else:
        dim = n * (n + 1) // 2
        frames = F.sample(4 * dim, seed)
        projections = np.einsum("kip,kjp->kij", frames, frames)
    if len(projections) == 0:
        return SpanReport([], False, None, False, False, np.eye(n)[0], -math.inf, True)
    basis = _span_basis(projections, n)
    e = orthogonal_directions(basis, n)
    if isinstance(F, FullGrassmannian):
        # the average of all projections is (p/n) I
        weights, margin, witness = None, F.p / n, np.eye(n)
    else:
        weights, margin = positive_combination(projections)
        S = np.einsum("k,kij->ij", weights, projections)
        witness = S * (n / np.trace(S))
    found = margin > 1e-10
    no_orth = e is None
    involves = found or no_orth
    return SpanReport(basis, involves, witness if found else None, no_orth, found,
                      e, float(margin), found == no_orth)


# ---------------------------------------------------------------- free dimension

@dataclass
class FreeSubspace:
    dim: int
    frame: Optional[np.ndarray]
    defect: float
    certificate_min: float
    certificate_samples: int


def _anneal(G: GrassmannSet, k: int, rng, steps: int) -> tuple[np.ndarray, float]:
    n = G.n
    V = np.linalg.qr(rng.standard_normal((n, k)))[0]
    cur = G.containment_defect(V @ V.T)
    best_V, best = V, cur
    for s in range(steps):
        frac = s / max(steps - 1, 1)
        T = 0.1 * (1e-3) ** frac
        sigma = 0.3 * (0.03) ** frac
        W = np.linalg.qr(V + sigma * rng.standard_normal((n, k)))[0]
        val = G.containment_defect(W @ W.T)
        if val >= cur or rng.random() < math.exp((val - cur) / T):
            V, cur = W, val
            if cur > best:
                best_V, best = V, cur
    return best_V, best


def free_subspace(G: GrassmannSet, k: int, restarts: int = 50, steps: int = 200, seed: int = 0,
                  certificate_samples: int = 100_000, threshold: float = 1e-3) -> FreeSubspace:
    """Search for a k-dimensional subspace containing no plane of G."""
    rng = np.random.default_rng(seed)
    best_V, best = None, -math.inf
    for _ in range(restarts):
        V, val = _anneal(G, k, rng, steps)
        if val > best:
            best_V, best = V, val
        if best > 0.25 * G.p:
            break
    if best <= threshold:
        return FreeSubspace(k, None, best, math.nan, 0)
    P = best_V @ best_V.T
    if isinstance(G, FinitePlanes):
        frames = np.stack([W.frame for W in G.planes])
    else:
        frames = G.sample(certificate_samples, rng)
    cert = float(np.min(G.p - batch_traces(P, frames)))
    if cert < best - 1e-9 or cert <= 0:
        return FreeSubspace(k, None, best, cert, len(frames))
    return FreeSubspace(k, best_V, best, cert, len(frames))


def free_dimension_report(G: GrassmannSet, restarts: int = 50, seed: int = 0,
                          certificate_samples: int = 100_000) -> FreeSubspace:
    if isinstance(G, FullGrassmannian):
        return FreeSubspace(G.p - 1, None, math.nan, math.nan, 0)
    if isinstance(G, FinitePlanes):
        if G.n > 6:
            raise BudgetExceeded("finite families are searched only for n <= 6")
        if not G.planes:
            raise BudgetExceeded("empty family has no ambient dimension")
    elif isinstance(G, ComplexLines):
        if G.n > 4:
            raise BudgetExceeded("complex lines are searched only for n <= 4")
    else:
        raise BudgetExceeded(f"free dimension search does not support {G.variant}")
    for k in range(G.n - 1, G.p - 1, -1):
        res = free_subspace(G, k, restarts, seed=seed + k, certificate_samples=certificate_samples)
        if res.frame is not None:
            return res
    return FreeSubspace(G.p - 1, None, math.nan, math.nan, 0)


def free_dimension(G: GrassmannSet, restarts: int = 50, seed: int = 0,
                   certificate_samples: int = 100_000) -> int:
    """Largest dimension of a subspace containing no plane of G."""
    return free_dimension_report(G, restarts, seed, certificate_samples).dim


# ---------------------------------------------------------------- non-closedness probe

def nonclosed_probe(G: FiberField, path: Sequence, limit, W: Plane, eps: float) -> np.ndarray:
    """Form that lies in the cone along ``path`` but not at ``limit``.

    Builds A = -P_W + (1/eps) P_{W^perp}. Requires W in the fiber at the
    limit and every fiber along the path to stay away from the eps
    neighbourhood of W, measured by <P_V, P_{W^perp}> >= eps p.
    """
    if not isinstance(G, FiberField):
        raise ProbeInvalid("the probe needs a fiber field")
    p = W.p
    Wperp = W.complement()
    A = -W.projection + Wperp / eps
    F0 = G.fiber(limit)
    if F0 is None or F0.extremize(W.projection).max_trace < p - 1e-9:
        raise ProbeInvalid("W does not belong to the fiber at the limit point")
    for xj in path:
        Fj = G.fiber(xj)
        if Fj is None:
            continue
        if Fj.extremize(Wperp).min_trace < eps * p:
            raise ProbeInvalid(f"fiber at {np.atleast_1d(xj).tolist()} meets the neighbourhood of W")
    if not all(classify(G, A, xj).in_P for xj in path):
        raise ProbeInvalid("probe form fails positivity along the path")
    if classify(G, A, limit).in_P:
        raise ProbeInvalid("probe form is positive at the limit point")
    return A
