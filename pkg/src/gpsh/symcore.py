"""Symmetric forms, planes, trace pairings and finite-difference derivatives.

Symmetric forms are plain ``numpy`` arrays that have passed through
:func:`symform`; planes carry an orthonormal frame and the orthogonal
projection onto their span.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DimError, FieldEvalError, GpshError, RankError

SYM_TOL = 1e-12
PLANE_TOL = 1e-10
PLANE_EQ_TOL = 1e-8


def symform(entries) -> np.ndarray:
    """Return a symmetric float matrix built from ``entries``.

    Raises DimError for non-square input. Asymmetry larger than ``1e-8``
    relative to the entries is treated as a caller error; smaller asymmetry
    is removed by averaging with the transpose.
    """
    A = np.array(entries, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimError(f"symmetric form must be square, got shape {A.shape}")
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    if np.max(np.abs(A - A.T), initial=0.0) > 1e-8 * scale:
        raise DimError("matrix is not symmetric")
    return 0.5 * (A + A.T)


def eigenvalues(A: np.ndarray) -> np.ndarray:
    """Eigenvalues of a symmetric form in nondecreasing order."""
    return np.linalg.eigvalsh(A)


def form_to_json(A: np.ndarray) -> dict:
    return {"dim": int(A.shape[0]), "entries": [[float(v) for v in row] for row in A]}


def form_from_json(obj: dict) -> np.ndarray:
    A = symform(obj["entries"])
    if A.shape[0] != int(obj["dim"]):
        raise DimError("dim does not match entries")
    return A


@dataclass(frozen=True, eq=False)
class Plane:
    """A p-plane in R^n, stored by orthonormal frame and projection."""

    frame: np.ndarray
    projection: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.frame.shape[0]

    @property
    def p(self) -> int:
        return self.frame.shape[1]

    def same_as(self, other: "Plane", tol: float = PLANE_EQ_TOL) -> bool:
        if self.projection.shape != other.projection.shape:
            return False
        return bool(np.linalg.norm(self.projection - other.projection) <= tol)

    def complement(self) -> np.ndarray:
        """Projection onto the orthogonal complement."""
        return np.eye(self.n) - self.projection

    def to_json(self) -> dict:
        return {"n": self.n, "p": self.p, "frame": [[float(v) for v in row] for row in self.frame]}


def projection_from_frame(frame) -> Plane:
    """Orthonormalize the columns of ``frame`` and build the plane they span."""
    F = np.array(frame, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    if F.ndim != 2 or F.shape[1] == 0 or F.shape[1] > F.shape[0]:
        raise RankError(f"frame of shape {F.shape} cannot span a plane")
    s = np.linalg.svd(F, compute_uv=False)
    if s[-1] <= 1e-10 * max(s[0], 1e-300):
        raise RankError("frame columns are linearly dependent")
    Q, R = np.linalg.qr(F)
    # fix signs so the frame is a continuous function of the input
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    Q = Q * signs
    P = Q @ Q.T
    return Plane(Q, 0.5 * (P + P.T))


def plane_from_json(obj: dict) -> Plane:
    W = projection_from_frame(obj["frame"])
    if W.n != int(obj["n"]) or W.p != int(obj["p"]):
        raise DimError("plane n/p do not match frame")
    return W


def trace_pairing(A: np.ndarray, W: Plane) -> float:
    """tr_W A = <A, P_W>."""
    if A.shape != (W.n, W.n):
        raise DimError(f"form of shape {A.shape} paired with plane in R^{W.n}")
    return float(np.einsum("ij,ij->", A, W.projection))


def eigen_partial_sums(A: np.ndarray, p: int) -> tuple[float, float]:
    """Sums of the ``p`` smallest and the ``p`` largest eigenvalues."""
    n = A.shape[0]
    if not 1 <= p <= n:
        raise DimError(f"need 1 <= p <= {n}, got p={p}")
    lam = eigenvalues(A)
    return float(np.sum(lam[:p])), float(np.sum(lam[n - p:]))


def random_frames(n: int, p: int, count: int, seed) -> np.ndarray:
    """Haar-random orthonormal frames as a ``(count, n, p)`` array."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    G = rng.standard_normal((count, n, p))
    Q, R = np.linalg.qr(G)
    d = np.sign(np.diagonal(R, axis1=1, axis2=2))
    d[d == 0] = 1.0
    return Q * d[:, None, :]


def sample_frames(n: int, p: int, count: int, seed) -> list[Plane]:
    if not 1 <= p <= n or count < 1:
        raise DimError(f"invalid sampling request n={n}, p={p}, count={count}")
    out = []
    for Q in random_frames(n, p, count, seed):
        P = Q @ Q.T
        out.append(Plane(Q, 0.5 * (P + P.T)))
    return out


def batch_traces(A: np.ndarray, frames: np.ndarray) -> np.ndarray:
    """tr(F^T A F) for every frame F in a ``(count, n, p)`` stack."""
    return np.einsum("kip,ij,kjp->k", frames, A, frames)


@dataclass(frozen=True)
class ScalarField:
    """A real function on R^n with optional analytic derivatives."""

    dim: int
    eval: Callable[[np.ndarray], float]
    grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    hess: Optional[Callable[[np.ndarray], np.ndarray]] = None
    fd_step: float = 1e-4

    def __call__(self, x) -> float:
        return _safe_eval(self, np.asarray(x, dtype=float))

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.grad is not None:
            return np.asarray(self.grad(x), dtype=float)
        return fd_gradient(self, x)

    def hessian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.hess is not None:
            return symform(self.hess(x))
        return fd_hessian(self, x)


def _safe_eval(f: ScalarField, x: np.ndarray) -> float:
    try:
        v = float(f.eval(x))
    except GpshError:
        raise
    except Exception as exc:  # noqa: BLE001 - any evaluation failure is reported uniformly
        raise FieldEvalError(f"field evaluation failed at {x.tolist()}: {exc}") from exc
    if not np.isfinite(v):
        raise FieldEvalError(f"field is not finite at {x.tolist()}")
    return v


def fd_gradient(f: ScalarField, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    h = f.fd_step
    g = np.empty(x.size)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = h
        g[i] = (_safe_eval(f, x + e) - _safe_eval(f, x - e)) / (2 * h)
    return g


def _second_differences(f: ScalarField, x: np.ndarray, h: float) -> np.ndarray:
    n = x.size
    f0 = _safe_eval(f, x)
    H = np.empty((n, n))
    E = np.eye(n) * h
    for i in range(n):
        H[i, i] = (_safe_eval(f, x + E[i]) - 2 * f0 + _safe_eval(f, x - E[i])) / h**2
        for j in range(i):
            v = (_safe_eval(f, x + E[i] + E[j]) - _safe_eval(f, x + E[i] - E[j])
                 - _safe_eval(f, x - E[i] + E[j]) + _safe_eval(f, x - E[i] - E[j])) / (4 * h**2)
            H[i, j] = H[j, i] = v
    return H


def fd_hessian(f: ScalarField, x, richardson: bool = False) -> np.ndarray:
    """Centered second differences; exact up to roundoff on quadratics.

    Parameters
    ----------
    f : ScalarField
        Field to differentiate; ``f.fd_step`` is the difference step.
    x : array_like
        Evaluation point.
    richardson : bool
        If true, combine steps ``s`` and ``2s`` with ``s = 100 * fd_step``
        so the truncation error is fourth order. The larger step keeps
        roundoff near ``1e-12 * |f|``, which plain steps of ``1e-4`` cannot.
    """
    x = np.asarray(x, dtype=float)
    if not richardson:
        return _second_differences(f, x, f.fd_step)
    s = 100 * f.fd_step
    return (4 * _second_differences(f, x, s) - _second_differences(f, x, 2 * s)) / 3


def quadratic_field(A) -> ScalarField:
    """x -> ½ xᵀAx with exact derivatives."""
    A = symform(A)
    return ScalarField(A.shape[0], lambda x: 0.5 * x @ A @ x, lambda x: A @ x, lambda x: A)
