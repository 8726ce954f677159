"""Dense matrix primitives and the Lyapunov-type solvers behind every certificate.

Matrices are plain float64 NumPy arrays: a general matrix is any finite 2-d
array, a symmetric one is validated (and re-symmetrized after floating-point
solves) by the helpers here.  Everything is a pure function of its inputs and
safe to call concurrently.  Systems are small (n up to a few tens), so all
solvers are dense; the continuous and discrete Lyapunov equations are solved
by vectorizing to an n^2 x n^2 linear system via the Kronecker identity
vec(A X B) = (A kron B^T) vec(X) for row-major vec.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import NotPositiveDefinite, SingularOperator

#: Default relative residual tolerance for the equation solvers.
DEFAULT_RTOL = 1e-9

#: Scale factor for the default positive-definiteness tolerance.
DEFAULT_PD_SCALE = 1e-10


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-d float array."""
    m = np.asarray(a, dtype=float)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-d, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def as_square(a, name: str = "matrix") -> np.ndarray:
    m = as_matrix(a, name)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    return m


def as_symmetric(a, name: str = "matrix", rtol: float = 1e-8) -> np.ndarray:
    """Validate symmetry up to roundoff and return the symmetrized matrix."""
    m = as_square(a, name)
    scale = 1.0 + np.abs(m).max(initial=0.0)
    if np.abs(m - m.T).max(initial=0.0) > rtol * scale:
        raise ValueError(f"{name} is not symmetric")
    return symmetrize(m)


def symmetrize(a: np.ndarray) -> np.ndarray:
    """(A + A^T) / 2; exact symmetry since IEEE addition commutes."""
    return (a + a.T) / 2.0


def kron(a, b) -> np.ndarray:
    """Kronecker product of two finite matrices.

    Result has shape (a.rows * b.rows, a.cols * b.cols).
    """
    return np.kron(as_matrix(a, "a"), as_matrix(b, "b"))


@dataclass(frozen=True)
class PdReport:
    """Outcome of a positive-definiteness gate with its eigenvalue evidence."""

    is_pd: bool
    lambda_min: float
    tol: float

    def __bool__(self) -> bool:
        return self.is_pd


def is_positive_definite(p, tol: float | None = None) -> PdReport:
    """Gate P > 0 by the smallest eigenvalue.

    True iff lambda_min(P) > tol.  The default tolerance scales with the
    matrix, DEFAULT_PD_SCALE * (1 + ||P||), leaving double-precision headroom
    for the dimensions this toolkit targets.
    """
    p = as_symmetric(p, "p")
    eigs = np.linalg.eigvalsh(p)
    lam_min = float(eigs[0])
    if tol is None:
        tol = DEFAULT_PD_SCALE * (1.0 + float(np.abs(eigs).max(initial=0.0)))
    return PdReport(lam_min > tol, lam_min, float(tol))


def pencil_top(m, p) -> float:
    """Largest eigenvalue of the P-weighted pencil of M.

    Equals lambda_max(L^-1 M L^-T) with L L^T = P, i.e. the smallest c with
    M <= c P.  Raises NotPositiveDefinite when P fails the gate.
    """
    m = as_symmetric(m, "m")
    p = as_symmetric(p, "p")
    report = is_positive_definite(p)
    if not report:
        raise NotPositiveDefinite(
            f"pencil weight is not positive definite (lambda_min={report.lambda_min:.6g})"
        )
    eigs = scipy.linalg.eigh(m, p, eigvals_only=True)
    return float(eigs[-1])


def decay_rate(m, p) -> float:
    """Largest alpha with M <= -alpha P; positive iff M < 0 relative to P."""
    return -pencil_top(m, p)


def _solve_vectorized(op: np.ndarray, q: np.ndarray, rtol: float) -> np.ndarray:
    n = q.shape[0]
    try:
        vec = np.linalg.solve(op, -q.reshape(-1))
    except np.linalg.LinAlgError as exc:
        raise SingularOperator(f"vectorized Lyapunov operator is singular: {exc}") from exc
    p = symmetrize(vec.reshape(n, n))
    return p


def _residual_gate(residual: np.ndarray, q: np.ndarray, rtol: float) -> None:
    res = float(np.linalg.norm(residual))
    ref = max(float(np.linalg.norm(q)), np.finfo(float).tiny)
    if res > rtol * ref:
        raise SingularOperator(
            f"residual {res:.3e} exceeds {rtol:.1e} * ||Q||; "
            "operator is singular beyond tolerance (stability boundary)"
        )


def solve_ct_lyapunov(f, gs: Sequence, dt_bar: float, q, rtol: float = DEFAULT_RTOL) -> np.ndarray:
    """Solve F^T P + P F + sum_j Gj^T P Gj + dt_bar F^T P F = -Q for symmetric P.

    With dt_bar = 0 this is the classical continuous-time equation; dt_bar > 0
    adds the quadratic drift term certifying the discretization as well.
    Raises SingularOperator when the vectorized system is singular or the
    defining-equation residual exceeds rtol * ||Q||.
    """
    f = as_square(f, "f")
    q = as_symmetric(q, "q")
    n = f.shape[0]
    if q.shape[0] != n:
        raise ValueError("f and q dimensions differ")
    if dt_bar < 0:
        raise ValueError("dt_bar must be nonnegative")
    gs = [as_square(g, "g") for g in gs]
    for g in gs:
        if g.shape[0] != n:
            raise ValueError("diffusion matrix dimension differs from f")

    eye = np.eye(n)
    ft = f.T
    op = kron(ft, eye) + kron(eye, ft) + dt_bar * kron(ft, ft)
    for g in gs:
        op += kron(g.T, g.T)
    p = _solve_vectorized(op, q, rtol)

    # independent of the kron path: plain matrix products
    lhs = ft @ p + p @ f + dt_bar * (ft @ p @ f)
    for g in gs:
        lhs += g.T @ p @ g
    _residual_gate(lhs + q, q, rtol)
    return p


def solve_dt_lyapunov(f, gs: Sequence, dt: float, q, rtol: float = DEFAULT_RTOL) -> np.ndarray:
    """Solve (I + dt F)^T P (I + dt F) + dt sum_j Gj^T P Gj - P = -Q for symmetric P.

    The one-step mean-square equation of the explicit scheme at stepsize dt.
    Raises SingularOperator at the stability boundary.
    """
    f = as_square(f, "f")
    q = as_symmetric(q, "q")
    n = f.shape[0]
    if q.shape[0] != n:
        raise ValueError("f and q dimensions differ")
    if dt <= 0:
        raise ValueError("dt must be positive")
    gs = [as_square(g, "g") for g in gs]

    a = np.eye(n) + dt * f
    op = kron(a.T, a.T) - np.eye(n * n)
    for g in gs:
        op += dt * kron(g.T, g.T)
    p = _solve_vectorized(op, q, rtol)

    lhs = a.T @ p @ a - p
    for g in gs:
        lhs += dt * (g.T @ p @ g)
    _residual_gate(lhs + q, q, rtol)
    return p
