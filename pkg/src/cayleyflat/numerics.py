"""Small dense kernels, seeded RNG, SVD/rank and finite-difference oracles.

Matrices are plain ``float64`` numpy arrays.  Random streams come from
numpy's PCG64 bit generator, which is specified bit-for-bit and therefore
reproducible across platforms for a given seed.
"""
from __future__ import annotations

from fractions import Fraction

import numpy as np

__all__ = [
    "ShapeError", "as_mat", "make_rng", "gemm", "frob2", "trace",
    "singular_values", "matrix_rank", "rank_exact",
    "fd_gradient", "fd_hessian_trace", "random_orthogonal",
]

FD_GRAD_STEP = 1e-4
FD_HESS_STEP = 1e-3


class ShapeError(ValueError):
    pass


def as_mat(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-d matrix, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("matrix has non-finite entries")
    return x


def make_rng(seed: int) -> np.random.Generator:
    """Independent generator for one task; never share between workers."""
    return np.random.Generator(np.random.PCG64(seed))


def gemm(x, y) -> np.ndarray:
    x, y = as_mat(x), as_mat(y)
    if x.shape[1] != y.shape[0]:
        raise ShapeError(f"cannot multiply {x.shape} by {y.shape}")
    return x @ y


def frob2(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.dot(x.ravel(), x.ravel()))


def trace(x) -> float:
    x = as_mat(x)
    if x.shape[0] != x.shape[1]:
        raise ShapeError(f"trace of non-square matrix {x.shape}")
    return float(np.trace(x))


def singular_values(x, tol: float = 1e-12, max_sweeps: int = 100) -> np.ndarray:
    """Singular values by one-sided (Hestenes) Jacobi rotations, descending.

    Columns are orthogonalised pairwise until every pair satisfies
    ``|<u_i, u_j>| <= tol * max|x| * ||u_i|| ||u_j||``; the singular values
    are then the column norms.
    """
    a = as_mat(x).copy()
    if a.shape[0] < a.shape[1]:
        a = a.T.copy()
    ncol = a.shape[1]
    scale = np.abs(a).max() if a.size else 0.0
    if scale == 0.0:
        return np.zeros(ncol)
    a /= scale
    for _ in range(max_sweeps):
        rotated = False
        for i in range(ncol - 1):
            for j in range(i + 1, ncol):
                ai, aj = a[:, i], a[:, j]
                alpha = ai @ ai
                beta = aj @ aj
                gamma = ai @ aj
                if abs(gamma) <= tol * np.sqrt(alpha * beta) or gamma == 0.0:
                    continue
                rotated = True
                # rotation angle with cot(2θ) = (β-α)/(2γ), |θ| <= π/4
                diff = beta - alpha
                two_theta = np.arctan2(2.0 * gamma * (1.0 if diff >= 0 else -1.0), abs(diff))
                c = np.cos(0.5 * two_theta)
                s = np.sin(0.5 * two_theta)
                new_i = c * ai - s * aj
                new_j = s * ai + c * aj
                a[:, i] = new_i
                a[:, j] = new_j
        if not rotated:
            break
    sv = np.sqrt(np.einsum("ij,ij->j", a, a)) * scale
    return np.sort(sv)[::-1]


def matrix_rank(x) -> int:
    x = as_mat(x)
    sv = singular_values(x)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int((sv > max(x.shape) * sv[0] * 1e-10).sum())


def rank_exact(x) -> int:
    """Rank by Gaussian elimination over the rationals.

    Entries are converted exactly with ``Fraction``, so for integer or
    dyadic inputs the answer carries no rounding error at all.
    """
    rows = [[Fraction(float(v)) for v in row] for row in np.asarray(x, dtype=np.float64)]
    if not rows:
        return 0
    ncol = len(rows[0])
    rank = 0
    for col in range(ncol):
        pivot = next((r for r in range(rank, len(rows)) if rows[r][col] != 0), None)
        if pivot is None:
            continue
        rows[rank], rows[pivot] = rows[pivot], rows[rank]
        p = rows[rank]
        for r in range(rank + 1, len(rows)):
            if rows[r][col] != 0:
                factor = rows[r][col] / p[col]
                rows[r] = [u - factor * v for u, v in zip(rows[r], p)]
        rank += 1
        if rank == len(rows):
            break
    return rank


def fd_gradient(loss, theta, h: float = FD_GRAD_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    if h <= 0:
        raise ValueError("step must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.empty_like(theta)
    x = theta.copy()
    for i in range(theta.size):
        x[i] = theta[i] + h
        fp = loss(x)
        x[i] = theta[i] - h
        fm = loss(x)
        x[i] = theta[i]
        grad[i] = (fp - fm) / (2 * h)
    return grad


def fd_hessian_trace(loss, theta, h: float = FD_HESS_STEP) -> float:
    """Sum of central second differences along each coordinate."""
    if h <= 0:
        raise ValueError("step must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    x = theta.copy()
    f0 = loss(theta)
    total = 0.0
    for i in range(theta.size):
        x[i] = theta[i] + h
        fp = loss(x)
        x[i] = theta[i] - h
        fm = loss(x)
        x[i] = theta[i]
        total += (fp - 2.0 * f0 + fm) / (h * h)
    return total


def random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix (QR with sign correction)."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))[None, :]
