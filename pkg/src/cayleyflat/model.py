"""Operator-valued tensor factorization of a Cayley table.

Parameters are three stacks of ``n×n`` matrices ``A, B, C``; the model value
for a triple is ``T[a, b, c] = Tr(A[a] @ B[b] @ C[c]) / n``.  Observations
are whole table cells ``(a, b)``: an observed cell exposes its entire one-hot
fiber over ``c``.

The reconstruction loss is ``L = ½ Σ_{(a,b)∈Ω} Σ_c (T_abc - δ_abc)²``.  Because
``T`` is linear in every individual parameter, all diagonal second
derivatives of ``T`` vanish and the Hessian trace of ``L`` equals
``Σ ||∇T_abc||²`` at any point, residual or not.  That is what
:func:`flatness` evaluates in closed form.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .algebra import CayleyTable, is_group
from .numerics import make_rng

__all__ = [
    "FactorParams", "GradParams", "ObservationSet",
    "NotAGroupError", "GaugeError",
    "forward", "forward_all", "recon_loss", "flatness", "grad",
    "objective", "residual_jacobian", "one_hot",
    "regular_representation", "init_params", "apply_gauge", "scale_gauge",
    "params_to_json", "params_from_json",
]


class NotAGroupError(ValueError):
    pass


class GaugeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FactorParams:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        shapes = {np.shape(x) for x in (self.A, self.B, self.C)}
        if len(shapes) != 1:
            raise ValueError(f"A, B, C shapes differ: {shapes}")
        (shape,) = shapes
        if len(shape) != 3 or len(set(shape)) != 1:
            raise ValueError(f"each stack must be n×n×n, got {shape}")
        for name in "ABC":
            x = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.isfinite(x).all():
                raise ValueError(f"{name} has non-finite entries")
            object.__setattr__(self, name, x)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.A.ravel(), self.B.ravel(), self.C.ravel()])

    @classmethod
    def from_flat(cls, vec, n: int) -> "FactorParams":
        vec = np.asarray(vec, dtype=np.float64)
        k = n ** 3
        return cls(vec[:k].reshape(n, n, n), vec[k:2 * k].reshape(n, n, n), vec[2 * k:].reshape(n, n, n))

    @classmethod
    def zeros(cls, n: int) -> "FactorParams":
        return cls(np.zeros((n, n, n)), np.zeros((n, n, n)), np.zeros((n, n, n)))

    def copy(self) -> "FactorParams":
        return FactorParams(self.A.copy(), self.B.copy(), self.C.copy())

    def __eq__(self, other):
        if not isinstance(other, FactorParams):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in "ABC")


# gradients share the parameter layout
GradParams = FactorParams


class ObservationSet:
    """Observed cells ``(a, b)``, kept sorted so reductions run in a fixed order."""

    def __init__(self, n: int, cells=()):
        raw = [(int(a), int(b)) for a, b in cells]
        cells = sorted(set(raw))
        if len(cells) != len(raw):
            raise ValueError("duplicate cells")
        for a, b in cells:
            if not (0 <= a < n and 0 <= b < n):
                raise IndexError(f"cell {(a, b)} out of range for n={n}")
        self.n = n
        self.cells = tuple(cells)

    @classmethod
    def full(cls, n: int) -> "ObservationSet":
        return cls(n, [(a, b) for a in range(n) for b in range(n)])

    @property
    def mask(self) -> np.ndarray:
        w = np.zeros((self.n, self.n))
        for a, b in self.cells:
            w[a, b] = 1.0
        return w

    def __len__(self):
        return len(self.cells)

    def __contains__(self, ab):
        return tuple(ab) in set(self.cells)

    def __iter__(self):
        return iter(self.cells)

    def __eq__(self, other):
        return isinstance(other, ObservationSet) and (self.n, self.cells) == (other.n, other.cells)

    def __repr__(self):
        return f"ObservationSet(n={self.n}, m={len(self.cells)})"


def one_hot(t: CayleyTable) -> np.ndarray:
    """Dense structure tensor ``δ[a, b, c]``."""
    d = np.zeros((t.n, t.n, t.n))
    a, b = np.indices((t.n, t.n))
    d[a, b, t.cells] = 1.0
    return d


def forward(theta: FactorParams, a: int, b: int, c: int) -> float:
    n = theta.n
    for i in (a, b, c):
        if not 0 <= i < n:
            raise IndexError(f"index {i} out of range for n={n}")
    return float(np.trace(theta.A[a] @ theta.B[b] @ theta.C[c])) / n


def _products(theta):
    n = theta.n
    AB = np.matmul(theta.A[:, None], theta.B[None, :])  # (a, b, i, k)
    T = AB.reshape(n * n, n * n) @ theta.C.transpose(0, 2, 1).reshape(n, n * n).T
    return AB, T.reshape(n, n, n) / n


def forward_all(theta: FactorParams) -> np.ndarray:
    """``T[a, b, c]`` for every triple."""
    return _products(theta)[1]


def objective(theta: FactorParams, target: np.ndarray, weights: np.ndarray, lam: float,
              need_grad: bool = True):
    """Loss, flatness, forward tensor and gradient of ``L + lam*H``.

    ``target`` is the dense one-hot tensor and ``weights`` the ``n×n`` 0/1
    cell mask.  Returns ``(L, H, T, grad)``; ``grad`` is None when not
    requested.
    """
    n = theta.n
    A, B, C = theta.A, theta.B, theta.C
    AB, T = _products(theta)
    r = weights[:, :, None] * (T - target)
    L = 0.5 * float(np.einsum("abc,abc->", r, r))

    row_cnt = weights.sum(axis=1)
    col_cnt = weights.sum(axis=0)
    S_C = np.einsum("cij,ckj->ik", C, C)    # Σ C_c C_cᵀ
    Q_C = np.einsum("cji,cjk->ik", C, C)    # Σ C_cᵀ C_c
    BtB = np.matmul(B.transpose(0, 2, 1), B)
    AAt = np.matmul(A, A.transpose(0, 2, 1))
    H = (n * float(np.einsum("ab,abik,abik->", weights, AB, AB))
         + float(np.einsum("b,bik,ki->", col_cnt, BtB, S_C))
         + float(np.einsum("a,aik,ki->", row_cnt, AAt, Q_C))) / n ** 2
    if not need_grad:
        return L, H, T, None

    G = (r.reshape(n * n, n) @ C.reshape(n, n * n)).reshape(n, n, n, n)  # Σ_c r_abc C_c
    gA = np.matmul(B[None, :], G).sum(axis=1).transpose(0, 2, 1) / n
    gB = np.matmul(G, A[:, None]).sum(axis=0).transpose(0, 2, 1) / n
    gC = (r.reshape(n * n, n).T @ AB.reshape(n * n, n * n)).reshape(n, n, n).transpose(0, 2, 1) / n

    if lam:
        s = 2.0 * lam / n ** 2
        wAB = weights[:, :, None, None] * AB
        hA = n * np.matmul(wAB, B.transpose(0, 2, 1)[None, :]).sum(axis=1) \
            + row_cnt[:, None, None] * np.matmul(Q_C[None], A)
        hB = n * np.matmul(A.transpose(0, 2, 1)[:, None], wAB).sum(axis=0) \
            + col_cnt[:, None, None] * np.matmul(B, S_C[None])
        M_B = np.einsum("b,bik->ik", col_cnt, BtB)
        N_A = np.einsum("a,aik->ik", row_cnt, AAt)
        hC = np.matmul(M_B[None], C) + np.matmul(C, N_A[None])
        gA = gA + s * hA
        gB = gB + s * hB
        gC = gC + s * hC
    if not (np.isfinite(gA).all() and np.isfinite(gB).all() and np.isfinite(gC).all()):
        raise FloatingPointError("gradient has non-finite entries")
    return L, H, T, GradParams(gA, gB, gC)


def recon_loss(theta: FactorParams, t: CayleyTable, omega: ObservationSet) -> float:
    if not len(omega):
        return 0.0
    return objective(theta, one_hot(t), omega.mask, 0.0, need_grad=False)[0]


def flatness(theta: FactorParams, omega: ObservationSet) -> float:
    """Hessian trace of the reconstruction loss over the observed fibers.

    Closed form ``(1/n²) Σ_{(a,b)∈Ω} Σ_c ||A_a B_b||² + ||B_b C_c||² + ||C_c A_a||²``;
    independent of the target table.
    """
    if not len(omega):
        return 0.0
    n = theta.n
    return objective(theta, np.zeros((n, n, n)), omega.mask, 0.0, need_grad=False)[1]


def grad(theta: FactorParams, t: CayleyTable, omega: ObservationSet, lam: float) -> GradParams:
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    return objective(theta, one_hot(t), omega.mask, lam)[3]


def residual_jacobian(theta: FactorParams, cells) -> np.ndarray:
    """Jacobian of ``T[a, b, :]`` for the listed cells w.r.t. ``theta.flat()``.

    Rows are ordered (cell, c); ``∂T_abc/∂A_a[i,j] = (B_b C_c)[j,i]/n`` and
    cyclically for ``B`` and ``C``.
    """
    n = theta.n
    A, B, C = theta.A, theta.B, theta.C
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    m = len(cells)
    a, b = cells[:, 0], cells[:, 1]
    BC = np.matmul(B[:, None], C[None, :])   # (b, c, j, l)
    CA = np.matmul(C[:, None], A[None, :])   # (c, a, k, l)
    AB = A[a] @ B[b]
    J = np.zeros((m, n, 3, n, n * n))
    rows = np.arange(m)
    for c in range(n):
        J[rows, c, 0, a] = BC[b, c].transpose(0, 2, 1).reshape(m, -1)
        J[rows, c, 1, b] = CA[c, a].transpose(0, 2, 1).reshape(m, -1)
        J[rows, c, 2, c] = AB.transpose(0, 2, 1).reshape(m, -1)
    return J.reshape(m * n, 3 * n ** 3) / n


def regular_representation(t: CayleyTable) -> FactorParams:
    """Left-regular permutation matrices: ``A_g = B_g = P_g``, ``C_g = P_gᵀ``.

    ``P_g[g∘x, x] = 1``, so ``P_a P_b = P_{a∘b}`` and
    ``Tr(P_a P_b P_cᵀ) = n·δ_abc``.
    """
    if not is_group(t):
        raise NotAGroupError("regular_representation needs a group table")
    n = t.n
    P = np.zeros((n, n, n))
    g, x = np.indices((n, n))
    P[g, t.cells, x] = 1.0
    return FactorParams(P.copy(), P.copy(), P.transpose(0, 2, 1).copy())


def init_params(n: int, scale: float = 1.0, rng=None) -> FactorParams:
    if scale <= 0:
        raise ValueError("scale must be positive")
    if rng is None:
        rng = make_rng(0)
    elif isinstance(rng, (int, np.integer)):
        rng = make_rng(int(rng))
    std = scale / np.sqrt(n)
    A = rng.standard_normal((n, n, n)) * std
    B = rng.standard_normal((n, n, n)) * std
    C = rng.standard_normal((n, n, n)) * std
    return FactorParams(A, B, C)


def _check_orthogonal(Q, n, name):
    Q = np.asarray(Q, dtype=np.float64)
    if Q.shape != (n, n) or np.abs(Q.T @ Q - np.eye(n)).max() > 1e-10:
        raise GaugeError(f"{name} is not an orthogonal {n}×{n} matrix")
    return Q


def apply_gauge(theta: FactorParams, U, V, W) -> FactorParams:
    """``A → U A Vᵀ``, ``B → V B Wᵀ``, ``C → W C Uᵀ``."""
    n = theta.n
    U, V, W = (_check_orthogonal(Q, n, k) for Q, k in ((U, "U"), (V, "V"), (W, "W")))
    return FactorParams(U @ theta.A @ V.T, V @ theta.B @ W.T, W @ theta.C @ U.T)


def scale_gauge(theta: FactorParams, c: float) -> FactorParams:
    """Non-orthogonal gauge ``A → cA, C → C/c``; forward values are unchanged."""
    if c == 0:
        raise GaugeError("scale must be nonzero")
    return FactorParams(theta.A * c, theta.B.copy(), theta.C / c)


def params_to_json(theta: FactorParams) -> str:
    """Checkpoint with every float stored as a hexadecimal string (bit-exact)."""
    enc = lambda x: [[[float(v).hex() for v in row] for row in mat] for mat in x]
    return json.dumps({"n": theta.n, "A": enc(theta.A), "B": enc(theta.B), "C": enc(theta.C)})


def params_from_json(text: str) -> FactorParams:
    obj = json.loads(text)
    dec = lambda x: np.array([[[float.fromhex(v) for v in row] for row in mat] for mat in x])
    theta = FactorParams(dec(obj["A"]), dec(obj["B"]), dec(obj["C"]))
    if theta.n != obj["n"]:
        raise ValueError(f"header says n={obj['n']} but stacks are {theta.n}")
    return theta
