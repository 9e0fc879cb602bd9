"""Matrix-completion baseline: ``M ≈ U Vᵀ`` with weight decay.

Weight decay on a two-factor product is the usual implicit nuclear-norm
(low-rank) bias.  The table is completed either as an ``n×n`` matrix of
symbol values (``ordinal``) or as the ``n²×n`` one-hot matrix whose row
``a*n + b`` is the fiber ``δ[a, b, :]`` (``onehot``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .algebra import CayleyTable
from .engine import Adam, TrainConfig, TrainDiverged, evaluate, sample_mask, mask_rng
from .model import ObservationSet
from .numerics import make_rng, singular_values

__all__ = [
    "MCFactors", "ENCODINGS", "encode_table", "observed_mask", "mc_train",
    "mc_decode", "nuclear_norm", "balanced_factors", "mc_run", "separation_rows",
]

ENCODINGS = ("ordinal", "onehot")


@dataclass
class MCFactors:
    encoding: str
    n: int
    r: int
    U: np.ndarray
    V: np.ndarray
    steps_used: int = 0
    loss_final: float = float("nan")

    def __post_init__(self):
        rows = self.n if self.encoding == "ordinal" else self.n * self.n
        if self.U.shape != (rows, self.r) or self.V.shape != (self.n, self.r):
            raise ValueError(f"factor shapes {self.U.shape}, {self.V.shape} do not fit "
                             f"{self.encoding} encoding with n={self.n}, r={self.r}")

    @property
    def product(self) -> np.ndarray:
        return self.U @ self.V.T


def _check_encoding(encoding):
    if encoding not in ENCODINGS:
        raise ValueError(f"encoding must be one of {ENCODINGS}, got {encoding!r}")


def encode_table(t: CayleyTable, encoding: str) -> np.ndarray:
    _check_encoding(encoding)
    n = t.n
    if encoding == "ordinal":
        return t.cells.astype(np.float64)
    M = np.zeros((n * n, n))
    M[np.arange(n * n), t.cells.ravel()] = 1.0
    return M


def observed_mask(omega: ObservationSet, encoding: str) -> np.ndarray:
    """0/1 mask over the encoded matrix; a one-hot cell reveals its whole row."""
    _check_encoding(encoding)
    w = omega.mask
    if encoding == "ordinal":
        return w
    return np.repeat(w.reshape(-1, 1), omega.n, axis=1)


def mc_train(M, W, r: int, weight_decay: float, cfg: TrainConfig = TrainConfig(), seed: int = 0,
             encoding: str = "ordinal", n: int | None = None) -> MCFactors:
    """Adam on ``Σ W∘(UVᵀ - M)² + wd(||U||² + ||V||²)``.

    ``M`` may also be a :class:`CayleyTable`, in which case ``W`` must be an
    :class:`ObservationSet` and both are encoded with ``encoding``.  The
    learning rate decays linearly to zero over the last
    ``cfg.lam_anneal_frac`` of the run so the fit can settle.
    """
    if r < 1:
        raise ValueError("rank budget must be >= 1")
    if weight_decay < 0:
        raise ValueError("weight_decay must be >= 0")
    _check_encoding(encoding)
    if isinstance(M, CayleyTable):
        n = M.n
        M = encode_table(M, encoding)
        W = observed_mask(W, encoding)
    M = np.asarray(M, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    rows, cols = M.shape
    if n is None:
        n = cols
    rng = make_rng(seed)
    std = cfg.init_scale / np.sqrt(max(rows, cols))
    vec = np.concatenate([rng.standard_normal(rows * r), rng.standard_normal(cols * r)]) * std
    ku = rows * r
    opt = Adam(vec.size, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    decay_start = int((1 - cfg.lam_anneal_frac) * cfg.steps_max)
    loss = float("nan")
    step = 0
    for step in range(cfg.steps_max):
        U = vec[:ku].reshape(rows, r)
        V = vec[ku:].reshape(cols, r)
        R = W * (U @ V.T - M)
        loss = float((R * R).sum() + weight_decay * (vec @ vec))
        if not np.isfinite(loss):
            raise TrainDiverged(step)
        g = 2.0 * np.concatenate([(R @ V).ravel(), (R.T @ U).ravel()]) + 2.0 * weight_decay * vec
        if np.abs(g).max() < 1e-12:
            break
        if step >= decay_start:
            opt.lr = cfg.lr * (cfg.steps_max - step) / (cfg.steps_max - decay_start)
        opt.step(vec, g)
    else:
        step = cfg.steps_max
    if not np.isfinite(vec).all():
        raise TrainDiverged(step)
    U = vec[:ku].reshape(rows, r).copy()
    V = vec[ku:].reshape(cols, r).copy()
    R = W * (U @ V.T - M)
    loss = float((R * R).sum() + weight_decay * (vec @ vec))
    return MCFactors(encoding, n, r, U, V, steps_used=step, loss_final=loss)


def mc_decode(f: MCFactors) -> CayleyTable:
    n = f.n
    P = f.product
    if f.encoding == "ordinal":
        return CayleyTable(np.clip(np.rint(P), 0, n - 1).astype(np.int64))
    return CayleyTable(P.argmax(axis=1).reshape(n, n))


def nuclear_norm(x) -> float:
    return float(singular_values(x).sum())


def balanced_factors(M):
    """``U = PΣ^½``, ``V = QΣ^½`` from the SVD ``M = PΣQᵀ``; these attain
    ``||U||² + ||V||² = 2·||M||_*``."""
    P, s, Qt = np.linalg.svd(np.asarray(M, dtype=np.float64), full_matrices=False)
    root = np.sqrt(s)
    return P * root[None, :], Qt.T * root[None, :]


def mc_run(job) -> dict:
    """One baseline run as a sweep-CSV row."""
    table_id, t, m, seed, encoding, r, wd, cfg = job
    n = t.n
    omega = sample_mask(n, m, mask_rng(seed, n, m))
    row = {"table_id": table_id, "n": n, "m": m, "seed": seed, "bound_3n2": 3.0 * n * n,
           "method": "mc", "encoding": encoding, "r": r, "weight_decay": wd,
           "flatness_final": float("nan")}
    try:
        f = mc_train(t, omega, r, wd, cfg, seed, encoding=encoding)
    except TrainDiverged as exc:
        row.update(converged=False, steps=exc.step, recon_loss_final=float("nan"),
                   cell_accuracy=0.0, unobserved_accuracy=0.0, exact=False, diverged=True)
        return row
    rep = evaluate(mc_decode(f), t, omega, float("nan"))
    row.update(converged=f.steps_used < cfg.steps_max, steps=f.steps_used, recon_loss_final=f.loss_final,
               cell_accuracy=rep.cell_accuracy, unobserved_accuracy=rep.unobserved_accuracy,
               exact=rep.exact, diverged=False)
    return row


def separation_rows(table_id: str, t: CayleyTable, m: int, seeds: int, cfg: TrainConfig,
                    ranks=None, encodings=ENCODINGS, weight_decay: float = 1e-3, done=(), on_row=None):
    """Baseline rows for every (encoding, rank, seed) at one observation count.

    Uses the same masks as the tensor sweep for matching ``(m, seed)``.
    """
    n = t.n
    if ranks is None:
        ranks = sorted({2, -(-n // 2), n})
    done = set(done)
    rows = []
    for encoding in encodings:
        for r in ranks:
            for seed in range(seeds):
                if (table_id, m, seed, "mc", encoding, str(r)) in done:
                    continue
                row = mc_run((table_id, t, m, seed, encoding, r, weight_decay, cfg))
                rows.append(row)
                if on_row:
                    on_row(row)
    return rows
