"""Training, decoding, recovery metrics and the two headline experiments.

Training is full-batch Adam on ``L + λ(step)·H``.  The flatness weight ramps
up linearly, holds, and is annealed back to zero over the last part of the
run; a few minimum-norm Gauss-Newton steps then close the remaining residual
so a run can meet a tight ``loss_tol`` without drifting away from the flat
point Adam found.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .algebra import CayleyTable, is_latin
from .model import (
    FactorParams, ObservationSet, flatness, forward_all, init_params,
    objective, one_hot, residual_jacobian,
)
from .numerics import make_rng, singular_values

__all__ = [
    "TrainConfig", "TrainResult", "RecoveryReport", "LandscapeSummary",
    "SweepResult", "TrainDiverged", "ProbeFailed", "Adam",
    "lam_schedule", "sample_mask", "train", "multi_restart", "decode",
    "evaluate", "sweep_sample_complexity", "landscape_probe",
    "slice_sv_spread", "SWEEP_COLUMNS", "format_row", "mask_rng", "row_key", "aggregate",
    "nlogn_fit",
]


class TrainDiverged(RuntimeError):
    def __init__(self, step, msg="loss became non-finite"):
        super().__init__(f"{msg} at step {step}")
        self.step = step


class ProbeFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-2
    steps_max: int = 50_000
    lam: float = 0.05
    lam_warmup_frac: float = 0.1
    # last fraction of the run over which λ decays linearly to 0
    lam_anneal_frac: float = 0.3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    init_scale: float = 1.0
    loss_tol: float = 1e-8
    stability_window: int = 500
    polish_iters: int = 10
    log_every: int = 500

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.steps_max < 0:
            raise ValueError("steps_max must be >= 0")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        for name in ("lam_warmup_frac", "lam_anneal_frac"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.lam_warmup_frac + self.lam_anneal_frac > 1:
            raise ValueError("warmup and anneal fractions overlap")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if not self.adam_eps > 0 or not self.init_scale > 0 or not self.loss_tol > 0:
            raise ValueError("adam_eps, init_scale and loss_tol must be positive")
        if self.stability_window < 0 or self.polish_iters < 0 or self.log_every < 1:
            raise ValueError("stability_window, polish_iters must be >= 0 and log_every >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        defaults = cls()
        kw = {k: type(getattr(defaults, k))(v) for k, v in d.items()}
        return cls(**kw)


@dataclass
class TrainResult:
    theta: FactorParams
    converged: bool
    steps_used: int
    seed: int
    recon_loss_final: float
    flatness_final: float
    decoded: CayleyTable
    margin_min: float
    polish_iters_used: int = 0
    # rows of (step, recon_loss, flatness, decode_accuracy, lam)
    trajectory: list = field(default_factory=list)
    restarts: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "converged": self.converged,
            "steps_used": self.steps_used,
            "polish_iters_used": self.polish_iters_used,
            "recon_loss_final": self.recon_loss_final,
            "flatness_final": self.flatness_final,
            "margin_min": self.margin_min,
        }


@dataclass(frozen=True)
class RecoveryReport:
    exact: bool
    cell_accuracy: float
    observed_accuracy: float
    unobserved_accuracy: float
    flatness_final: float
    bound_3n2: float
    margin_min: float = float("nan")


class Adam:
    """Adam over a flat parameter vector, updated in place."""

    def __init__(self, size, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, g: np.ndarray) -> None:
        self.t += 1
        self.m *= self.beta1
        self.m += (1 - self.beta1) * g
        self.v *= self.beta2
        self.v += (1 - self.beta2) * (g * g)
        bc1 = 1 - self.beta1 ** self.t
        bc2 = 1 - self.beta2 ** self.t
        params -= (self.lr / bc1) * self.m / (np.sqrt(self.v / bc2) + self.eps)


def lam_schedule(step: int, cfg: TrainConfig) -> float:
    total = cfg.steps_max
    if total == 0 or cfg.lam == 0:
        return cfg.lam
    warm = cfg.lam_warmup_frac * total
    anneal_start = (1 - cfg.lam_anneal_frac) * total
    if step < warm:
        return cfg.lam * step / warm
    if step < anneal_start:
        return cfg.lam
    return cfg.lam * (total - step) / (total - anneal_start)


def sample_mask(n: int, m: int, rng) -> ObservationSet:
    """``m`` distinct cells drawn uniformly without replacement."""
    if not 0 <= m <= n * n:
        raise ValueError(f"m must lie in [0, {n * n}], got {m}")
    if not isinstance(rng, np.random.Generator):
        rng = make_rng(rng)
    idx = rng.choice(n * n, size=m, replace=False)
    return ObservationSet(n, [divmod(int(i), n) for i in idx])


def decode(theta: FactorParams, return_margins: bool = False):
    """Argmax over the symbol axis, ties toward the smallest index."""
    return _decode_T(forward_all(theta), return_margins)


def _decode_T(T, return_margins=False):
    table = CayleyTable(T.argmax(axis=2))
    if not return_margins:
        return table
    if T.shape[2] == 1:
        return table, np.full(T.shape[:2], np.inf)
    top2 = np.sort(T, axis=2)[:, :, -2:]
    return table, top2[:, :, 1] - top2[:, :, 0]


def evaluate(decoded: CayleyTable, target: CayleyTable, omega: ObservationSet,
             flatness_final: float, margin_min: float = float("nan")) -> RecoveryReport:
    """Accuracy over all, observed and unobserved cells.

    With every cell observed the unobserved accuracy is 1 by convention.
    """
    if decoded.n != target.n or omega.n != target.n:
        raise ValueError("decoded table, target and observation set sizes differ")
    n = target.n
    hit = decoded.cells == target.cells
    mask = omega.mask.astype(bool)
    n_obs = int(mask.sum())
    n_unobs = n * n - n_obs
    correct = int(hit.sum())
    obs_acc = int(hit[mask].sum()) / n_obs if n_obs else 1.0
    unobs_acc = int(hit[~mask].sum()) / n_unobs if n_unobs else 1.0
    return RecoveryReport(
        exact=correct == n * n,
        cell_accuracy=correct / (n * n),
        observed_accuracy=obs_acc,
        unobserved_accuracy=unobs_acc,
        flatness_final=float(flatness_final),
        bound_3n2=3.0 * n * n,
        margin_min=float(margin_min),
    )


def _polish(vec, n, cells, target, weights, cfg):
    """Minimum-norm Gauss-Newton on the observed residuals."""
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    fiber = target[cells[:, 0], cells[:, 1]].ravel()
    used = 0
    for _ in range(cfg.polish_iters):
        theta = FactorParams.from_flat(vec, n)
        T = forward_all(theta)
        r = T[cells[:, 0], cells[:, 1]].ravel() - fiber
        if 0.5 * float(r @ r) <= cfg.loss_tol * 1e-4:
            break
        J = residual_jacobian(theta, cells)
        step = np.linalg.lstsq(J, r, rcond=None)[0]
        vec = vec - step
        used += 1
        if not np.isfinite(vec).all():
            raise TrainDiverged(cfg.steps_max, "Gauss-Newton polish diverged")
    return vec, used


def train(t: CayleyTable, omega: ObservationSet, cfg: TrainConfig = TrainConfig(), seed: int = 0) -> TrainResult:
    """Fit the factorization to the observed cells of ``t``.

    Stops once the loss is below ``loss_tol`` and the decoded table has not
    changed for ``stability_window`` steps, or after ``steps_max`` Adam
    steps followed by the polish.
    """
    n = t.n
    if omega.n != n:
        raise ValueError("observation set and table sizes differ")
    target = one_hot(t)
    weights = omega.mask
    theta = init_params(n, cfg.init_scale, make_rng(seed))
    vec = theta.flat()
    opt = Adam(vec.size, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    trajectory = []
    prev = None
    stable_since = 0
    converged = False
    step = 0
    for step in range(cfg.steps_max):
        if not np.isfinite(vec).all():
            raise TrainDiverged(step)
        lam = lam_schedule(step, cfg)
        theta = FactorParams.from_flat(vec, n)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                L, H, T, g = objective(theta, target, weights, lam)
        except FloatingPointError:
            raise TrainDiverged(step) from None
        if not (math.isfinite(L) and math.isfinite(H)):
            raise TrainDiverged(step)
        dec = T.argmax(axis=2)
        if prev is None or not np.array_equal(dec, prev):
            prev = dec
            stable_since = step
        if step % cfg.log_every == 0:
            trajectory.append((step, L, H, float((dec == t.cells).mean()), lam))
        if L <= cfg.loss_tol and step - stable_since >= cfg.stability_window:
            converged = True
            break
        opt.step(vec, g.flat())
    else:
        step = cfg.steps_max
    steps_used = step

    if not np.isfinite(vec).all():
        raise TrainDiverged(steps_used)

    polish_used = 0
    if (not converged and steps_used > 0 and cfg.polish_iters > 0 and len(omega)
            and steps_used - stable_since >= cfg.stability_window):
        before = _decode_T(forward_all(FactorParams.from_flat(vec, n)))
        vec, polish_used = _polish(vec, n, omega.cells, target, weights, cfg)
        theta = FactorParams.from_flat(vec, n)
        L = objective(theta, target, weights, 0.0, need_grad=False)[0]
        converged = L <= cfg.loss_tol and _decode_T(forward_all(theta)) == before

    theta = FactorParams.from_flat(vec, n)
    L, H, T, _ = objective(theta, target, weights, 0.0, need_grad=False)
    if not (math.isfinite(L) and math.isfinite(H)):
        raise TrainDiverged(steps_used)
    decoded, margins = _decode_T(T, return_margins=True)
    trajectory.append((steps_used + polish_used, L, H, float((decoded.cells == t.cells).mean()), 0.0))
    return TrainResult(
        theta=theta,
        converged=bool(converged),
        steps_used=steps_used,
        seed=seed,
        recon_loss_final=L,
        flatness_final=H,
        decoded=decoded,
        margin_min=float(margins.min()),
        polish_iters_used=polish_used,
        trajectory=trajectory,
    )


def _rank_key(res: TrainResult):
    return (not res.converged, res.flatness_final, res.seed)


def multi_restart(t: CayleyTable, omega: ObservationSet, cfg: TrainConfig = TrainConfig(),
                  k: int = 10, base_seed: int = 0) -> TrainResult:
    """Best of ``k`` seeds: converged runs first, then lowest flatness.

    Summaries of all runs (including diverged ones) are kept on
    ``result.restarts``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    results, summaries = [], []
    for seed in range(base_seed, base_seed + k):
        try:
            res = train(t, omega, cfg, seed)
        except TrainDiverged as exc:
            summaries.append({"seed": seed, "diverged": True, "step": exc.step})
            continue
        results.append(res)
        summaries.append({**res.summary(), "diverged": False})
    if not results:
        raise TrainDiverged(-1, f"all {k} restarts diverged")
    best = min(results, key=_rank_key)
    best.restarts = summaries
    return best


def slice_sv_spread(theta: FactorParams) -> float:
    """Largest ``(σ_max - σ_min)/σ_max`` over all 3n slices; 0 for orthogonal slices."""
    worst = 0.0
    for stack in (theta.A, theta.B, theta.C):
        for x in stack:
            sv = singular_values(x)
            if sv[0] == 0:
                return float("inf")
            worst = max(worst, float((sv[0] - sv[-1]) / sv[0]))
    return worst


@dataclass
class LandscapeSummary:
    table_id: str
    n: int
    k: int
    converged_count: int
    best_flatness: float
    bound: float
    gap: float
    sv_spread_max: float
    # per-restart flatness of the converged runs, in seed order
    converged_flatness: list = field(default_factory=list)
    best: TrainResult | None = field(default=None, repr=False)

    def to_json_dict(self) -> dict:
        keys = ("table_id", "n", "k", "converged_count", "best_flatness", "bound", "gap", "sv_spread_max")
        return {key: getattr(self, key) for key in keys}


def landscape_probe(t: CayleyTable, cfg: TrainConfig = TrainConfig(), k: int = 10,
                    base_seed: int = 0, table_id: str = "table") -> LandscapeSummary:
    """Fully observed restarts; best converged flatness against ``3n²``."""
    if not is_latin(t):
        raise ValueError("landscape_probe expects a Latin square")
    omega = ObservationSet.full(t.n)
    best = multi_restart(t, omega, cfg, k, base_seed)
    conv = [s["flatness_final"] for s in best.restarts if not s["diverged"] and s["converged"]]
    if not conv:
        raise ProbeFailed(f"none of {k} restarts reached loss_tol={cfg.loss_tol}")
    bound = 3.0 * t.n ** 2
    return LandscapeSummary(
        table_id=table_id,
        n=t.n,
        k=k,
        converged_count=len(conv),
        best_flatness=best.flatness_final,
        bound=bound,
        gap=best.flatness_final - bound,
        sv_spread_max=slice_sv_spread(best.theta),
        converged_flatness=conv,
        best=best,
    )


# sample-complexity sweep

SWEEP_COLUMNS = [
    "table_id", "n", "m", "seed", "converged", "steps", "recon_loss_final",
    "flatness_final", "bound_3n2", "cell_accuracy", "unobserved_accuracy",
    "exact", "diverged", "method", "encoding", "r", "weight_decay",
]


def format_row(row: dict) -> dict:
    """String form of a sweep row; floats at 17 significant digits."""
    out = {}
    for key in SWEEP_COLUMNS:
        v = row.get(key, "")
        if isinstance(v, bool) or isinstance(v, np.bool_):
            out[key] = "true" if v else "false"
        elif isinstance(v, float):
            out[key] = format(v, ".17g")
        else:
            out[key] = str(v)
    return out


@dataclass
class SweepResult:
    rows: list
    # (table_id, m) -> {"n", "runs", "rate", "stderr"}
    aggregates: dict
    # table_id -> smallest grid m with rate >= threshold, or None
    m_star: dict


def _resolve_grid(m_grid, table_id, n):
    grid = m_grid[table_id] if isinstance(m_grid, dict) else m_grid
    out = []
    for m in grid:
        if isinstance(m, float):
            m = int(round(m * n * n))
        out.append(int(m))
    return sorted(set(out))


def mask_rng(seed, n, m):
    return make_rng(np.random.SeedSequence([seed, n, m]).generate_state(1)[0])


def _tensor_run(job):
    table_id, t, m, seed, cfg = job
    n = t.n
    omega = sample_mask(n, m, mask_rng(seed, n, m))
    row = {"table_id": table_id, "n": n, "m": m, "seed": seed, "bound_3n2": 3.0 * n * n,
           "method": "tensor", "encoding": "", "r": "", "weight_decay": cfg.lam}
    try:
        res = train(t, omega, cfg, seed)
    except TrainDiverged as exc:
        row.update(converged=False, steps=exc.step, recon_loss_final=float("nan"),
                   flatness_final=float("nan"), cell_accuracy=0.0, unobserved_accuracy=0.0,
                   exact=False, diverged=True)
        return row
    rep = evaluate(res.decoded, t, omega, res.flatness_final, res.margin_min)
    row.update(converged=res.converged, steps=res.steps_used, recon_loss_final=res.recon_loss_final,
               flatness_final=res.flatness_final, cell_accuracy=rep.cell_accuracy,
               unobserved_accuracy=rep.unobserved_accuracy, exact=rep.exact, diverged=False)
    return row


def row_key(row) -> tuple:
    return (str(row["table_id"]), int(row["m"]), int(row["seed"]), str(row.get("method", "tensor")),
            str(row.get("encoding", "")), str(row.get("r", "")))


def aggregate(rows, threshold: float = 0.9):
    groups = {}
    for row in rows:
        groups.setdefault((row["table_id"], int(row["m"])), []).append(row)
    aggregates = {}
    for key, rs in sorted(groups.items()):
        wins = [1.0 if _truthy(r["exact"]) else 0.0 for r in rs]
        rate = float(np.mean(wins))
        se = float(np.sqrt(rate * (1 - rate) / len(wins)))
        aggregates[key] = {"n": int(rs[0]["n"]), "runs": len(wins), "rate": rate, "stderr": se}
    m_star = {}
    for (tid, m), agg in aggregates.items():
        m_star.setdefault(tid, None)
        if agg["rate"] >= threshold and (m_star[tid] is None or m < m_star[tid]):
            m_star[tid] = m
    return aggregates, m_star


def nlogn_fit(points):
    """Least-squares ``m* ≈ c·n·ln n`` through the origin.

    ``points`` maps ``n`` to ``m*`` (``None`` entries are skipped).  Returns
    ``(c, rel_rms)`` where ``rel_rms`` is the RMS of the relative residuals,
    or ``(nan, nan)`` with fewer than two usable points.
    """
    pts = [(n, m) for n, m in points.items() if m is not None and n > 1]
    if len(pts) < 2:
        return float("nan"), float("nan")
    x = np.array([n * math.log(n) for n, _ in pts])
    y = np.array([m for _, m in pts], dtype=float)
    c = float(x @ y / (x @ x))
    return c, float(np.sqrt(np.mean(((c * x - y) / y) ** 2)))


def _truthy(v):
    return v is True or v is np.True_ or str(v).lower() in ("true", "1")


def sweep_sample_complexity(family, m_grid, seeds: int, cfg: TrainConfig = TrainConfig(),
                            jobs: int = 1, done=(), on_row=None, threshold: float = 0.9) -> SweepResult:
    """Recovery rate over random masks for each table and observation count.

    ``family`` is a list of ``(table_id, CayleyTable)``.  ``m_grid`` is a
    list of counts (floats are read as fractions of ``n²``) or a dict
    keyed by table id.  Seeds ``0..seeds-1`` drive both the mask and the
    initialization.  Rows whose key is in ``done`` are skipped; ``on_row``
    sees each new row as it completes.
    """
    if not family or not m_grid or seeds < 1:
        raise ValueError("family, m_grid and seeds must be nonempty")
    done = set(done)
    jobs_list = []
    for table_id, t in family:
        for m in _resolve_grid(m_grid, table_id, t.n):
            for seed in range(seeds):
                key = (table_id, m, seed, "tensor", "", "")
                if key not in done:
                    jobs_list.append((table_id, t, m, seed, cfg))
    rows = []
    if jobs > 1 and len(jobs_list) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for row in pool.map(_tensor_run, jobs_list):
                rows.append(row)
                if on_row:
                    on_row(row)
    else:
        for job in jobs_list:
            row = _tensor_run(job)
            rows.append(row)
            if on_row:
                on_row(row)
    rows.sort(key=row_key)
    aggregates, m_star = aggregate(rows, threshold)
    return SweepResult(rows, aggregates, m_star)
