"""Oracle cross-checks at small order (n ≤ 5).

Each check returns a :class:`Check` holding the measured error and the
tolerance it was held to.  ``run_all`` is what ``cayleyflat verify`` prints.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import algebra, baseline, engine, model, numerics
from .algebra import cyclic_group, dihedral_group, direct_product


@dataclass
class Check:
    name: str
    measured: float
    tolerance: float
    passed: bool
    detail: str = ""

    def as_dict(self):
        return asdict(self)


def _rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-300))


def _random_instance(n, seed):
    rng = numerics.make_rng(seed)
    theta = model.init_params(n, 1.0, rng)
    t = algebra.random_latin_square(n, seed)
    m = int(rng.integers(1, n * n + 1))
    omega = engine.sample_mask(n, m, rng)
    return theta, t, omega


def check_fd_gradient(instances=5, tol=1e-5):
    worst = 0.0
    for n in (2, 3, 4):
        for i in range(instances):
            theta, t, omega = _random_instance(n, 1000 * n + i)
            for lam in (0.0, 0.1, 1.0):
                g = model.grad(theta, t, omega, lam).flat()

                def J(v):
                    p = model.FactorParams.from_flat(v, n)
                    return model.recon_loss(p, t, omega) + lam * model.flatness(p, omega)

                worst = max(worst, _rel(g, numerics.fd_gradient(J, theta.flat())))
    return Check("grad_vs_fd_gradient", worst, tol, worst <= tol)


def check_fd_hessian_trace(instances=5, tol=1e-4):
    worst = 0.0
    for n in (2, 3, 4):
        for i in range(instances):
            theta, t, omega = _random_instance(n, 2000 * n + i)
            H = model.flatness(theta, omega)
            fd = numerics.fd_hessian_trace(
                lambda v: model.recon_loss(model.FactorParams.from_flat(v, n), t, omega), theta.flat())
            worst = max(worst, abs(H - fd) / abs(fd))
    return Check("flatness_vs_fd_hessian_trace", worst, tol, worst <= tol)


def small_groups():
    return [(f"cyclic-{n}", cyclic_group(n)) for n in range(2, 6)] + [
        ("klein-4", direct_product(cyclic_group(2), cyclic_group(2)))]


def check_regular_rep_fit(tol=1e-12):
    worst = 0.0
    for _, t in small_groups():
        theta = model.regular_representation(t)
        worst = max(worst, model.recon_loss(theta, t, model.ObservationSet.full(t.n)))
    return Check("regular_rep_zero_loss", worst, tol, worst <= tol)


def check_regular_rep_flatness(tol=1e-9):
    worst = 0.0
    for _, t in small_groups():
        H = model.flatness(model.regular_representation(t), model.ObservationSet.full(t.n))
        worst = max(worst, abs(H - 3 * t.n ** 2) / (3 * t.n ** 2))
    return Check("regular_rep_flatness_3n2", worst, tol, worst <= tol)


def _gauges(n, count, seed):
    rng = numerics.make_rng(seed)
    for _ in range(count):
        yield tuple(numerics.random_orthogonal(n, rng) for _ in range(3))


def check_gauge_forward(tol=1e-12):
    theta = model.regular_representation(cyclic_group(4))
    T0 = model.forward_all(theta)
    worst = max(float(np.abs(model.forward_all(model.apply_gauge(theta, *g)) - T0).max())
                for g in _gauges(4, 10, 7))
    return Check("gauge_invariance_forward", worst, tol, worst <= tol)


def check_gauge_flatness(tol=1e-9):
    theta = model.regular_representation(cyclic_group(4))
    full = model.ObservationSet.full(4)
    H0 = model.flatness(theta, full)
    worst = max(abs(model.flatness(model.apply_gauge(theta, *g), full) - H0) / H0 for g in _gauges(4, 10, 8))
    return Check("gauge_invariance_flatness", worst, tol, worst <= tol)


def check_scaling_gauge():
    theta = model.regular_representation(cyclic_group(4))
    full = model.ObservationSet.full(4)
    H0 = model.flatness(theta, full)
    # smallest increase over the tested scales; must be strictly positive
    rise = min(model.flatness(model.scale_gauge(theta, c), full) - H0 for c in (0.5, 2.0))
    return Check("scaling_gauge_increases_flatness", rise, 0.0, rise > 0.0)


def check_isotopy_oracle(squares=10):
    z5 = cyclic_group(5)
    disagree = 0
    for seed in range(squares):
        t = algebra.random_latin_square(5, seed)
        if algebra.is_isotopic_to_group(t) != algebra.exhaustive_isotopy_check(t, z5):
            disagree += 1
    return Check("isotopy_oracle_agreement", disagree, 0, disagree == 0, f"{squares} order-5 squares")


def check_isotopy_roundtrip(count=20):
    bad = 0
    for seed in range(count):
        t = algebra.random_latin_square(5, seed)
        iso = algebra.random_isotopy(5, seed + 1)
        u = algebra.apply_isotopy(t, iso)
        if not algebra.is_latin(u) or algebra.apply_isotopy(u, iso.inverse()) != t:
            bad += 1
    return Check("isotopy_inverse_roundtrip", bad, 0, bad == 0)


def check_svd(tol=1e-10):
    rng = numerics.make_rng(11)
    worst = 0.0
    for n in (2, 3, 4, 5):
        x = rng.standard_normal((n, n + 1))
        sv = numerics.singular_values(x)
        worst = max(worst, abs((sv ** 2).sum() - numerics.frob2(x)) / numerics.frob2(x))
        q = numerics.random_orthogonal(n, rng)
        worst = max(worst, float(np.abs(numerics.singular_values(q) - 1).max()))
    return Check("jacobi_svd", worst, tol, worst <= tol)


def check_full_rank():
    bad = 0
    for n in range(3, 6):
        M = baseline.encode_table(cyclic_group(n), "ordinal")
        if numerics.matrix_rank(M) != n or numerics.rank_exact(M) != n:
            bad += 1
    return Check("cyclic_ordinal_full_rank", bad, 0, bad == 0)


def check_nuclear_variational(pairs=20, tol=1e-8):
    rng = numerics.make_rng(12)
    worst_slack = np.inf
    worst_eq = 0.0
    for _ in range(pairs):
        U = rng.standard_normal((5, 3))
        V = rng.standard_normal((4, 3))
        nuc = baseline.nuclear_norm(U @ V.T)
        worst_slack = min(worst_slack, numerics.frob2(U) + numerics.frob2(V) - 2 * nuc)
        P, Q = baseline.balanced_factors(U @ V.T)
        worst_eq = max(worst_eq, abs(numerics.frob2(P) + numerics.frob2(Q) - 2 * nuc))
    passed = worst_slack >= -tol and worst_eq <= tol
    return Check("nuclear_norm_variational", worst_eq, tol, passed, f"min slack {worst_slack:.3g}")


def check_decode_regular_rep():
    bad = sum(engine.decode(model.regular_representation(t)) != t for _, t in small_groups())
    return Check("decode_regular_rep_identity", bad, 0, bad == 0)


def check_serialization():
    bad = 0
    for seed in range(5):
        t = algebra.random_latin_square(5, seed)
        bad += algebra.table_from_json(algebra.table_to_json(t)) != t
        bad += algebra.table_from_text(algebra.table_to_text(t)) != t
        theta = model.init_params(3, 1.0, numerics.make_rng(seed))
        bad += model.params_from_json(model.params_to_json(theta)) != theta
    return Check("serialization_roundtrip", bad, 0, bad == 0)


ALL_CHECKS = [
    check_fd_gradient, check_fd_hessian_trace, check_regular_rep_fit,
    check_regular_rep_flatness, check_gauge_forward, check_gauge_flatness,
    check_scaling_gauge, check_isotopy_oracle, check_isotopy_roundtrip,
    check_svd, check_full_rank, check_nuclear_variational,
    check_decode_regular_rep, check_serialization,
]


def run_all():
    return [check() for check in ALL_CHECKS]
