import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cayleyflat.algebra import cyclic_group
from cayleyflat.baseline import (
    MCFactors, balanced_factors, encode_table, mc_decode, mc_train, nuclear_norm,
    observed_mask, separation_rows,
)
from cayleyflat.engine import TrainConfig
from cayleyflat.model import ObservationSet
from cayleyflat.numerics import make_rng

MC_CFG = TrainConfig(steps_max=5000)


class TestEncoding:
    def test_ordinal(self):
        t = cyclic_group(3)
        assert np.array_equal(encode_table(t, "ordinal"), t.cells.astype(float))

    def test_onehot(self):
        M = encode_table(cyclic_group(3), "onehot")
        assert M.shape == (9, 3)
        assert np.array_equal(M.sum(axis=1), np.ones(9))
        assert M[1 * 3 + 2, 0] == 1

    def test_unknown(self):
        with pytest.raises(ValueError):
            encode_table(cyclic_group(3), "binary")

    def test_onehot_mask_covers_whole_rows(self):
        W = observed_mask(ObservationSet(3, [(0, 1)]), "onehot")
        assert W.shape == (9, 3) and W[1].tolist() == [1, 1, 1] and W.sum() == 3


def low_rank_problem(rows, cols, r, seed, frac=0.5):
    rng = make_rng(seed)
    M = rng.standard_normal((rows, r)) @ rng.standard_normal((cols, r)).T
    W = (rng.random((rows, cols)) < frac).astype(float)
    return M, W


@pytest.mark.parametrize("rows,r", [(16, 1), (20, 2)])
def test_completes_low_rank_matrices(rows, r):
    ok = 0
    for seed in range(10):
        M, W = low_rank_problem(rows, rows, r, seed)
        f = mc_train(M, W, r, 0.0, MC_CFG, seed)
        err = np.abs(f.product - M)[W == 0].max()
        ok += err < 1e-3 * np.abs(M).max()
    assert ok >= 9


def test_fits_observed_entries():
    M, W = low_rank_problem(10, 10, 2, 3, frac=0.7)
    f = mc_train(M, W, 2, 0.0, MC_CFG, 0)
    assert np.abs(W * (f.product - M)).max() < 1e-4


def test_deterministic():
    t = cyclic_group(5)
    omega = ObservationSet.full(5)
    cfg = TrainConfig(steps_max=200)
    a = mc_train(t, omega, 2, 1e-3, cfg, 4, encoding="onehot")
    b = mc_train(t, omega, 2, 1e-3, cfg, 4, encoding="onehot")
    assert np.array_equal(a.U, b.U) and np.array_equal(a.V, b.V)


def test_rejects_bad_args():
    M, W = low_rank_problem(4, 4, 1, 0)
    with pytest.raises(ValueError):
        mc_train(M, W, 0, 0.0)
    with pytest.raises(ValueError):
        mc_train(M, W, 1, -1.0)


class TestDecode:
    def test_zero_factors(self):
        z = MCFactors("ordinal", 4, 2, np.zeros((4, 2)), np.zeros((4, 2)))
        assert mc_decode(z).cells.tolist() == [[0] * 4] * 4
        z = MCFactors("onehot", 4, 2, np.zeros((16, 2)), np.zeros((4, 2)))
        assert (mc_decode(z).cells == 0).all()

    def test_exact_factors(self):
        t = cyclic_group(5)
        for enc in ("ordinal", "onehot"):
            U, V = balanced_factors(encode_table(t, enc))
            assert mc_decode(MCFactors(enc, 5, U.shape[1], U, V)) == t

    def test_shape_check(self):
        with pytest.raises(ValueError):
            MCFactors("onehot", 4, 2, np.zeros((4, 2)), np.zeros((4, 2)))


class TestNuclearNorm:
    def test_examples(self):
        assert nuclear_norm(np.eye(3)) == pytest.approx(3)
        assert nuclear_norm(np.zeros((2, 4))) == 0
        assert nuclear_norm(np.diag([2.0, -5.0])) == pytest.approx(7)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.integers(1, 6), st.integers(1, 6), st.integers(1, 6))
    def test_variational_inequality(self, seed, rows, cols, r):
        rng = make_rng(seed)
        U, V = rng.standard_normal((rows, r)), rng.standard_normal((cols, r))
        slack = (U ** 2).sum() + (V ** 2).sum() - 2 * nuclear_norm(U @ V.T)
        assert slack >= -1e-8

    @pytest.mark.parametrize("seed", range(10))
    def test_balanced_factors_attain(self, seed):
        rng = make_rng(seed)
        M = rng.standard_normal((5, 3)) @ rng.standard_normal((3, 6))
        U, V = balanced_factors(M)
        assert np.allclose(U @ V.T, M, atol=1e-12)
        assert abs((U ** 2).sum() + (V ** 2).sum() - 2 * nuclear_norm(M)) <= 1e-8


def test_separation_rows_grid():
    rows = separation_rows("Z4", cyclic_group(4), 8, 2, TrainConfig(steps_max=50))
    assert len(rows) == 2 * 2 * 2
    assert {(r["encoding"], r["r"]) for r in rows} == {(e, k) for e in ("ordinal", "onehot") for k in (2, 4)}
    assert all(r["method"] == "mc" and r["m"] == 8 for r in rows)


def test_full_rank_budget_interpolates():
    t = cyclic_group(5)
    f = mc_train(t, ObservationSet.full(5), 5, 0.0, MC_CFG, 0, encoding="ordinal")
    assert np.abs(f.product - t.cells).max() < 1e-4
    assert mc_decode(f) == t


def test_rank_one_nuclear_norm():
    rng = make_rng(6)
    u, v = rng.standard_normal(5), rng.standard_normal(4)
    assert nuclear_norm(np.outer(u, v)) == pytest.approx(np.linalg.norm(u) * np.linalg.norm(v), rel=1e-12)
