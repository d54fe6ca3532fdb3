import numpy as np
import pytest

from oats.linalg import SvdTruncation, frob_norm_sq, randomized_svd, reconstruct, truncated_svd

from oracles import jacobi_svd


def test_diag_dominant_axis():
    t = truncated_svd(np.diag([3.0, 1.0]).astype(np.float32), 1)
    assert np.allclose(t.singular_values, [3.0])
    assert np.allclose(reconstruct(t), np.diag([3.0, 0.0]))


def test_rank_one_input_exact(rng):
    u, v = rng.standard_normal(7), rng.standard_normal(5)
    A = np.outer(u, v).astype(np.float32)
    R = reconstruct(truncated_svd(A, 1))
    assert np.linalg.norm(R - A) <= 1e-5 * np.linalg.norm(A)


def test_discarded_energy_matches_jacobi(rng):
    A = rng.standard_normal((8, 6)).astype(np.float32)
    _, s, _ = jacobi_svd(A)
    err = frob_norm_sq(A - reconstruct(truncated_svd(A, 3)))
    expected = float(np.sum(s[3:] ** 2))
    assert abs(err - expected) <= 1e-4 * expected


def test_best_rank3_matches_oracle_reconstruction(rng):
    A = rng.standard_normal((8, 6))
    U, s, Vt = jacobi_svd(A)
    oracle = (U[:, :3] * s[:3]) @ Vt[:3]
    R = reconstruct(truncated_svd(A.astype(np.float32), 3))
    assert np.linalg.norm(R - oracle) <= 1e-4 * np.linalg.norm(oracle)


def test_rank_zero_is_zero_matrix(rng):
    A = rng.standard_normal((4, 9)).astype(np.float32)
    t = truncated_svd(A, 0)
    assert t.rank == 0
    assert t.U.shape == (4, 0) and t.Vt.shape == (0, 9)
    assert np.array_equal(reconstruct(t), np.zeros((4, 9)))
    assert np.array_equal(reconstruct(SvdTruncation.zeros(3, 2)), np.zeros((3, 2)))


def test_full_rank_truncation_reconstructs():
    R = reconstruct(truncated_svd(np.diag([3.0, 1.0]), 2))
    assert np.allclose(R, np.diag([3.0, 1.0]), atol=1e-5)


def test_full_rank_well_conditioned(rng):
    Q1, _ = np.linalg.qr(rng.standard_normal((10, 10)))
    Q2, _ = np.linalg.qr(rng.standard_normal((7, 7)))
    A = (Q1[:, :7] * np.linspace(1, 3, 7)) @ Q2
    R = reconstruct(truncated_svd(A.astype(np.float32), 7))
    assert np.linalg.norm(R - A) <= 1e-4 * np.linalg.norm(A)


def test_error_monotone_in_rank(rng):
    A = rng.standard_normal((12, 9)).astype(np.float32)
    errs = [frob_norm_sq(A - reconstruct(truncated_svd(A, r))) for r in range(10)]
    assert all(b <= a + 1e-9 for a, b in zip(errs, errs[1:]))


@pytest.mark.parametrize("shape", [(20, 8), (8, 20), (16, 16)])
def test_orthonormal_factors_and_ordering(rng, shape):
    A = rng.standard_normal(shape).astype(np.float32)
    t = truncated_svd(A, 5)
    assert np.abs(t.U.T @ t.U - np.eye(5)).max() <= 1e-4
    assert np.abs(t.Vt @ t.Vt.T - np.eye(5)).max() <= 1e-4
    assert np.all(np.diff(t.singular_values) <= 0) and np.all(t.singular_values >= 0)


def test_sign_convention(rng):
    A = rng.standard_normal((6, 6)).astype(np.float32)
    t = truncated_svd(A, 4)
    for j in range(4):
        col = t.U[:, j]
        assert col[np.flatnonzero(col)[0]] >= 0
    t2 = truncated_svd(-A, 4)
    assert np.allclose(reconstruct(t2), -reconstruct(t), atol=1e-5)


def test_deterministic(rng):
    A = rng.standard_normal((9, 7)).astype(np.float32)
    a, b = truncated_svd(A, 3), truncated_svd(A.copy(), 3)
    assert np.array_equal(a.U, b.U) and np.array_equal(a.Vt, b.Vt)


def test_randomized_close_to_exact_on_decaying_spectrum(rng):
    Q1, _ = np.linalg.qr(rng.standard_normal((200, 200)))
    Q2, _ = np.linalg.qr(rng.standard_normal((150, 150)))
    s = 2.0 ** -np.arange(150)
    A = (Q1[:, :150] * s) @ Q2
    _, sv, _ = randomized_svd(A, 5, rng=np.random.default_rng(0))
    assert np.allclose(sv, s[:5], rtol=1e-6)
    t2 = truncated_svd(A, 5, method="randomized", rng=np.random.default_rng(0))
    assert np.linalg.norm(reconstruct(t2) - (Q1[:, :5] * s[:5]) @ Q2[:5]) < 1e-4


@pytest.mark.parametrize("r", [-1, 7])
def test_rank_out_of_range(rng, r):
    with pytest.raises(ValueError):
        truncated_svd(rng.standard_normal((6, 4)), r)


def test_non_finite_rejected():
    A = np.ones((3, 3))
    A[1, 1] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        truncated_svd(A, 1)


def test_unknown_method(rng):
    with pytest.raises(ValueError):
        truncated_svd(rng.standard_normal((3, 3)), 1, method="lanczos")


def test_frob_norm_sq():
    assert frob_norm_sq(np.zeros((3, 3))) == 0.0
    assert frob_norm_sq(np.array([[3.0, 4.0]])) == 25.0


def test_frob_norm_sq_matches_f64_oracle(rng):
    A = rng.standard_normal((50, 40)).astype(np.float32)
    oracle = sum(float(x) * float(x) for x in A.ravel())
    assert abs(frob_norm_sq(A) - oracle) <= 1e-6 * oracle
