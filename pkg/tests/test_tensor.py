import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cica.errors import DimensionError
from cica.tensor import (DiagonalTensor4, SymmetricTensor4, dematricize, devectorize, estimate_cumulant,
                         matricize, multilinear_transform, multiplicities, n_unique, pair_product,
                         vectorize)

from conftest import random_member, random_orth, random_symmetric


def dense_cumulant(X):
    """Oracle: the cumulant formula evaluated on full n^4 arrays with einsum."""
    X = X - X.mean(axis=0)
    N = len(X)
    m4 = np.einsum("ti,tj,tk,tl->ijkl", X, X, X, X) / N
    C = X.T @ X / N
    return (m4 - np.einsum("ij,kl->ijkl", C, C) - np.einsum("ik,jl->ijkl", C, C)
            - np.einsum("il,jk->ijkl", C, C))


def dense_transform(T, Q):
    return np.einsum("abcd,ia,jb,kc,ld->ijkl", T, Q, Q, Q, Q)


@pytest.mark.parametrize("n, p", [(1, 1), (2, 5), (3, 15), (4, 35), (6, 126), (8, 330), (10, 715)])
def test_unique_count(n, p):
    assert n_unique(n) == p


def test_multiplicities_sum_to_full_size():
    for n in range(1, 7):
        assert multiplicities(n).sum() == n**4


def test_permuted_probes_share_one_value(rng):
    Z = random_symmetric(4, rng)
    full = Z.to_full()
    for _ in range(100):
        idx = tuple(rng.integers(0, 4, 4))
        for perm in itertools.permutations(idx):
            assert full[perm] == full[idx] == Z[perm]


def test_weighted_norm_matches_full_norm(rng):
    Z = random_symmetric(5, rng)
    assert np.isclose(Z.frobenius_norm(), np.linalg.norm(Z.to_full()), rtol=1e-13)


def test_from_full_symmetrize_is_orbit_average():
    T = np.zeros((2,) * 4)
    T[0, 0, 0, 1] = 1.0
    Z = SymmetricTensor4.from_full(T)
    for perm in set(itertools.permutations((0, 0, 0, 1))):
        assert Z.to_full()[perm] == 0.25


def test_wrong_value_count_rejected():
    with pytest.raises(DimensionError):
        SymmetricTensor4(3, np.zeros(14))


def test_values_are_read_only(rng):
    Z = random_symmetric(3, rng)
    with pytest.raises(ValueError):
        Z.values[0] = 1.0


# multilinear transform


def test_identity_transform(rng):
    Z = random_symmetric(3, rng)
    assert np.allclose(multilinear_transform(Z, np.eye(3)).values, Z.values, atol=1e-14)


def test_permutation_of_diagonal():
    kappa = np.array([1.0, 2.0, 3.0])
    Pm = np.eye(3)[:, [2, 0, 1]]
    out = multilinear_transform(DiagonalTensor4(kappa), Pm)
    assert np.allclose(out.diagonal(), Pm @ kappa)
    assert np.isclose(out.frobenius_norm(), np.linalg.norm(kappa))


def test_rotation_by_45_degrees():
    c = np.cos(np.pi / 4)
    Q = np.array([[c, -c], [c, c]])
    out = multilinear_transform(DiagonalTensor4([3.0, 3.0]), Q)
    assert np.isclose(out[0, 0, 0, 0], 1.5, atol=1e-14)


def test_transform_matches_dense_oracle(rng):
    Z = random_symmetric(3, rng)
    Q = rng.standard_normal((4, 3))
    out = multilinear_transform(Z, Q)
    assert out.n == 4
    assert np.allclose(out.to_full(), dense_transform(Z.to_full(), Q), atol=1e-12)
    S = DiagonalTensor4(rng.standard_normal(3))
    assert np.allclose(multilinear_transform(S, Q).to_full(),
                       dense_transform(S.to_symmetric().to_full(), Q), atol=1e-12)


def test_orthogonal_invariance(rng):
    for _ in range(20):
        Z = random_symmetric(4, rng)
        Q = random_orth(4, rng)
        assert np.isclose(multilinear_transform(Z, Q).frobenius_norm(), Z.frobenius_norm(), rtol=1e-10)


def test_transform_dimension_mismatch(rng):
    with pytest.raises(DimensionError):
        multilinear_transform(random_symmetric(3, rng), np.eye(4))


# cumulant estimation


def test_zero_data_gives_zero_tensor():
    assert estimate_cumulant(np.zeros((10, 3))).frobenius_norm() == 0.0


def test_cumulant_matches_dense_oracle(rng):
    X = rng.standard_normal((300, 3)) ** 3
    assert np.allclose(estimate_cumulant(X).to_full(), dense_cumulant(X), atol=1e-12)


def test_gaussian_cumulant_vanishes(rng):
    N = 100_000
    Z = estimate_cumulant(rng.standard_normal((N, 3)))
    assert np.abs(Z.values).max() <= 10 / np.sqrt(N)


def test_laplace_cumulant(rng):
    X = rng.laplace(0, 1 / np.sqrt(2), (100_000, 2))
    Z = estimate_cumulant(X)
    assert np.allclose(Z.diagonal(), 3.0, atol=0.2)
    off = np.delete(Z.values, [0, Z.p - 1])
    assert np.abs(off).max() <= 0.1


def test_cumulant_input_checks():
    with pytest.raises(ValueError):
        estimate_cumulant(np.ones((1, 3)))
    with pytest.raises(ValueError):
        estimate_cumulant(np.array([[0.0, np.nan], [1.0, 2.0]]))


def test_estimator_error_decays_at_root_n():
    rng = np.random.default_rng(3)
    Ns = [1000, 10_000, 100_000]
    errs = []
    for N in Ns:
        e = []
        for _ in range(20):
            X = rng.laplace(0, 1 / np.sqrt(2), (N, 2))
            e.append((estimate_cumulant(X) - DiagonalTensor4([3.0, 3.0]).to_symmetric()).frobenius_norm())
        errs.append(np.mean(e))
    slope = np.polyfit(np.log(Ns), np.log(errs), 1)[0]
    assert -0.65 <= slope <= -0.35


def test_pair_product_of_identity():
    P = pair_product(np.eye(2))
    assert P[0, 0, 0, 0] == 3.0 and P[0, 0, 1, 1] == 1.0 and P[0, 0, 0, 1] == 0.0


# vectorize / matricize


def test_vectorize_small_cases():
    assert vectorize(SymmetricTensor4.zeros(2)).shape == (5,)
    assert not vectorize(SymmetricTensor4.zeros(2)).any()


@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_vectorize_is_isometry(n, seed):
    rng = np.random.default_rng(seed)
    A, B = random_symmetric(n, rng), random_symmetric(n, rng)
    va, vb = vectorize(A), vectorize(B)
    assert np.isclose(np.linalg.norm(va), np.linalg.norm(A.to_full()), rtol=1e-12)
    assert np.isclose(va @ vb, np.sum(A.to_full() * B.to_full()), atol=1e-10 * (1 + abs(va @ vb)))
    assert np.array_equal(devectorize(va, n).values, A.values) or np.allclose(
        devectorize(va, n).values, A.values, rtol=1e-15, atol=0)


def test_devectorize_length_check():
    with pytest.raises(DimensionError):
        devectorize(np.zeros(6), 2)


def test_matricize_layout(rng):
    Z = random_symmetric(3, rng)
    M = matricize(Z)
    assert M.shape == (9, 9)
    assert np.allclose(M, M.T)
    for i, j, k, l in itertools.product(range(3), repeat=4):
        assert M[i * 3 + j, k * 3 + l] == Z[i, j, k, l]
    assert np.array_equal(dematricize(M, 3), Z.to_full())


def test_matricize_diagonal_model_member():
    kappa = np.array([2.0, -1.0, 0.5])
    M = matricize(DiagonalTensor4(kappa).to_symmetric())
    expected = np.zeros((9, 9))
    for i in range(3):
        expected[i * 3 + i, i * 3 + i] = kappa[i]
    assert np.array_equal(M, expected)


def test_model_member_matricization_has_rank_n(rng):
    Z, _, _ = random_member(3, rng)
    s = np.linalg.svd(matricize(Z), compute_uv=False)
    assert np.sum(s > 1e-10) == 3
