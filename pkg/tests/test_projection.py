import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cica.evalsynth import amari_error
from cica.projection import (_pair_contrast, givens_diagonalize, project_model_set, project_rank,
                             project_symmetric, proxy_project)
from cica.tensor import DiagonalTensor4, SymmetricTensor4, matricize, multilinear_transform

from conftest import random_member, random_orth, random_symmetric


def dense_rank_oracle(Z, n):
    """Best rank-n approximation by SVD of the matricization, truncated by magnitude."""
    M = matricize(Z)
    U, s, Vt = np.linalg.svd(M)
    return ((U[:, :n] * s[:n]) @ Vt[:n]).reshape((n,) * 4)


def perturbed(n, rng, scale):
    Z, S, Q = random_member(n, rng)
    E = random_symmetric(n, rng)
    return Z + E * (scale / E.frobenius_norm()), S, Q


# rank projection


def test_rank_projection_fixes_members(rng):
    Z, _, _ = random_member(4, rng)
    assert np.allclose(project_rank(Z), Z.to_full(), atol=1e-10)


def test_rank_projection_is_idempotent(rng):
    once = project_rank(random_symmetric(3, rng))
    assert np.allclose(project_rank(once), once, atol=1e-10)


def test_rank_projection_matches_svd_oracle():
    rng = np.random.default_rng(7)
    Z = random_symmetric(2, rng)
    P = project_rank(Z)
    assert np.allclose(P, dense_rank_oracle(Z, 2), atol=1e-10)
    dist = np.linalg.norm(Z.to_full() - P)
    for _ in range(100):
        Y = rng.standard_normal((4, 2)) @ rng.standard_normal((2, 4))
        assert dist <= np.linalg.norm(Z.to_full() - Y.reshape((2,) * 4)) + 1e-12


def test_rank_projection_keeps_negative_eigenvalues():
    Z = DiagonalTensor4([-2.0, 1.0, -0.5]).to_symmetric()
    assert np.allclose(project_rank(Z), Z.to_full(), atol=1e-12)


# symmetric projection


def test_symmetric_projection_fixes_symmetric(rng):
    Z = random_symmetric(3, rng)
    assert np.allclose(project_symmetric(Z.to_full()).values, Z.values, atol=1e-14)


def test_symmetric_projection_averages():
    T = np.zeros((2,) * 4)
    T[0, 0, 0, 1] = 1.0
    out = project_symmetric(T).to_full()
    for perm in set(itertools.permutations((0, 0, 0, 1))):
        assert out[perm] == 0.25


def test_symmetric_projection_residual_is_orthogonal(rng):
    T = rng.standard_normal((3,) * 4)
    P = project_symmetric(T).to_full()
    assert abs(np.sum((T - P) * P)) <= 1e-10


@given(st.integers(0, 2**32 - 1))
def test_projections_are_non_expansive(seed):
    rng = np.random.default_rng(seed)
    Z1, _, _ = perturbed(3, rng, 0.1)
    Z2 = Z1 + random_symmetric(3, rng) * 0.05
    d = (Z1 - Z2).frobenius_norm()
    assert np.linalg.norm(project_rank(Z1) - project_rank(Z2)) <= d + 1e-10
    T1 = rng.standard_normal((3,) * 4)
    T2 = T1 + 0.1 * rng.standard_normal((3,) * 4)
    diff = (project_symmetric(T1) - project_symmetric(T2)).frobenius_norm()
    assert diff <= np.linalg.norm(T1 - T2) + 1e-10


# alternating projection


def test_model_set_projection_fixed_point(rng):
    Z, _, _ = random_member(3, rng)
    res = project_model_set(Z)
    assert res.iterations == 1 and res.converged
    assert (res.tensor - Z).frobenius_norm() <= 1e-10


def test_model_set_projection_converges_fast(rng):
    Z, _, _ = perturbed(4, rng, 1e-3)
    res = project_model_set(Z, tol=1e-8)
    assert res.converged and res.iterations <= 10


def test_model_set_projection_output_in_intersection(rng):
    Z, _, _ = perturbed(3, rng, 0.05)
    out = project_model_set(Z, tol=1e-12, max_iter=200).tensor
    s = np.linalg.svd(matricize(out), compute_uv=False)
    assert np.all(s[3:] <= 1e-8 * s[0])


def test_alternating_scheme_descends(rng):
    Z, _, _ = perturbed(3, rng, 0.3)
    cur = Z
    d_rank, d_sym = [], []
    for _ in range(8):
        R = project_rank(cur)
        d_rank.append(np.linalg.norm(cur.to_full() - R))
        cur = project_symmetric(R)
        d_sym.append(np.linalg.norm(R - cur.to_full()))
    assert all(b <= a + 1e-12 for a, b in zip(d_rank, d_rank[1:]))
    assert all(b <= a + 1e-12 for a, b in zip(d_sym, d_sym[1:]))


def test_model_set_projection_flags(rng):
    res = project_model_set(SymmetricTensor4.zeros(3))
    assert res.degenerate and res.tensor.frobenius_norm() == 0
    res = project_model_set(random_symmetric(3, rng), max_iter=1, tol=1e-15)
    assert not res.converged and res.iterations == 1
    with pytest.raises(ValueError):
        project_model_set(random_symmetric(3, rng), tol=0)


# Givens proxy


def test_pair_contrast_is_pi_over_two_periodic(rng):
    a = rng.standard_normal(5)
    t = rng.uniform(-np.pi, np.pi, 20)
    assert np.allclose(_pair_contrast(*a, t), _pair_contrast(*a, t + np.pi / 2), atol=1e-12)


def test_proxy_on_diagonal_is_identity():
    kappa = np.array([3.0, -1.2, 0.8])
    res = proxy_project(DiagonalTensor4(kappa).to_symmetric())
    assert np.allclose(np.abs(res.Q), np.eye(3), atol=1e-12)
    assert np.allclose(res.S.kappa, kappa, atol=1e-12)


@pytest.mark.parametrize("n", [2, 3, 4, 6])
def test_proxy_recovers_exact_member(n, rng):
    for _ in range(5):
        Z, S, Q = random_member(n, rng)
        res = proxy_project(Z)
        assert amari_error(Q, res.Q) <= 1e-8
        assert (res.tensor - Z).frobenius_norm() <= 1e-8 * Z.frobenius_norm()
        assert np.allclose(np.sort(res.S.kappa), np.sort(S.kappa), atol=1e-8)


def test_proxy_close_to_alternating_projection(rng):
    for _ in range(10):
        Z, _, _ = perturbed(3, rng, 1e-2)
        proxy = proxy_project(Z).tensor
        alt = project_model_set(Z, tol=1e-12, max_iter=200).tensor
        assert (proxy - Z).frobenius_norm() <= (alt - Z).frobenius_norm() + 1e-2


@pytest.mark.parametrize("n", [2, 3, 4])
def test_proxy_and_alternating_agree_near_model_set(n, rng):
    for _ in range(5):
        Z, _, _ = perturbed(n, rng, 1e-2)
        Q_proxy = proxy_project(Z).Q
        alt = project_model_set(Z, tol=1e-12, max_iter=500).tensor
        Q_alt = proxy_project(alt).Q
        assert amari_error(Q_alt, Q_proxy) <= 1e-3


def test_proxy_degenerate_input():
    res = proxy_project(SymmetricTensor4.zeros(3))
    assert np.array_equal(res.Q, np.eye(3))
    assert not res.S.kappa.any() and res.below_floor


def test_givens_output_reconstructs(rng):
    Z, _, _ = perturbed(4, rng, 0.2)
    Q, R, sweeps = givens_diagonalize(Z.to_full())
    assert np.allclose(Q.T @ Q, np.eye(4), atol=1e-12)
    back = np.einsum("abcd,ia,jb,kc,ld->ijkl", R, Q, Q, Q, Q)
    assert np.allclose(back, Z.to_full(), atol=1e-10)
    assert 1 <= sweeps <= 50
    idx = np.arange(4)
    assert np.sum(R[idx, idx, idx, idx] ** 2) >= np.sum(Z.diagonal() ** 2)


def test_warm_start_from_solution(rng):
    Z, _, Q = random_member(4, rng)
    Q1, _, sweeps = givens_diagonalize(Z.to_full(), Q0=Q)
    assert sweeps == 1
    assert amari_error(Q, Q1) <= 1e-10
