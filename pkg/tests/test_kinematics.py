import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from draction.kinematics import (SparseWeights, blend, blend_sparse, deform, deform_backward, joint_transforms,
                                 mat_to_quat, project_so3, project_so3_backward, quat_to_mat,
                                 quat_to_mat_backward, svd3)

from conftest import random_rotations


def fd_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        old = x.flat[i]
        x.flat[i] = old + h
        a = f(x)
        x.flat[i] = old - h
        b = f(x)
        x.flat[i] = old
        g.flat[i] = (a - b) / (2 * h)
    return g


# ---------------------------------------------------------------- quaternions

def test_quat_identity_and_axis():
    assert np.array_equal(quat_to_mat(np.array([1.0, 0, 0, 0])), np.eye(3))
    c, s = math.cos(math.pi / 4), math.sin(math.pi / 4)
    R = quat_to_mat(np.array([c, 0, 0, s]))  # 90 deg about z
    np.testing.assert_allclose(R @ [1, 0, 0], [0, 1, 0], atol=1e-15)


def test_quat_renormalises_and_rejects_zero():
    q = np.array([2.0, 0, 0, 0])
    np.testing.assert_allclose(quat_to_mat(q), np.eye(3))
    with pytest.raises(ValueError):
        quat_to_mat(np.zeros(4))


def test_quat_roundtrip(rng):
    R = random_rotations(rng, 50)
    np.testing.assert_allclose(quat_to_mat(mat_to_quat(R)), R, atol=1e-12)


def test_quat_to_mat_backward_fd(rng):
    q = rng.normal(size=(3, 4))
    G = rng.normal(size=(3, 3, 3))
    num = fd_grad(lambda x: np.sum(G * quat_to_mat(x)), q)
    np.testing.assert_allclose(quat_to_mat_backward(q, G), num, rtol=1e-6, atol=1e-8)


# ---------------------------------------------------------------- SVD / polar

def test_svd3_reconstructs(rng):
    M = rng.normal(size=(200, 3, 3))
    U, S, V = svd3(M)
    np.testing.assert_allclose(U @ (S[..., None] * np.swapaxes(V, -1, -2)), M, atol=1e-12)
    np.testing.assert_allclose(S, np.linalg.svd(M, compute_uv=False), atol=1e-12)
    np.testing.assert_allclose(np.swapaxes(U, -1, -2) @ U, np.broadcast_to(np.eye(3), U.shape), atol=1e-12)


def test_svd3_rank_deficient():
    M = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 0.0]])
    U, S, V = svd3(M)
    np.testing.assert_allclose(U @ np.diag(S) @ V.T, M, atol=1e-12)
    np.testing.assert_allclose(U.T @ U, np.eye(3), atol=1e-12)


def test_project_so3_45_degrees():
    A = 0.5 * (np.eye(3) + np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]]))
    A[2, 2] = 1.0
    c = math.sqrt(0.5)
    expected = np.array([[c, -c, 0.0], [c, c, 0.0], [0.0, 0.0, 1.0]])
    assert np.max(np.abs(project_so3(A) - expected)) <= 1e-10


def test_project_so3_reflection_fixed():
    R = project_so3(np.diag([1.0, 1.0, -1.0]))
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


def test_project_so3_zero_matrix_is_a_rotation():
    R = project_so3(np.zeros((3, 3)))
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 3), elements=st.floats(-3, 3)))
def test_project_so3_is_rotation_property(M):
    R = project_so3(M)
    assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-10
    assert abs(np.linalg.det(R) - 1) < 1e-10


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_project_so3_fixes_rotations(seed):
    R = random_rotations(np.random.default_rng(seed), 1)[0]
    np.testing.assert_allclose(project_so3(R), R, atol=1e-12)


def test_project_so3_backward_fd(rng):
    A = rng.normal(size=(4, 3, 3))
    G = rng.normal(size=(4, 3, 3))
    _, f = project_so3(A, return_factors=True)
    num = fd_grad(lambda x: np.sum(G * project_so3(x)), A)
    np.testing.assert_allclose(project_so3_backward(f, G), num, rtol=1e-5, atol=1e-7)


def test_project_so3_backward_repeated_singular_values_finite():
    # blend of two rotations with equal weights has repeated singular values
    A = np.eye(3) * 0.7
    _, f = project_so3(A, return_factors=True)
    g = project_so3_backward(f, np.ones((3, 3)))
    assert np.all(np.isfinite(g))


def test_project_so3_backward_near_degenerate_stays_finite():
    A = np.diag([1.0, 1e-9, -1e-9])
    _, f = project_so3(A, return_factors=True)
    g = project_so3_backward(f, np.arange(9.0).reshape(3, 3))
    assert np.all(np.isfinite(g))


# ---------------------------------------------------------------- blending

def test_joint_transforms_relative_rest_is_identity(rng):
    R = random_rotations(rng, 5)
    j = rng.normal(size=(5, 3))
    tr = joint_transforms(j, j, R, R)
    np.testing.assert_allclose(tr.rotations, np.broadcast_to(np.eye(3), (5, 3, 3)), atol=1e-12)
    assert np.all(tr.translations == 0)


def test_translation_only_identity():
    tr = joint_transforms(np.ones((4, 3)), np.zeros((4, 3)))
    assert not tr.has_rotations
    assert np.array_equal(tr.rotations, np.broadcast_to(np.eye(3), (4, 3, 3)))


def _logits(K, J, rng):
    L = np.full((K, J), -10.0)
    for k in range(K):
        a, b = rng.choice(J, 2, replace=False)
        if k % 3 == 0:
            L[k, a] = 10.0
        else:
            alpha = rng.uniform(0.05, 0.95)
            L[k, a] = math.log(1 - alpha) + 10
            L[k, b] = math.log(alpha) + 10
    return L


def test_sparse_matches_dense(rng):
    L = _logits(40, 7, rng)
    from draction.kinematics import softmax

    W = softmax(L)
    tr = joint_transforms(rng.normal(size=(7, 3)), rng.normal(size=(7, 3)), random_rotations(rng, 7))
    td, Rd = blend(W, tr)
    ts, Rs = blend_sparse(SparseWeights.from_logits(L), tr)
    assert np.max(np.abs(td - ts)) <= 1e-9
    assert np.max(np.abs(Rd - Rs)) <= 1e-9


def test_sparse_two_joint_topology():
    L = np.array([[10.0, -10.0], [math.log(0.5) + 10, math.log(0.5) + 10]])
    sw = SparseWeights.from_logits(L)
    from draction.kinematics import softmax

    v = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    np.testing.assert_allclose(sw.apply(v), softmax(L) @ v, atol=1e-15)


def test_sparse_rejects_three_distinct_logits():
    with pytest.raises(ValueError):
        SparseWeights.from_logits(np.array([[3.0, 2.0, 1.0, 0.0]]))


# ---------------------------------------------------------------- deformation

def test_deform_identity_keeps_canonical(rng):
    K = 6
    mu_c = rng.normal(size=(K, 3))
    s = rng.uniform(0.1, 1, size=(K, 3))
    R_c = random_rotations(rng, K)
    I = np.broadcast_to(np.eye(3), (K, 3, 3))
    posed = deform(mu_c, s, R_c, np.zeros((K, 3)), I, pivot=rng.normal(size=(K, 3)))
    np.testing.assert_allclose(posed.mu, mu_c, atol=1e-15)
    np.testing.assert_allclose(posed.sigma, R_c @ (s[:, :, None] ** 2 * np.swapaxes(R_c, -1, -2)), atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_covariance_symmetric_with_scale_spectrum(seed):
    rng = np.random.default_rng(seed)
    K = 5
    s = rng.uniform(0.01, 0.2, size=(K, 3))
    posed = deform(rng.normal(size=(K, 3)), s, random_rotations(rng, K), rng.normal(size=(K, 3)),
                   random_rotations(rng, K))
    S = posed.sigma
    assert np.max(np.abs(S - np.swapaxes(S, -1, -2))) <= 1e-10
    np.testing.assert_allclose(np.linalg.eigvalsh(S), np.sort(s ** 2, axis=1), atol=1e-9)


def test_deform_backward_fd(rng):
    K = 4
    mu_c = rng.normal(size=(K, 3))
    pivot = rng.normal(size=(K, 3))
    s = rng.uniform(0.2, 1.0, size=(K, 3))
    R_c = random_rotations(rng, K)
    R_b = random_rotations(rng, K)
    t = rng.normal(size=(K, 3))
    Gm = rng.normal(size=(K, 3))
    Gs = rng.normal(size=(K, 3, 3))

    def loss(s_, R_c_, R_b_, t_):
        p = deform(mu_c, s_, R_c_, t_, R_b_, pivot)
        return np.sum(Gm * p.mu) + np.sum(Gs * p.sigma)

    posed = deform(mu_c, s, R_c, t, R_b, pivot)
    ds, dRc, dRb, dt = deform_backward(mu_c, s, R_c, posed, Gm, Gs, pivot)
    np.testing.assert_allclose(ds, fd_grad(lambda x: loss(x, R_c, R_b, t), s.copy()), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(dRc, fd_grad(lambda x: loss(s, x, R_b, t), R_c.copy()), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(dRb, fd_grad(lambda x: loss(s, R_c, x, t), R_b.copy()), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(dt, fd_grad(lambda x: loss(s, R_c, R_b, x), t.copy()), rtol=1e-6, atol=1e-8)
