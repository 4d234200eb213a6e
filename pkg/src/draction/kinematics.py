"""Linear blend skinning of Gaussian primitives.

Per-joint rigid transforms are blended with fixed skinning weights, the
blended rotation is pulled back onto SO(3) with an SVD polar projection, and
each canonical Gaussian is moved and re-oriented. Every forward function that
sits on a learnable path has a matching ``*_backward`` that returns the
vector-Jacobian product.

All functions are batched over leading axes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SINGULAR_FLOOR = 1e-9
DENOM_GUARD = 1e-6


# --------------------------------------------------------------------------
# quaternions

def quat_to_mat(q):
    """(..., 4) quaternions (w, x, y, z) -> (..., 3, 3) rotation matrices.

    Inputs are renormalized; a zero quaternion raises ``ValueError``.
    """
    q = np.asarray(q)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise ValueError("zero quaternion has no rotation")
    w, x, y, z = np.moveaxis(q / norm, -1, 0)
    R = np.empty(q.shape[:-1] + (3, 3), dtype=np.result_type(q.dtype, np.float32))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def quat_to_mat_backward(q, dR):
    """Gradient of ``sum(dR * quat_to_mat(q))`` with respect to the unnormalized ``q``."""
    q = np.asarray(q)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    u = q / norm
    w, x, y, z = np.moveaxis(u, -1, 0)
    G = dR
    g00, g01, g02 = G[..., 0, 0], G[..., 0, 1], G[..., 0, 2]
    g10, g11, g12 = G[..., 1, 0], G[..., 1, 1], G[..., 1, 2]
    g20, g21, g22 = G[..., 2, 0], G[..., 2, 1], G[..., 2, 2]
    dw = 2 * (-z * g01 + y * g02 + z * g10 - x * g12 - y * g20 + x * g21)
    dx = 2 * (y * g01 + z * g02 + y * g10 - 2 * x * g11 - w * g12 + z * g20 + w * g21 - 2 * x * g22)
    dy = 2 * (-2 * y * g00 + x * g01 + w * g02 + x * g10 + z * g12 - w * g20 + z * g21 - 2 * y * g22)
    dz = 2 * (-2 * z * g00 - w * g01 + x * g02 + w * g10 - 2 * z * g11 + y * g12 + x * g20 + y * g21)
    du = np.stack([dw, dx, dy, dz], axis=-1)
    # project out the radial component of the normalization
    return (du - u * np.sum(u * du, axis=-1, keepdims=True)) / norm


def mat_to_quat(R):
    """(..., 3, 3) rotations -> (..., 4) unit quaternions with w >= 0."""
    R = np.asarray(R, dtype=np.float64)
    m = R.reshape(-1, 3, 3)
    out = np.empty((len(m), 4))
    for i, M in enumerate(m):
        tr = np.trace(M)
        if tr > 0:
            s = 2.0 * np.sqrt(tr + 1.0)
            out[i] = [0.25 * s, (M[2, 1] - M[1, 2]) / s, (M[0, 2] - M[2, 0]) / s, (M[1, 0] - M[0, 1]) / s]
        else:
            k = int(np.argmax(np.diag(M)))
            a, b = (k + 1) % 3, (k + 2) % 3
            s = 2.0 * np.sqrt(1.0 + M[k, k] - M[a, a] - M[b, b])
            v = np.empty(4)
            v[0] = (M[b, a] - M[a, b]) / s
            v[1 + k] = 0.25 * s
            v[1 + a] = (M[a, k] + M[k, a]) / s
            v[1 + b] = (M[b, k] + M[k, b]) / s
            out[i] = v
    out *= np.where(out[:, :1] < 0, -1.0, 1.0)
    return (out / np.linalg.norm(out, axis=-1, keepdims=True)).reshape(R.shape[:-2] + (4,))


# --------------------------------------------------------------------------
# 3x3 SVD and polar projection

_PAIRS = ((0, 1), (0, 2), (1, 2))


def svd3(M, max_sweeps=12, tol=1e-15):
    """Batched one-sided Jacobi SVD of 3x3 matrices.

    Returns ``U, S, V`` with ``M = U @ diag(S) @ V.T``, singular values sorted
    in descending order, ``U`` and ``V`` orthogonal (their determinants may be
    -1). Columns of ``U`` belonging to vanishing singular values are completed
    deterministically with cross products.
    """
    M = np.asarray(M)
    batch = M.shape[:-2]
    A = M.reshape(-1, 3, 3).astype(np.float64, copy=True)
    n = len(A)
    V = np.tile(np.eye(3), (n, 1, 1))
    for _ in range(max_sweeps):
        worst = 0.0
        for p, q in _PAIRS:
            ap, aq = A[:, :, p], A[:, :, q]
            alpha = np.einsum("ni,ni->n", ap, ap)
            beta = np.einsum("ni,ni->n", aq, aq)
            gamma = np.einsum("ni,ni->n", ap, aq)
            scale = np.sqrt(alpha * beta)
            rel = np.abs(gamma) / np.where(scale > 0, scale, 1.0)
            worst = max(worst, float(rel.max(initial=0.0)))
            active = (rel > tol) & (gamma != 0)
            g = np.where(active, gamma, 1.0)
            zeta = (beta - alpha) / (2 * g)
            t = np.sign(zeta) / (np.abs(zeta) + np.hypot(1.0, zeta))
            t = np.where(zeta == 0, 1.0, t)
            c = 1 / np.sqrt(1 + t * t)
            s = c * t
            c = np.where(active, c, 1.0)[:, None]
            s = np.where(active, s, 0.0)[:, None]
            Ap, Aq = ap.copy(), aq.copy()
            A[:, :, p] = c * Ap - s * Aq
            A[:, :, q] = s * Ap + c * Aq
            Vp, Vq = V[:, :, p].copy(), V[:, :, q].copy()
            V[:, :, p] = c * Vp - s * Vq
            V[:, :, q] = s * Vp + c * Vq
        if worst <= tol:
            break

    S = np.linalg.norm(A, axis=1)
    order = np.argsort(-S, axis=1, kind="stable")
    S = np.take_along_axis(S, order, axis=1)
    A = np.take_along_axis(A, order[:, None, :], axis=2)
    V = np.take_along_axis(V, order[:, None, :], axis=2)

    U = np.zeros_like(A)
    tiny = SINGULAR_FLOOR * np.maximum(S[:, :1], 1.0)
    ok = S > tiny
    U = np.where(ok[:, None, :], A / np.where(ok, S, 1.0)[:, None, :], 0.0)
    # Complete missing left singular vectors.
    e = np.eye(3)
    no0 = ~ok[:, 0]
    U[no0, :, 0] = e[0]
    no1 = ~ok[:, 1]
    if np.any(no1):
        u0 = U[no1, :, 0]
        pick = np.argmin(np.abs(u0), axis=1)
        cand = e[pick]
        cand = cand - u0 * np.einsum("ni,ni->n", cand, u0)[:, None]
        U[no1, :, 1] = cand / np.linalg.norm(cand, axis=1, keepdims=True)
    no2 = ~ok[:, 2]
    U[no2, :, 2] = np.cross(U[no2, :, 0], U[no2, :, 1])
    return U.reshape(batch + (3, 3)), S.reshape(batch + (3,)), V.reshape(batch + (3, 3))


@dataclass
class PolarFactors:
    U: np.ndarray  # sign-corrected left factor U diag(1, 1, d)
    S: np.ndarray  # signed singular values (s1, s2, d*s3), floored
    V: np.ndarray


def project_so3(R_tilde, return_factors=False):
    """Nearest rotation in Frobenius norm: ``U diag(1, 1, det(U V^T)) V^T``."""
    R_tilde = np.asarray(R_tilde)
    U, S, V = svd3(R_tilde)
    d = np.sign(np.linalg.det(U) * np.linalg.det(V))
    d = np.where(d == 0, 1.0, d)
    Uc = U.copy()
    Uc[..., :, 2] *= d[..., None]
    R = Uc @ np.swapaxes(V, -1, -2)
    if not return_factors:
        return R.astype(R_tilde.dtype, copy=False)
    S = np.maximum(S, SINGULAR_FLOOR)
    S[..., 2] *= d
    return R.astype(R_tilde.dtype, copy=False), PolarFactors(Uc, S, V)


def project_so3_backward(factors, dR):
    """VJP of the polar projection via the orthogonal-Procrustes differential.

    With ``R~ = U' S' V^T`` (sign folded into U' and S'), a perturbation gives
    ``dR = U' K V^T`` where ``K_ij = (M_ij - M_ji) / (s_i + s_j)`` and
    ``M = U'^T dR~ V``. Denominators closer to zero than 1e-6 are clamped
    (keeping their sign) so near-degenerate blends stay finite.
    """
    U, S, V = factors.U, factors.S, factors.V
    A = np.swapaxes(U, -1, -2) @ dR @ V
    denom = S[..., :, None] + S[..., None, :]
    denom = np.where(np.abs(denom) < DENOM_GUARD, np.where(denom < 0, -DENOM_GUARD, DENOM_GUARD), denom)
    B = (A - np.swapaxes(A, -1, -2)) / denom
    return U @ B @ np.swapaxes(V, -1, -2)


# --------------------------------------------------------------------------
# transforms and blending

@dataclass
class JointTransforms:
    rotations: np.ndarray  # (J, 3, 3)
    translations: np.ndarray  # (J, 3)
    has_rotations: bool = True


def _as_rotations(orientations):
    o = np.asarray(orientations)
    if o.shape[-1] == 4:
        return quat_to_mat(o)
    return o


def joint_transforms(frame, canonical, orientations=None, canonical_orientations=None):
    """Per-joint rigid transforms from the canonical pose to ``frame``.

    ``orientations`` may be quaternions (J, 4) or matrices (J, 3, 3). When
    ``canonical_orientations`` is also given the rotation is expressed relative
    to the canonical pose (``R_t R_c^T``), so the rest pose maps to identity.
    Without orientations every rotation is the identity (translation-only).
    """
    frame = np.asarray(frame)
    t = frame - np.asarray(canonical)
    J = frame.shape[-2]
    if orientations is None:
        R = np.broadcast_to(np.eye(3, dtype=frame.dtype), frame.shape[:-1] + (3, 3)).copy()
        return JointTransforms(R, t, has_rotations=False)
    R = _as_rotations(orientations)
    if canonical_orientations is not None:
        R = R @ np.swapaxes(_as_rotations(canonical_orientations), -1, -2)
    assert R.shape[-3] == J
    return JointTransforms(R.astype(frame.dtype, copy=False), t, has_rotations=True)


def blend(weights, transforms):
    """Dense LBS blend: ``t_k = sum_i w_ki t_i`` and ``R~_k = sum_i w_ki R_i``."""
    W = np.asarray(weights)
    t = W @ transforms.translations
    R = np.einsum("kj,jab->kab", W, transforms.rotations)
    return t, R


@dataclass
class SparseWeights:
    """Skinning weights as at most two dominant entries plus a uniform background.

    The fixed logits give every non-bound joint the same logit, so the dense
    sum is reproduced exactly as ``sum_support + bg * (sum_all - sum_support)``.
    """

    index: np.ndarray  # (K, 2)
    weight: np.ndarray  # (K, 2)
    mask: np.ndarray  # (K, 2), 0 where the second slot is unused
    background: np.ndarray  # (K,)

    @classmethod
    def from_logits(cls, logits, tol=1e-9):
        logits = np.asarray(logits, dtype=np.float64)
        K, J = logits.shape
        order = np.argsort(-logits, axis=1, kind="stable")
        W = softmax(logits)
        index = order[:, :2].copy()
        mask = np.ones((K, 2))
        bg_logit = np.empty(K)
        for k in range(K):
            row = logits[k]
            rest = np.delete(row, index[k])
            if rest.size == 0:
                bg_logit[k] = -np.inf
                continue
            if np.ptp(rest) >= tol:
                raise ValueError(f"row {k} has more than two distinct dominant logits")
            bg_logit[k] = rest[0]
            if abs(row[index[k, 1]] - rest[0]) < tol:
                # single bound joint: the second slot belongs to the background
                mask[k, 1] = 0.0
        weight = np.take_along_axis(W, index, axis=1) * mask
        background = np.exp(bg_logit - logits.max(axis=1)) / np.exp(logits - logits.max(axis=1, keepdims=True)).sum(axis=1)
        index[:, 1] = np.where(mask[:, 1] > 0, index[:, 1], index[:, 0])
        return cls(index, weight, mask, background)

    def apply(self, values):
        """Blend per-joint ``values`` (J, ...) into per-primitive values (K, ...)."""
        values = np.asarray(values)
        extra = (1,) * (values.ndim - 1)
        va = values[self.index[:, 0]]
        vb = values[self.index[:, 1]]
        w = self.weight.reshape(self.weight.shape + extra)
        m = self.mask[:, 1].reshape((-1,) + extra)
        bg = self.background.reshape((-1,) + extra)
        support = va + m * vb
        total = values.sum(axis=0)
        return w[:, 0] * va + w[:, 1] * vb + bg * (total - support)


def blend_sparse(sparse, transforms):
    return sparse.apply(transforms.translations), sparse.apply(transforms.rotations)


def softmax(logits, axis=-1):
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


# --------------------------------------------------------------------------
# deformation

@dataclass
class PosedGaussianSet:
    mu: np.ndarray  # (K, 3)
    sigma: np.ndarray  # (K, 3, 3)
    R_blend: np.ndarray  # (K, 3, 3) projected blend rotation
    R_total: np.ndarray  # (K, 3, 3) R_blend @ R_canonical

    @property
    def K(self):
        return len(self.mu)


def deform(mu_c, scales, R_c, t_k, R_blend, pivot=None):
    """Pose canonical Gaussians.

    ``mu = R (mu_c - pivot) + pivot + t`` and ``Sigma = R_tot diag(s^2) R_tot^T``
    with ``R_tot = R R_c``. The pivot is the skinning-weighted canonical joint
    position of each primitive so rotations turn a primitive about its own
    joint rather than the camera origin; ``pivot=None`` uses the origin.
    """
    R_tot = R_blend @ R_c
    if pivot is None:
        mu = np.einsum("kab,kb->ka", R_blend, mu_c) + t_k
    else:
        mu = np.einsum("kab,kb->ka", R_blend, mu_c - pivot) + pivot + t_k
    sigma = (R_tot * (scales * scales)[:, None, :]) @ np.swapaxes(R_tot, -1, -2)
    return PosedGaussianSet(mu, sigma, R_blend, R_tot)


def deform_backward(mu_c, scales, R_c, posed, d_mu, d_sigma, pivot=None):
    """VJP of :func:`deform`. Returns ``(d_scales, d_R_c, d_R_blend, d_t)``.

    ``d_sigma`` is the gradient with respect to every entry of Sigma taken
    independently (no symmetrization assumed).
    """
    R_tot = posed.R_total
    D = scales * scales
    G = d_sigma + np.swapaxes(d_sigma, -1, -2)
    d_R_tot = (G @ R_tot) * D[:, None, :]
    d_D = np.einsum("kai,kab,kbi->ki", R_tot, d_sigma, R_tot)
    d_scales = 2 * scales * d_D
    d_R_blend = d_R_tot @ np.swapaxes(R_c, -1, -2)
    d_R_c = np.swapaxes(posed.R_blend, -1, -2) @ d_R_tot
    offset = mu_c if pivot is None else mu_c - pivot
    d_R_blend = d_R_blend + d_mu[:, :, None] * offset[:, None, :]
    return d_scales, d_R_c, d_R_blend, d_mu
